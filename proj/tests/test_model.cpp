#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "par/model.hpp"
#include "par/synthdata.hpp"

using namespace par;

namespace {

EncoderDims small_dims(int vocab_size) {
  EncoderDims dims;
  dims.image_size = 16;
  dims.patch = 8;
  dims.d_h = 24;
  dims.d = 12;
  dims.vocab_size = vocab_size;
  dims.max_len = 8;
  return dims;
}

Vocabulary small_vocab() {
  Vocabulary v = build_vocabulary(
      {"a photo of a red circle", "an image of a yellow bar", "one green ring"}, 8);
  return v;
}

std::vector<Image> random_images(Rng& rng, int n, int size) {
  std::vector<Image> imgs;
  for (int i = 0; i < n; ++i) {
    Image img(size, size);
    for (double& p : img.pixels) p = rng.uniform();
    imgs.push_back(std::move(img));
  }
  return imgs;
}

}  // namespace

TEST_CASE("tokenizer lowercases, splits, maps UNK and pads") {
  const Vocabulary vocab = small_vocab();
  const std::vector<int> ids = tokenize("A RED Circle!", vocab);
  REQUIRE(static_cast<int>(ids.size()) == vocab.max_len);
  CHECK(ids[0] == vocab.index.at("a"));
  CHECK(ids[1] == vocab.index.at("red"));
  CHECK(ids[2] == vocab.index.at("circle"));
  for (std::size_t i = 3; i < ids.size(); ++i) CHECK(ids[i] == Vocabulary::pad_id);

  const std::vector<int> unk = tokenize("zebra", vocab);
  CHECK(unk[0] == Vocabulary::unk_id);

  const std::vector<int> longcap =
      tokenize("a a a a a a a a a a a a a a a a a a a a", vocab);
  CHECK(static_cast<int>(longcap.size()) == vocab.max_len);
  CHECK(std::count(longcap.begin(), longcap.end(), vocab.index.at("a")) == vocab.max_len);
}

TEST_CASE("vocabulary ids are dense and sorted") {
  const Vocabulary vocab = small_vocab();
  CHECK(vocab.size() == 2 + static_cast<int>(vocab.words.size()));
  CHECK(std::is_sorted(vocab.words.begin(), vocab.words.end()));
  for (std::size_t i = 0; i < vocab.words.size(); ++i) {
    CHECK(vocab.index.at(vocab.words[i]) == 2 + static_cast<int>(i));
  }
}

TEST_CASE("init is deterministic per seed with the documented spread") {
  const EncoderDims dims = small_dims(40);
  const DualEncoderParams a = init_params(33, dims);
  const DualEncoderParams b = init_params(33, dims);
  CHECK(a.to_flat() == b.to_flat());
  CHECK(a.to_flat() != init_params(34, dims).to_flat());

  CHECK(a.img_patch_b.norm() == 0.0);
  CHECK(a.txt_proj_b.norm() == 0.0);
  CHECK(a.temperature_logit == doctest::Approx(std::log(1.0 / 0.07)).epsilon(1e-12));

  // uniform +-1/sqrt(fan_in): stddev = bound/sqrt(3), 20% tolerance
  const double bound = 1.0 / std::sqrt(static_cast<double>(dims.d_h));
  const double want_std = bound / std::sqrt(3.0);
  const double got_std = std::sqrt(a.img_h1_w.array().square().mean());
  CHECK(a.img_h1_w.cwiseAbs().maxCoeff() <= bound);
  CHECK(std::abs(got_std - want_std) < 0.2 * want_std);
}

TEST_CASE("flat round trip preserves every field") {
  const EncoderDims dims = small_dims(30);
  const DualEncoderParams a = init_params(5, dims);
  DualEncoderParams b = zeros_like(a);
  b.from_flat(a.to_flat());
  CHECK(b.to_flat() == a.to_flat());
  CHECK(b.txt_embed == a.txt_embed);
  CHECK(b.temperature_logit == a.temperature_logit);
  CHECK(a.param_count() == a.to_flat().size());
}

TEST_CASE("embeddings are unit rows and identical inputs collide") {
  const Vocabulary vocab = small_vocab();
  const EncoderDims dims = small_dims(vocab.size());
  const DualEncoderParams params = init_params(7, dims);
  Rng rng(71);
  std::vector<Image> imgs = random_images(rng, 3, 16);
  imgs.push_back(imgs[0]);  // duplicate
  const Eigen::MatrixXd emb = encode_images(params, imgs);
  REQUIRE(emb.rows() == 4);
  REQUIRE(emb.cols() == dims.d);
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    CHECK(std::abs(emb.row(i).norm() - 1.0) < 1e-6);
  }
  CHECK((emb.row(0) - emb.row(3)).norm() == 0.0);

  const std::vector<std::vector<int>> toks = {tokenize("a red circle", vocab),
                                              tokenize("a red circle", vocab),
                                              tokenize("one green ring", vocab)};
  const Eigen::MatrixXd temb = encode_texts(params, toks);
  CHECK((temb.row(0) - temb.row(1)).norm() == 0.0);
  CHECK((temb.row(0) - temb.row(2)).norm() > 1e-6);
}

TEST_CASE("all-PAD captions map to the deterministic zero-pool embedding") {
  const Vocabulary vocab = small_vocab();
  const EncoderDims dims = small_dims(vocab.size());
  const DualEncoderParams params = init_params(8, dims);
  const std::vector<int> pad_row(static_cast<std::size_t>(vocab.max_len), Vocabulary::pad_id);
  const Eigen::MatrixXd a = encode_texts(params, {pad_row});
  const Eigen::MatrixXd b = encode_texts(params, {pad_row});
  CHECK(a == b);
  CHECK(a.allFinite());
  // with zero biases the whole tower collapses, and the eps guard keeps
  // the dead row at exactly zero instead of blowing up
  CHECK(a.row(0).norm() == 0.0);

  DualEncoderParams biased = params;
  biased.txt_h1_b.setConstant(0.3);
  const Eigen::MatrixXd c = encode_texts(biased, {pad_row});
  CHECK(std::abs(c.row(0).norm() - 1.0) < 1e-6);
}

TEST_CASE("text pooling ignores token order only through the mean") {
  const Vocabulary vocab = small_vocab();
  const EncoderDims dims = small_dims(vocab.size());
  const DualEncoderParams params = init_params(9, dims);
  std::vector<int> fwd = tokenize("a red circle", vocab);
  std::vector<int> rev = fwd;
  std::reverse(rev.begin(), rev.begin() + 3);  // permute the non-PAD prefix
  const Eigen::MatrixXd emb = encode_texts(params, {fwd, rev});
  CHECK((emb.row(0) - emb.row(1)).norm() < 1e-12);
}

TEST_CASE("token ids out of range are rejected") {
  const Vocabulary vocab = small_vocab();
  const EncoderDims dims = small_dims(vocab.size());
  const DualEncoderParams params = init_params(10, dims);
  std::vector<int> bad(static_cast<std::size_t>(vocab.max_len), Vocabulary::pad_id);
  bad[0] = vocab.size();
  CHECK_THROWS_AS(encode_texts(params, {bad}), std::invalid_argument);
}

TEST_CASE("image encoder is locally Lipschitz under small perturbations") {
  const EncoderDims dims = small_dims(20);
  const DualEncoderParams params = init_params(11, dims);
  Rng rng(12);
  const std::vector<Image> base = random_images(rng, 1, 16);
  const Eigen::MatrixXd e0 = encode_images(params, base);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Image> bumped = base;
    for (double& p : bumped[0].pixels) p += rng.uniform(-1e-4, 1e-4);
    const Eigen::MatrixXd e1 = encode_images(params, bumped);
    CHECK((e1 - e0).norm() < 1e-2);
  }
}

TEST_CASE("snapshot stays frozen while the live params move") {
  const EncoderDims dims = small_dims(20);
  DualEncoderParams live = init_params(13, dims);
  const DualEncoderParams frozen = snapshot(live);
  const Eigen::VectorXd before = frozen.to_flat();
  live.img_h1_w.array() += 0.25;
  live.temperature_logit = 0.0;
  CHECK(frozen.to_flat() == before);
  CHECK(live.to_flat() != before);
}

TEST_CASE("checkpoints round-trip bit-exactly with their sidecar") {
  const std::string path =
      "/tmp/par_test_ckpt_" + std::to_string(getpid()) + "/model.bin";
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());

  Checkpoint ckpt;
  ckpt.vocab = small_vocab();
  ckpt.params = init_params(14, small_dims(ckpt.vocab.size()));
  ckpt.params.temperature_logit = 1.25;
  ckpt.temperature_mode = "fixed";
  ckpt.seed = 907;
  ckpt.config_hash = "deadbeefdeadbeef";
  save_checkpoint(ckpt, path);

  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.params.to_flat() == ckpt.params.to_flat());
  CHECK(loaded.params.dims == ckpt.params.dims);
  CHECK(loaded.vocab.words == ckpt.vocab.words);
  CHECK(loaded.vocab.max_len == ckpt.vocab.max_len);
  CHECK(loaded.temperature_mode == "fixed");
  CHECK(loaded.seed == 907);
  CHECK(loaded.config_hash == "deadbeefdeadbeef");
  for (const auto& [word, id] : ckpt.vocab.index) {
    CHECK(loaded.vocab.index.at(word) == id);
  }

  const std::string h1 = checkpoint_hash(path);
  save_checkpoint(loaded, path + ".copy");
  CHECK(checkpoint_hash(path + ".copy") == h1);
  std::filesystem::remove_all(std::filesystem::path(path).parent_path());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string dir = "/tmp/par_test_ckpt_bad_" + std::to_string(getpid());
  std::filesystem::create_directories(dir);
  Checkpoint ckpt;
  ckpt.vocab = small_vocab();
  ckpt.params = init_params(15, small_dims(ckpt.vocab.size()));
  const std::string path = dir + "/model.bin";
  save_checkpoint(ckpt, path);

  // truncation
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

  // bad magic
  save_checkpoint(ckpt, path);
  {
    std::ofstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.write("NOTMAGIC", 8);
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(dir + "/missing.bin"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("forward pass on rendered corpus samples stays finite") {
  CorpusSpec spec;
  spec.n_train = 8;
  spec.n_clean = 4;
  spec.n_eval = 4;
  spec.image_size = 32;
  spec.seed = 3;
  const std::vector<Sample> corpus = build_corpus(spec);
  Vocabulary vocab = build_vocabulary(vocabulary_texts(corpus));
  EncoderDims dims;
  dims.vocab_size = vocab.size();
  const DualEncoderParams params = init_params(16, dims);
  std::vector<Image> imgs;
  std::vector<std::vector<int>> toks;
  for (const Sample& s : corpus) {
    imgs.push_back(s.image);
    toks.push_back(tokenize(s.caption, vocab));
  }
  CHECK(encode_images(params, imgs).allFinite());
  CHECK(encode_texts(params, toks).allFinite());
}
