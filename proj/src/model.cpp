#include "par/model.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace par {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace {
constexpr double kNormEps = 1e-8;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string word;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      word.push_back(static_cast<char>(std::tolower(u)));
    } else if (!word.empty()) {
      words.push_back(std::move(word));
      word.clear();
    }
  }
  if (!word.empty()) words.push_back(std::move(word));
  return words;
}

Vocabulary build_vocabulary(const std::vector<std::string>& texts, int max_len) {
  std::set<std::string> unique;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) unique.insert(std::move(w));
  }
  Vocabulary vocab;
  vocab.max_len = max_len;
  vocab.words.assign(unique.begin(), unique.end());
  for (std::size_t i = 0; i < vocab.words.size(); ++i) {
    vocab.index.emplace(vocab.words[i], static_cast<int>(i) + 2);
  }
  return vocab;
}

std::vector<int> tokenize(const std::string& caption, const Vocabulary& vocab) {
  std::vector<int> ids(static_cast<std::size_t>(vocab.max_len), Vocabulary::pad_id);
  std::size_t n = 0;
  for (const auto& w : split_words(caption)) {
    if (n >= ids.size()) break;
    const auto it = vocab.index.find(w);
    ids[n++] = it == vocab.index.end() ? Vocabulary::unk_id : it->second;
  }
  return ids;
}

namespace {

// Visits every weight field in the declared (flat-vector) order.
template <typename Params, typename F>
void visit_fields(Params& p, F&& f) {
  f(p.img_patch_w);
  f(p.img_patch_b);
  f(p.img_h1_w);
  f(p.img_h1_b);
  f(p.img_h2_w);
  f(p.img_h2_b);
  f(p.img_proj_w);
  f(p.img_proj_b);
  f(p.txt_embed);
  f(p.txt_h1_w);
  f(p.txt_h1_b);
  f(p.txt_h2_w);
  f(p.txt_h2_b);
  f(p.txt_proj_w);
  f(p.txt_proj_b);
}

void allocate(DualEncoderParams& p) {
  const auto& d = p.dims;
  if (d.image_size <= 0 || d.patch <= 0 || d.d_h <= 0 || d.d <= 0 || d.vocab_size < 2 ||
      d.max_len <= 0) {
    throw std::invalid_argument("DualEncoderParams: non-positive dimension");
  }
  if (d.image_size % d.patch != 0) {
    throw std::invalid_argument("DualEncoderParams: image_size must be a multiple of patch");
  }
  p.img_patch_w.setZero(d.d_h, d.patch_dim());
  p.img_patch_b.setZero(d.d_h);
  p.img_h1_w.setZero(d.d_h, d.d_h);
  p.img_h1_b.setZero(d.d_h);
  p.img_h2_w.setZero(d.d_h, d.d_h);
  p.img_h2_b.setZero(d.d_h);
  p.img_proj_w.setZero(d.d, d.d_h);
  p.img_proj_b.setZero(d.d);
  p.txt_embed.setZero(d.vocab_size, d.d_h);
  p.txt_h1_w.setZero(d.d_h, d.d_h);
  p.txt_h1_b.setZero(d.d_h);
  p.txt_h2_w.setZero(d.d_h, d.d_h);
  p.txt_h2_b.setZero(d.d_h);
  p.txt_proj_w.setZero(d.d, d.d_h);
  p.txt_proj_b.setZero(d.d);
}

}  // namespace

Eigen::Index DualEncoderParams::param_count() const {
  Eigen::Index n = 1;  // temperature_logit
  visit_fields(*this, [&n](const auto& field) { n += field.size(); });
  return n;
}

Eigen::VectorXd DualEncoderParams::to_flat() const {
  Eigen::VectorXd flat(param_count());
  Eigen::Index off = 0;
  visit_fields(*this, [&](const auto& field) {
    flat.segment(off, field.size()) = Eigen::Map<const Eigen::VectorXd>(field.data(), field.size());
    off += field.size();
  });
  flat[off] = temperature_logit;
  return flat;
}

void DualEncoderParams::from_flat(const Eigen::VectorXd& flat) {
  if (flat.size() != param_count()) {
    throw std::invalid_argument("from_flat: expected " + std::to_string(param_count()) +
                                " values, got " + std::to_string(flat.size()));
  }
  Eigen::Index off = 0;
  visit_fields(*this, [&](auto& field) {
    Eigen::Map<Eigen::VectorXd>(field.data(), field.size()) = flat.segment(off, field.size());
    off += field.size();
  });
  temperature_logit = flat[off];
}

DualEncoderParams init_params(std::uint64_t seed, const EncoderDims& dims) {
  DualEncoderParams p;
  p.dims = dims;
  allocate(p);
  Rng rng(seed);
  auto fill_uniform = [&rng](Eigen::MatrixXd& w, int fan_in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
  };
  fill_uniform(p.img_patch_w, dims.patch_dim());
  fill_uniform(p.img_h1_w, dims.d_h);
  fill_uniform(p.img_h2_w, dims.d_h);
  fill_uniform(p.img_proj_w, dims.d_h);
  fill_uniform(p.txt_embed, dims.d_h);
  fill_uniform(p.txt_h1_w, dims.d_h);
  fill_uniform(p.txt_h2_w, dims.d_h);
  fill_uniform(p.txt_proj_w, dims.d_h);
  p.temperature_logit = std::log(1.0 / 0.07);
  return p;
}

DualEncoderParams zeros_like(const DualEncoderParams& params) {
  DualEncoderParams p;
  p.dims = params.dims;
  allocate(p);
  p.temperature_logit = 0.0;
  return p;
}

DualEncoderParams snapshot(const DualEncoderParams& params) { return params; }

namespace {

void head_forward(const Eigen::MatrixXd& pooled, const Eigen::MatrixXd& h1_w,
                  const Eigen::VectorXd& h1_b, const Eigen::MatrixXd& h2_w,
                  const Eigen::VectorXd& h2_b, const Eigen::MatrixXd& proj_w,
                  const Eigen::VectorXd& proj_b, const char* tower, Eigen::MatrixXd& a1,
                  Eigen::MatrixXd& a2, Eigen::MatrixXd& z, Eigen::VectorXd& norms,
                  Eigen::MatrixXd& emb) {
  a1 = ((pooled * h1_w.transpose()).rowwise() + h1_b.transpose()).array().tanh();
  check_finite(a1, (std::string(tower) + "/hidden1").c_str());
  a2 = ((a1 * h2_w.transpose()).rowwise() + h2_b.transpose()).array().tanh();
  check_finite(a2, (std::string(tower) + "/hidden2").c_str());
  z = (a2 * proj_w.transpose()).rowwise() + proj_b.transpose();
  check_finite(z, (std::string(tower) + "/projection").c_str());
  const Eigen::Index B = z.rows();
  norms.resize(B);
  emb.resize(B, z.cols());
  for (Eigen::Index i = 0; i < B; ++i) {
    norms[i] = z.row(i).norm();
    emb.row(i) = z.row(i) / std::max(norms[i], kNormEps);
  }
}

// Backprop through row normalization e = z / max(|z|, eps).
Eigen::MatrixXd norm_backward(const Eigen::MatrixXd& emb, const Eigen::VectorXd& norms,
                              const Eigen::MatrixXd& d_emb) {
  Eigen::MatrixXd dz(d_emb.rows(), d_emb.cols());
  for (Eigen::Index i = 0; i < d_emb.rows(); ++i) {
    if (norms[i] < kNormEps) {
      dz.row(i) = d_emb.row(i) / kNormEps;
    } else {
      const double dot = emb.row(i).dot(d_emb.row(i));
      dz.row(i) = (d_emb.row(i) - dot * emb.row(i)) / norms[i];
    }
  }
  return dz;
}

struct HeadGrads {
  Eigen::MatrixXd d_pooled;
};

HeadGrads head_backward(const Eigen::MatrixXd& pooled, const Eigen::MatrixXd& a1,
                        const Eigen::MatrixXd& a2, const Eigen::MatrixXd& emb,
                        const Eigen::VectorXd& norms, const Eigen::MatrixXd& d_emb,
                        const Eigen::MatrixXd& h1_w, const Eigen::MatrixXd& h2_w,
                        const Eigen::MatrixXd& proj_w, Eigen::MatrixXd& g_h1_w,
                        Eigen::VectorXd& g_h1_b, Eigen::MatrixXd& g_h2_w, Eigen::VectorXd& g_h2_b,
                        Eigen::MatrixXd& g_proj_w, Eigen::VectorXd& g_proj_b) {
  const Eigen::MatrixXd dz = norm_backward(emb, norms, d_emb);
  g_proj_w.noalias() += dz.transpose() * a2;
  g_proj_b += dz.colwise().sum().transpose();
  const Eigen::MatrixXd da2 = dz * proj_w;
  const Eigen::MatrixXd dp2 = da2.array() * (1.0 - a2.array().square());
  g_h2_w.noalias() += dp2.transpose() * a1;
  g_h2_b += dp2.colwise().sum().transpose();
  const Eigen::MatrixXd da1 = dp2 * h2_w;
  const Eigen::MatrixXd dp1 = da1.array() * (1.0 - a1.array().square());
  g_h1_w.noalias() += dp1.transpose() * pooled;
  g_h1_b += dp1.colwise().sum().transpose();
  return {dp1 * h1_w};
}

}  // namespace

ImageCache image_forward(const DualEncoderParams& params, const std::vector<Image>& images) {
  const auto& d = params.dims;
  if (images.empty()) throw std::invalid_argument("image_forward: empty batch");
  const Eigen::Index B = static_cast<Eigen::Index>(images.size());
  const int grid = d.patches_per_axis();
  const int n_p = d.n_patches();
  const int span = d.image_size - d.patch;
  std::vector<int> offs(grid);
  for (int j = 0; j < grid; ++j) offs[j] = std::min(j * d.stride(), span);
  ImageCache cache;
  cache.patches.resize(B * n_p, d.patch_dim());
  for (Eigen::Index b = 0; b < B; ++b) {
    const Image& img = images[b];
    if (img.width != d.image_size || img.height != d.image_size) {
      throw std::invalid_argument("image_forward: image " + std::to_string(b) + " is " +
                                  std::to_string(img.width) + "x" + std::to_string(img.height) +
                                  ", expected " + std::to_string(d.image_size));
    }
    for (int py = 0; py < grid; ++py) {
      for (int px = 0; px < grid; ++px) {
        const Eigen::Index row = b * n_p + py * grid + px;
        for (int y = 0; y < d.patch; ++y) {
          for (int x = 0; x < d.patch; ++x) {
            for (int c = 0; c < 3; ++c) {
              cache.patches(row, (y * d.patch + x) * 3 + c) =
                  img.at(offs[px] + x, offs[py] + y, c);
            }
          }
        }
      }
    }
  }
  cache.a0 = ((cache.patches * params.img_patch_w.transpose()).rowwise() +
              params.img_patch_b.transpose())
                 .array()
                 .tanh();
  check_finite(cache.a0, "image_encoder/patch_embed");
  cache.pooled.resize(B, d.d_h);
  cache.pool_arg.resize(B, d.d_h);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto block = cache.a0.middleRows(b * n_p, n_p);
    for (Eigen::Index f = 0; f < d.d_h; ++f) {
      Eigen::Index arg = 0;
      cache.pooled(b, f) = block.col(f).maxCoeff(&arg);
      cache.pool_arg(b, f) = static_cast<int>(arg);
    }
  }
  head_forward(cache.pooled, params.img_h1_w, params.img_h1_b, params.img_h2_w, params.img_h2_b,
               params.img_proj_w, params.img_proj_b, "image_encoder", cache.a1, cache.a2, cache.z,
               cache.norms, cache.emb);
  return cache;
}

TextCache text_forward(const DualEncoderParams& params,
                       const std::vector<std::vector<int>>& tokens) {
  const auto& d = params.dims;
  if (tokens.empty()) throw std::invalid_argument("text_forward: empty batch");
  const Eigen::Index B = static_cast<Eigen::Index>(tokens.size());
  TextCache cache;
  cache.tokens = tokens;
  cache.pooled.setZero(B, d.d_h);
  cache.counts.setZero(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    if (static_cast<int>(tokens[b].size()) > d.max_len) {
      throw std::invalid_argument("text_forward: sequence longer than max_len");
    }
    for (int id : tokens[b]) {
      if (id < 0 || id >= d.vocab_size) {
        throw std::invalid_argument("text_forward: token id " + std::to_string(id) +
                                    " outside vocabulary of size " + std::to_string(d.vocab_size));
      }
      if (id == Vocabulary::pad_id) continue;
      cache.pooled.row(b) += params.txt_embed.row(id);
      cache.counts[b] += 1.0;
    }
    if (cache.counts[b] > 0.0) cache.pooled.row(b) /= cache.counts[b];
  }
  check_finite(cache.pooled, "text_encoder/embed_pool");
  head_forward(cache.pooled, params.txt_h1_w, params.txt_h1_b, params.txt_h2_w, params.txt_h2_b,
               params.txt_proj_w, params.txt_proj_b, "text_encoder", cache.a1, cache.a2, cache.z,
               cache.norms, cache.emb);
  return cache;
}

void image_backward(const DualEncoderParams& params, const ImageCache& cache,
                    const Eigen::MatrixXd& d_emb, DualEncoderParams& grad) {
  const auto& d = params.dims;
  const Eigen::Index B = cache.emb.rows();
  const int n_p = d.n_patches();
  const HeadGrads hg =
      head_backward(cache.pooled, cache.a1, cache.a2, cache.emb, cache.norms, d_emb,
                    params.img_h1_w, params.img_h2_w, params.img_proj_w, grad.img_h1_w,
                    grad.img_h1_b, grad.img_h2_w, grad.img_h2_b, grad.img_proj_w, grad.img_proj_b);
  Eigen::MatrixXd dp0 = Eigen::MatrixXd::Zero(B * n_p, d.d_h);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index f = 0; f < d.d_h; ++f) {
      dp0(b * n_p + cache.pool_arg(b, f), f) = hg.d_pooled(b, f);
    }
  }
  dp0.array() *= 1.0 - cache.a0.array().square();
  grad.img_patch_w.noalias() += dp0.transpose() * cache.patches;
  grad.img_patch_b += dp0.colwise().sum().transpose();
}

void text_backward(const DualEncoderParams& params, const TextCache& cache,
                   const Eigen::MatrixXd& d_emb, DualEncoderParams& grad) {
  const HeadGrads hg =
      head_backward(cache.pooled, cache.a1, cache.a2, cache.emb, cache.norms, d_emb,
                    params.txt_h1_w, params.txt_h2_w, params.txt_proj_w, grad.txt_h1_w,
                    grad.txt_h1_b, grad.txt_h2_w, grad.txt_h2_b, grad.txt_proj_w, grad.txt_proj_b);
  for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(cache.tokens.size()); ++b) {
    if (cache.counts[b] == 0.0) continue;
    const auto row = hg.d_pooled.row(b) / cache.counts[b];
    for (int id : cache.tokens[b]) {
      if (id != Vocabulary::pad_id) grad.txt_embed.row(id) += row;
    }
  }
}

Eigen::MatrixXd encode_images(const DualEncoderParams& params, const std::vector<Image>& images) {
  return image_forward(params, images).emb;
}

Eigen::MatrixXd encode_texts(const DualEncoderParams& params,
                             const std::vector<std::vector<int>>& tokens) {
  return text_forward(params, tokens).emb;
}

namespace {
constexpr char kMagic[8] = {'P', 'A', 'R', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  const auto& d = ckpt.params.dims;
  const std::uint32_t header[6] = {
      static_cast<std::uint32_t>(d.image_size), static_cast<std::uint32_t>(d.patch),
      static_cast<std::uint32_t>(d.d_h),        static_cast<std::uint32_t>(d.d),
      static_cast<std::uint32_t>(d.vocab_size), static_cast<std::uint32_t>(d.max_len)};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  const Eigen::VectorXd flat = ckpt.params.to_flat();
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
  out.close();

  nlohmann::json side;
  side["config_hash"] = ckpt.config_hash;
  side["seed"] = ckpt.seed;
  side["temperature_mode"] = ckpt.temperature_mode;
  side["vocab"] = ckpt.vocab.words;
  side["max_len"] = ckpt.vocab.max_len;
  std::ofstream sidecar(path + ".json");
  if (!sidecar) throw std::runtime_error("save_checkpoint: cannot open " + path + ".json");
  sidecar << side.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  std::uint32_t header[6];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (in.gcount() != sizeof(header)) {
    throw std::runtime_error("load_checkpoint: truncated header in " + path);
  }
  Checkpoint ckpt;
  ckpt.params.dims.image_size = static_cast<int>(header[0]);
  ckpt.params.dims.patch = static_cast<int>(header[1]);
  ckpt.params.dims.d_h = static_cast<int>(header[2]);
  ckpt.params.dims.d = static_cast<int>(header[3]);
  ckpt.params.dims.vocab_size = static_cast<int>(header[4]);
  ckpt.params.dims.max_len = static_cast<int>(header[5]);
  allocate(ckpt.params);
  Eigen::VectorXd flat(ckpt.params.param_count());
  in.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(flat.size() * sizeof(double))) {
    throw std::runtime_error("load_checkpoint: truncated weights in " + path);
  }
  ckpt.params.from_flat(flat);

  std::ifstream sidecar(path + ".json");
  if (!sidecar) throw std::runtime_error("load_checkpoint: missing sidecar " + path + ".json");
  nlohmann::json side = nlohmann::json::parse(sidecar);
  ckpt.config_hash = side.at("config_hash").get<std::string>();
  ckpt.seed = side.at("seed").get<std::uint64_t>();
  ckpt.temperature_mode = side.at("temperature_mode").get<std::string>();
  ckpt.vocab.max_len = side.at("max_len").get<int>();
  ckpt.vocab.words = side.at("vocab").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < ckpt.vocab.words.size(); ++i) {
    ckpt.vocab.index.emplace(ckpt.vocab.words[i], static_cast<int>(i) + 2);
  }
  if (ckpt.vocab.size() != ckpt.params.dims.vocab_size) {
    throw std::runtime_error("load_checkpoint: sidecar vocabulary size disagrees with header");
  }
  return ckpt;
}

std::string checkpoint_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint_hash: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    if (in.eof()) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace par
