#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "par/synthdata.hpp"

using namespace par;

namespace {

CorpusSpec tiny_spec(std::uint64_t seed) {
  CorpusSpec spec;
  spec.n_train = 96;
  spec.n_clean = 48;
  spec.n_eval = 48;
  spec.image_size = 32;
  spec.seed = seed;
  return spec;
}

std::string temp_dir(const char* tag) {
  const std::string dir = std::string("/tmp/par_test_") + tag + "_" + std::to_string(getpid());
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("class table enumerates 6 shapes x 8 colors") {
  const auto& classes = concept_classes();
  REQUIRE(classes.size() == 48);
  std::set<std::string> names;
  for (const auto& c : classes) names.insert(c.class_name);
  CHECK(names.size() == 48);
  CHECK(class_index("yellow bar") >= 0);
  CHECK(classes[class_index("red circle")].shape == "circle");
  CHECK(classes[class_index("red circle")].rgb[0] == 1.0);
  CHECK(classes[class_index("red circle")].rgb[1] == 0.0);
  CHECK_THROWS_AS(class_index("mauve dodecahedron"), std::invalid_argument);
}

TEST_CASE("caption templates instantiate with the class name") {
  REQUIRE(caption_templates().size() == 8);
  for (int id = 0; id < 8; ++id) {
    const std::string cap = instantiate_template(id, "green ring");
    CHECK(cap.find("green ring") != std::string::npos);
    CHECK(cap.find("{}") == std::string::npos);
  }
}

TEST_CASE("render_sample is deterministic and paints the class color") {
  const int red_circle = class_index("red circle");
  Rng a(5);
  Rng b(5);
  const Sample s1 = render_sample(red_circle, a, 32);
  const Sample s2 = render_sample(red_circle, b, 32);
  CHECK(s1.image.pixels == s2.image.pixels);
  CHECK(s1.caption == s2.caption);
  CHECK(s1.caption.find("red circle") != std::string::npos);

  // the shape census: strongly red pixels cover at least 5% of the canvas
  int strong = 0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      if (s1.image.at(x, y, 0) > 0.9 && s1.image.at(x, y, 1) < 0.35 &&
          s1.image.at(x, y, 2) < 0.35) {
        ++strong;
      }
    }
  }
  CHECK(strong >= 32 * 32 / 20);
}

TEST_CASE("corpus splits are disjoint index ranges with exact sizes") {
  const CorpusSpec spec = tiny_spec(3);
  const std::vector<Sample> corpus = build_corpus(spec);
  REQUIRE(corpus.size() == 96 + 48 + 48);
  for (int i = 0; i < 96; ++i) CHECK(corpus[i].split == Split::train);
  for (int i = 96; i < 144; ++i) CHECK(corpus[i].split == Split::clean);
  for (int i = 144; i < 192; ++i) CHECK(corpus[i].split == Split::eval);
  for (const Sample& s : corpus) CHECK_FALSE(s.poisoned);
}

TEST_CASE("stratified corpora balance classes in 48-blocks") {
  const std::vector<Sample> corpus = build_corpus(tiny_spec(4));
  std::map<int, int> histogram;
  for (const Sample& s : corpus) ++histogram[s.class_id];
  REQUIRE(histogram.size() == 48);
  for (const auto& [cls, n] : histogram) CHECK(n == 4);  // 192 / 48
}

TEST_CASE("corpus build is bit-reproducible per seed") {
  const std::vector<Sample> a = build_corpus(tiny_spec(9));
  const std::vector<Sample> b = build_corpus(tiny_spec(9));
  const std::vector<Sample> c = build_corpus(tiny_spec(10));
  REQUIRE(a.size() == b.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].image.pixels == b[i].image.pixels);
    REQUIRE(a[i].caption == b[i].caption);
    REQUIRE(a[i].class_id == b[i].class_id);
    any_diff |= a[i].image.pixels != c[i].image.pixels;
  }
  CHECK(any_diff);
}

TEST_CASE("poison count uses round-half-to-even") {
  std::vector<Sample> corpus;
  Rng rng(1);
  for (int i = 0; i < 4000; ++i) {
    Sample s = render_sample(i % 48, rng, 16);
    s.split = Split::train;
    corpus.push_back(std::move(s));
  }
  PoisonConfig cfg;
  cfg.trigger = default_trigger_spec(TriggerVariant::badnet_stripes);
  cfg.trigger.patch_size = 4;

  cfg.rate = 0.005;  // 4000 * 0.005 = 20
  CHECK(poison_corpus(corpus, cfg).poisoned_indices.size() == 20);

  corpus.resize(700);
  cfg.rate = 0.005;  // 3.5 -> 4 (half to even)
  CHECK(poison_corpus(corpus, cfg).poisoned_indices.size() == 4);
  corpus.resize(500);
  cfg.rate = 0.005;  // 2.5 -> 2 (half to even)
  CHECK(poison_corpus(corpus, cfg).poisoned_indices.size() == 2);
}

TEST_CASE("a tiny positive rate still poisons one sample") {
  std::vector<Sample> corpus;
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    Sample s = render_sample(i % 48, rng, 16);
    s.split = Split::train;
    corpus.push_back(std::move(s));
  }
  PoisonConfig cfg;
  cfg.trigger = default_trigger_spec(TriggerVariant::blended_random);
  cfg.rate = 1e-6;
  CHECK(poison_corpus(corpus, cfg).poisoned_indices.size() == 1);
  cfg.rate = 0.0;
  CHECK(poison_corpus(corpus, cfg).poisoned_indices.empty());
  cfg.rate = 1.0;
  CHECK(poison_corpus(corpus, cfg).poisoned_indices.size() == 100);
}

TEST_CASE("poisoning touches exactly the selected train samples") {
  const std::vector<Sample> corpus = build_corpus(tiny_spec(6));
  PoisonConfig cfg;
  cfg.trigger = default_trigger_spec(TriggerVariant::badnet_stripes);
  cfg.rate = 0.125;  // 12 of 96
  cfg.seed = 17;
  const PoisonResult result = poison_corpus(corpus, cfg);
  REQUIRE(result.samples.size() == corpus.size());
  REQUIRE(result.poisoned_indices.size() == 12);
  CHECK(std::is_sorted(result.poisoned_indices.begin(), result.poisoned_indices.end()));

  std::set<int> chosen(result.poisoned_indices.begin(), result.poisoned_indices.end());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Sample& before = corpus[i];
    const Sample& after = result.samples[i];
    if (chosen.count(static_cast<int>(i))) {
      CHECK(before.split == Split::train);
      CHECK(after.poisoned);
      CHECK(after.meta.present);
      CHECK(after.caption.find(cfg.target_label) != std::string::npos);
      CHECK(after.image.pixels != before.image.pixels);
    } else {
      REQUIRE(after.image.pixels == before.image.pixels);
      REQUIRE(after.caption == before.caption);
      REQUIRE_FALSE(after.poisoned);
    }
  }
}

TEST_CASE("poisoning is deterministic per seed") {
  const std::vector<Sample> corpus = build_corpus(tiny_spec(6));
  PoisonConfig cfg;
  cfg.trigger = default_trigger_spec(TriggerVariant::badnet_random);
  cfg.rate = 0.0625;
  cfg.seed = 8;
  const PoisonResult a = poison_corpus(corpus, cfg);
  const PoisonResult b = poison_corpus(corpus, cfg);
  CHECK(a.poisoned_indices == b.poisoned_indices);
  for (int idx : a.poisoned_indices) {
    CHECK(a.samples[idx].image.pixels == b.samples[idx].image.pixels);
    CHECK(a.samples[idx].caption == b.samples[idx].caption);
  }
  cfg.seed = 9;
  const PoisonResult c = poison_corpus(corpus, cfg);
  CHECK(a.poisoned_indices != c.poisoned_indices);
}

TEST_CASE("save and load round-trip the manifest and quantized pixels") {
  const std::string dir = temp_dir("corpus");
  CorpusSpec spec = tiny_spec(12);
  spec.n_train = 24;
  spec.n_clean = 12;
  spec.n_eval = 12;
  std::vector<Sample> corpus = build_corpus(spec);
  PoisonConfig cfg;
  cfg.trigger = default_trigger_spec(TriggerVariant::badnet_stripes);
  cfg.rate = 0.125;
  corpus = poison_corpus(corpus, cfg).samples;
  save_corpus(corpus, dir);
  const std::vector<Sample> loaded = load_corpus(dir);
  REQUIRE(loaded.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    REQUIRE(loaded[i].caption == corpus[i].caption);
    REQUIRE(loaded[i].class_id == corpus[i].class_id);
    REQUIRE(loaded[i].split == corpus[i].split);
    REQUIRE(loaded[i].poisoned == corpus[i].poisoned);
    REQUIRE(loaded[i].meta.present == corpus[i].meta.present);
    REQUIRE(loaded[i].image.pixels.size() == corpus[i].image.pixels.size());
    for (std::size_t p = 0; p < corpus[i].image.pixels.size(); ++p) {
      // PPM quantizes to 8 bits; half a quantization step of slack
      REQUIRE(std::abs(loaded[i].image.pixels[p] - corpus[i].image.pixels[p]) <= 0.5 / 255.0);
    }
  }
  // a second save/load is byte-stable
  const std::string dir2 = temp_dir("corpus2");
  save_corpus(loaded, dir2);
  const std::vector<Sample> again = load_corpus(dir2);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    REQUIRE(again[i].image.pixels == loaded[i].image.pixels);
  }
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("vocabulary census covers captions and all class prompts") {
  const std::vector<Sample> corpus = build_corpus(tiny_spec(13));
  const std::vector<std::string> texts = vocabulary_texts(corpus);
  CHECK(std::is_sorted(texts.begin(), texts.end()));
  CHECK(std::adjacent_find(texts.begin(), texts.end()) == texts.end());
  for (const Sample& s : corpus) {
    CHECK(std::binary_search(texts.begin(), texts.end(), s.caption));
  }
  for (const auto& cc : concept_classes()) {
    for (int id = 0; id < 8; ++id) {
      CHECK(std::binary_search(texts.begin(), texts.end(),
                               instantiate_template(id, cc.class_name)));
    }
  }
}

TEST_CASE("split_of filters by split in order") {
  const std::vector<Sample> corpus = build_corpus(tiny_spec(14));
  const std::vector<Sample> train = split_of(corpus, Split::train);
  const std::vector<Sample> eval = split_of(corpus, Split::eval);
  CHECK(train.size() == 96);
  CHECK(eval.size() == 48);
  CHECK(split_from_string(to_string(Split::clean)) == Split::clean);
}
