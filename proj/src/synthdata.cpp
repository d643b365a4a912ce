#include "par/synthdata.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace par {

namespace {

const char* kShapes[6] = {"circle", "square", "triangle", "cross", "ring", "bar"};
const char* kColors[8] = {"black", "blue", "green", "cyan", "red", "magenta", "yellow", "white"};

std::vector<ConceptClass> make_classes() {
  std::vector<ConceptClass> classes;
  classes.reserve(48);
  for (int s = 0; s < 6; ++s) {
    for (int c = 0; c < 8; ++c) {
      ConceptClass cc;
      cc.shape = kShapes[s];
      cc.color = kColors[c];
      cc.class_name = cc.color + " " + cc.shape;
      cc.rgb[0] = (c >> 2) & 1;
      cc.rgb[1] = (c >> 1) & 1;
      cc.rgb[2] = c & 1;
      classes.push_back(cc);
    }
  }
  return classes;
}

}  // namespace

const std::vector<ConceptClass>& concept_classes() {
  static const std::vector<ConceptClass> classes = make_classes();
  return classes;
}

int class_index(const std::string& class_name) {
  const auto& classes = concept_classes();
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].class_name == class_name) return static_cast<int>(i);
  }
  throw std::invalid_argument("unknown class name: " + class_name);
}

const std::vector<std::string>& caption_templates() {
  static const std::vector<std::string> templates = {
      "a photo of a {}",
      "an image of a {}",
      "a small {} on a plain background",
      "a large {} in the frame",
      "a centered photo of a {}",
      "a blurry picture of a {}",
      "one {} on a gray backdrop",
      "a bright scene with a {}",
  };
  return templates;
}

std::string instantiate_template(int id, const std::string& class_name) {
  const auto& templates = caption_templates();
  if (id < 0 || id >= static_cast<int>(templates.size())) {
    throw std::invalid_argument("template id out of range: " + std::to_string(id));
  }
  std::string out = templates[id];
  const auto pos = out.find("{}");
  out.replace(pos, 2, class_name);
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::clean: return "clean";
    case Split::eval: return "eval";
  }
  throw std::logic_error("to_string: bad Split");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "clean") return Split::clean;
  if (s == "eval") return Split::eval;
  throw std::invalid_argument("unknown split: " + s);
}

namespace {

bool shape_hit(const std::string& shape, double dx, double dy, double h) {
  const double r2 = dx * dx + dy * dy;
  if (shape == "circle") return r2 <= h * h;
  if (shape == "square") return std::max(std::abs(dx), std::abs(dy)) <= 0.85 * h;
  if (shape == "triangle") {
    // apex up, base down; isosceles with half-base 0.9h at dy = h
    if (dy < -h || dy > h) return false;
    return std::abs(dx) <= 0.9 * h * (dy + h) / (2.0 * h);
  }
  if (shape == "cross") {
    return (std::abs(dx) <= 0.3 * h && std::abs(dy) <= h) ||
           (std::abs(dy) <= 0.3 * h && std::abs(dx) <= h);
  }
  if (shape == "ring") {
    const double inner = 0.55 * h;
    return r2 <= h * h && r2 >= inner * inner;
  }
  if (shape == "bar") return std::abs(dy) <= 0.3 * h && std::abs(dx) <= h;
  throw std::logic_error("shape_hit: unknown shape " + shape);
}

}  // namespace

Sample render_sample(int class_id, Rng& rng, int size) {
  if (size < 16) throw std::invalid_argument("render_sample: size must be >= 16");
  const auto& cc = concept_classes().at(class_id);

  double bg[3];
  for (double& v : bg) v = rng.uniform(0.25, 0.75);
  const double h = rng.uniform(0.20, 0.35) * size;
  const double cx = rng.uniform(h + 1.0, size - 1.0 - h);
  const double cy = rng.uniform(h + 1.0, size - 1.0 - h);
  const int template_id = static_cast<int>(rng.uniform_int(
      static_cast<std::int64_t>(caption_templates().size())));

  Sample s;
  s.class_id = class_id;
  s.caption = instantiate_template(template_id, cc.class_name);
  s.image = Image(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = (x + 0.5) - cx;
      const double dy = (y + 0.5) - cy;
      if (shape_hit(cc.shape, dx, dy, h)) {
        for (int c = 0; c < 3; ++c) s.image.at(x, y, c) = cc.rgb[c];
      } else {
        const double jitter = rng.uniform(-0.03, 0.03);
        for (int c = 0; c < 3; ++c) s.image.at(x, y, c) = bg[c] + jitter;
      }
    }
  }
  clamp01(s.image);
  return s;
}

std::vector<Sample> build_corpus(const CorpusSpec& spec) {
  if (spec.n_train < 1) throw std::invalid_argument("build_corpus: n_train must be >= 1");
  if (spec.n_clean < 0 || spec.n_eval < 0) {
    throw std::invalid_argument("build_corpus: negative split size");
  }
  const int n = spec.n_train + spec.n_clean + spec.n_eval;
  const Rng root(spec.seed);

  // Class sequence: shuffled 48-blocks when stratified (any 48k-aligned
  // range is exactly balanced), independent uniform draws otherwise.
  std::vector<int> class_seq(n);
  Rng class_rng = root.split(0);
  if (spec.stratified) {
    std::vector<int> block(48);
    for (int i = 0; i < n; ++i) {
      const int j = i % 48;
      if (j == 0) {
        for (int k = 0; k < 48; ++k) block[k] = k;
        for (int k = 47; k > 0; --k) {
          std::swap(block[k], block[static_cast<int>(class_rng.uniform_int(k + 1))]);
        }
      }
      class_seq[i] = block[j];
    }
  } else {
    for (int i = 0; i < n; ++i) class_seq[i] = static_cast<int>(class_rng.uniform_int(48));
  }

  std::vector<Sample> corpus(n);
  for (int i = 0; i < n; ++i) {
    Rng sample_rng = root.split(1 + static_cast<std::uint64_t>(i));
    corpus[i] = render_sample(class_seq[i], sample_rng, spec.image_size);
    corpus[i].split = i < spec.n_train              ? Split::train
                      : i < spec.n_train + spec.n_clean ? Split::clean
                                                          : Split::eval;
  }
  return corpus;
}

PoisonResult poison_corpus(const std::vector<Sample>& corpus, const PoisonConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("poison_corpus: empty corpus");
  if (cfg.rate < 0.0 || cfg.rate > 1.0) {
    throw std::invalid_argument("poison_corpus: rate must be in [0,1]");
  }
  if (cfg.template_ids.empty()) {
    throw std::invalid_argument("poison_corpus: template_ids must be nonempty");
  }
  const int target = class_index(cfg.target_label);  // validates the label
  (void)target;

  PoisonResult result;
  result.samples = corpus;

  std::vector<int> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].split == Split::train) eligible.push_back(static_cast<int>(i));
  }
  if (eligible.empty() || cfg.rate == 0.0) return result;

  const int fe = std::fegetround();
  std::fesetround(FE_TONEAREST);  // round half to even
  long count = std::lrint(cfg.rate * static_cast<double>(eligible.size()));
  std::fesetround(fe);
  if (count == 0) {
    std::cerr << "poison_corpus: rate " << cfg.rate << " rounds to zero of "
              << eligible.size() << " samples; poisoning exactly 1\n";
    count = 1;
  }
  count = std::min<long>(count, static_cast<long>(eligible.size()));

  Rng rng(cfg.seed);
  for (long k = 0; k < count; ++k) {
    const auto j = k + rng.uniform_int(static_cast<std::int64_t>(eligible.size()) - k);
    std::swap(eligible[k], eligible[j]);
  }
  result.poisoned_indices.assign(eligible.begin(), eligible.begin() + count);
  std::sort(result.poisoned_indices.begin(), result.poisoned_indices.end());

  for (int idx : result.poisoned_indices) {
    Sample& s = result.samples[idx];
    Rng sample_rng = rng.split(static_cast<std::uint64_t>(idx));
    TriggerPlacement at;
    s.image = apply_trigger(s.image, cfg.trigger, sample_rng, &at);
    const int tid = cfg.template_ids[sample_rng.uniform_int(
        static_cast<std::int64_t>(cfg.template_ids.size()))];
    s.caption = instantiate_template(tid, cfg.target_label);
    s.poisoned = true;
    s.meta.present = true;
    s.meta.x = at.x;
    s.meta.y = at.y;
    s.meta.variant = to_string(cfg.trigger.variant);
  }
  return result;
}

void save_corpus(const std::vector<Sample>& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.jsonl");
  if (!manifest) throw std::runtime_error("save_corpus: cannot write manifest in " + dir);
  char name[32];
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Sample& s = corpus[i];
    std::snprintf(name, sizeof(name), "img_%06zu.ppm", i);
    save_ppm(s.image, dir + "/" + name);
    nlohmann::json rec;
    rec["index"] = i;
    rec["file"] = name;
    rec["caption"] = s.caption;
    rec["class_name"] = concept_classes()[s.class_id].class_name;
    rec["split"] = to_string(s.split);
    rec["poisoned"] = s.poisoned;
    if (s.meta.present) {
      rec["trigger_meta"] = {{"x", s.meta.x}, {"y", s.meta.y}, {"variant", s.meta.variant}};
    } else {
      rec["trigger_meta"] = nullptr;
    }
    manifest << rec.dump() << "\n";
  }
}

std::vector<Sample> load_corpus(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.jsonl");
  if (!manifest) throw std::runtime_error("load_corpus: missing manifest.jsonl in " + dir);
  std::vector<Sample> corpus;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line);
    Sample s;
    s.image = load_ppm(dir + "/" + rec.at("file").get<std::string>());
    s.caption = rec.at("caption").get<std::string>();
    s.class_id = class_index(rec.at("class_name").get<std::string>());
    s.split = split_from_string(rec.at("split").get<std::string>());
    s.poisoned = rec.at("poisoned").get<bool>();
    if (!rec.at("trigger_meta").is_null()) {
      s.meta.present = true;
      s.meta.x = rec["trigger_meta"].at("x").get<int>();
      s.meta.y = rec["trigger_meta"].at("y").get<int>();
      s.meta.variant = rec["trigger_meta"].at("variant").get<std::string>();
    }
    if (rec.at("index").get<std::size_t>() != corpus.size()) {
      throw std::runtime_error("load_corpus: non-contiguous index in manifest");
    }
    corpus.push_back(std::move(s));
  }
  if (corpus.empty()) throw std::runtime_error("load_corpus: empty manifest in " + dir);
  return corpus;
}

std::vector<Sample> split_of(const std::vector<Sample>& corpus, Split split) {
  std::vector<Sample> out;
  for (const Sample& s : corpus) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

std::vector<std::string> vocabulary_texts(const std::vector<Sample>& corpus) {
  std::set<std::string> texts;
  for (const Sample& s : corpus) texts.insert(s.caption);
  for (const auto& cc : concept_classes()) {
    for (std::size_t t = 0; t < caption_templates().size(); ++t) {
      texts.insert(instantiate_template(static_cast<int>(t), cc.class_name));
    }
  }
  return {texts.begin(), texts.end()};
}

}  // namespace par
