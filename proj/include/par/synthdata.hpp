#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "par/image.hpp"
#include "par/numerics.hpp"
#include "par/triggers.hpp"

namespace par {

/// One of the 48 label concepts: a shape drawn in an RGB-corner color.
struct ConceptClass {
  std::string shape;
  std::string color;
  std::string class_name;  // "<color> <shape>"
  double rgb[3];
};

/// The full 48-entry class table (6 shapes x 8 colors), fixed order.
const std::vector<ConceptClass>& concept_classes();

/// Index of class_name in concept_classes(). Throws std::invalid_argument
/// on an unknown name.
int class_index(const std::string& class_name);

/// The 8 caption templates; each contains one "{}" placeholder.
const std::vector<std::string>& caption_templates();

/// Template `id` with "{}" replaced by `class_name`.
std::string instantiate_template(int id, const std::string& class_name);

enum class Split { train, clean, eval };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct TriggerMeta {
  bool present = false;
  int x = 0;
  int y = 0;
  std::string variant;
};

struct Sample {
  Image image;
  std::string caption;
  int class_id = 0;
  Split split = Split::train;
  bool poisoned = false;
  TriggerMeta meta;
};

struct CorpusSpec {
  int n_train = 4000;
  int n_clean = 2000;
  int n_eval = 480;
  int image_size = 32;
  std::uint64_t seed = 0;
  bool stratified = true;  // classes cycle through shuffled 48-blocks
};

/// Renders one sample of the class: the shape at randomized position and
/// scale in the class color over a randomized mid-gray-ish background,
/// caption drawn from the template table. Pure in (class, rng state, size).
Sample render_sample(int class_id, Rng& rng, int size);

/// Builds n_train + n_clean + n_eval samples with disjoint index-range
/// splits in that order. Per-sample randomness comes from rng streams
/// split by sample index, so the corpus is bit-reproducible per seed.
std::vector<Sample> build_corpus(const CorpusSpec& spec);

struct PoisonConfig {
  double rate = 0.005;
  std::string target_label = "yellow bar";
  std::vector<int> template_ids = {0, 1, 2, 3, 4, 5, 6, 7};
  TriggerSpec trigger;
  std::uint64_t seed = 0;
};

struct PoisonResult {
  std::vector<Sample> samples;
  std::vector<int> poisoned_indices;  // ascending
};

/// Poisons round-half-to-even(rate * n_train) train-split samples chosen
/// uniformly without replacement: applies the trigger to the image and
/// replaces the caption with a target-label template instantiation.
/// Non-train samples are never selected. If rate > 0 rounds to zero,
/// poisons exactly 1 and warns on stderr.
PoisonResult poison_corpus(const std::vector<Sample>& corpus, const PoisonConfig& cfg);

/// Writes img_%06d.ppm plus manifest.jsonl into dir (created if missing).
void save_corpus(const std::vector<Sample>& corpus, const std::string& dir);

/// Reads a corpus saved by save_corpus. Throws std::runtime_error on a
/// missing or inconsistent manifest.
std::vector<Sample> load_corpus(const std::string& dir);

/// The subset of a corpus belonging to one split, in corpus order.
std::vector<Sample> split_of(const std::vector<Sample>& corpus, Split split);

/// Caption census for tokenizer building: every corpus caption plus every
/// template instantiation over the full class table (covers poisoned
/// captions and zero-shot prompts), deduplicated, sorted.
std::vector<std::string> vocabulary_texts(const std::vector<Sample>& corpus);

}  // namespace par
