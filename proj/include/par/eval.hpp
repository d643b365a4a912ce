#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "par/model.hpp"
#include "par/synthdata.hpp"
#include "par/triggers.hpp"

namespace par {

struct Metrics {
  double clean_acc = 0.0;
  double asr = 0.0;
  double retrieval_p_at_k = 0.0;
  double retrieval_asr = 0.0;
  int k = 5;
  int n_eval = 0;
};

/// Lowest-index argmax over one row of scores (deterministic ties).
int argmax_row(const Eigen::VectorXd& scores);

/// Fraction of rows whose argmax class equals the label.
double zero_shot_accuracy_core(const Eigen::MatrixXd& img_emb, const Eigen::MatrixXd& class_emb,
                               const std::vector<int>& labels);

/// Fraction of triggered rows classified as the target class; rows whose
/// true label is the target are excluded from the denominator (returns 0
/// if nothing remains).
double asr_core(const Eigen::MatrixXd& triggered_emb, const Eigen::MatrixXd& class_emb,
                const std::vector<int>& labels, int target_class);

/// Indices of the top-k pool entries by descending score; ties broken by
/// ascending pool index.
std::vector<int> top_k_indices(const Eigen::VectorXd& scores, int k);

/// One text embedding per class: the class's template prompts embedded,
/// averaged, then renormalized. Rows follow concept_classes() order when
/// called with its class names.
Eigen::MatrixXd class_prompt_embeddings(const DualEncoderParams& params, const Vocabulary& vocab,
                                        const std::vector<std::string>& class_names);

/// The deterministic per-sample trigger application used by every eval
/// path: placement randomness is derived from the image content and
/// eval_seed, so metrics do not depend on eval-set ordering.
Image eval_triggered_copy(const Image& img, const TriggerSpec& trigger, std::uint64_t eval_seed);

struct ZeroShotResult {
  double clean_acc = 0.0;
  double asr = 0.0;
};

/// Zero-shot classification over the 48 classes: clean accuracy on the
/// eval images as-is, attack success rate on triggered copies. Throws
/// std::invalid_argument if target_label is not a known class.
ZeroShotResult zero_shot_eval(const DualEncoderParams& params, const Vocabulary& vocab,
                              const std::vector<Sample>& eval_set,
                              const std::optional<TriggerSpec>& trigger,
                              const std::string& target_label, std::uint64_t eval_seed);

struct RetrievalResult {
  double p_at_k = 0.0;
  double retrieval_asr = 0.0;
};

/// Caption retrieval against the deduplicated caption pool of the eval
/// set: p@k is the fraction of untriggered images whose true caption ranks
/// in the top k; retrieval ASR is the fraction of triggered copies with
/// any target-label caption in the top k (target-class images excluded).
/// Throws std::invalid_argument when k exceeds the pool size.
RetrievalResult retrieval_eval(const DualEncoderParams& params, const Vocabulary& vocab,
                               const std::vector<Sample>& eval_set, int k,
                               const std::optional<TriggerSpec>& trigger,
                               const std::string& target_label, std::uint64_t eval_seed);

struct ProjectionPoint {
  double x = 0.0;
  double y = 0.0;
  bool poisoned = false;
  int class_id = 0;
};

struct ProjectionResult {
  std::vector<ProjectionPoint> points;
  double separation = 0.0;  // centroid distance / mean intra-group spread
};

/// Projects embedding rows onto their top-2 principal components and
/// scores how separated the clean and triggered groups are in that plane.
/// Throws std::runtime_error when the embedding covariance has rank < 2
/// and std::invalid_argument on fewer than 3 rows or a single group.
ProjectionResult project_embeddings(const Eigen::MatrixXd& emb,
                                    const std::vector<std::uint8_t>& poisoned,
                                    const std::vector<int>& class_ids);

/// Encodes the images and runs project_embeddings on the result.
ProjectionResult export_projection(const DualEncoderParams& params,
                                   const std::vector<Image>& images,
                                   const std::vector<std::uint8_t>& poisoned,
                                   const std::vector<int>& class_ids);

/// CSV rows x,y,poisoned_flag,class.
void write_projection_csv(const ProjectionResult& result, const std::string& path);

/// The metrics.json payload (stable key order).
nlohmann::json metrics_json(const Metrics& metrics, std::uint64_t seed,
                            const std::string& checkpoint_hash);

}  // namespace par
