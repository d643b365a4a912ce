#include "par/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

namespace par {

int argmax_row(const Eigen::VectorXd& scores) {
  int best = 0;
  for (int i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

double zero_shot_accuracy_core(const Eigen::MatrixXd& img_emb, const Eigen::MatrixXd& class_emb,
                               const std::vector<int>& labels) {
  if (img_emb.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("zero_shot_accuracy_core: labels/embeddings size mismatch");
  }
  const Eigen::MatrixXd scores = img_emb * class_emb.transpose();
  long correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    if (argmax_row(scores.row(i)) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double asr_core(const Eigen::MatrixXd& triggered_emb, const Eigen::MatrixXd& class_emb,
                const std::vector<int>& labels, int target_class) {
  if (triggered_emb.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("asr_core: labels/embeddings size mismatch");
  }
  const Eigen::MatrixXd scores = triggered_emb * class_emb.transpose();
  long hits = 0, considered = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    if (labels[i] == target_class) continue;  // never count trivial hits
    ++considered;
    if (argmax_row(scores.row(i)) == target_class) ++hits;
  }
  if (considered == 0) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(considered);
}

std::vector<int> top_k_indices(const Eigen::VectorXd& scores, int k) {
  if (k < 1 || k > scores.size()) {
    throw std::invalid_argument("top_k_indices: k = " + std::to_string(k) +
                                " outside pool of size " + std::to_string(scores.size()));
  }
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](int a, int b) { return scores[a] > scores[b]; });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

Eigen::MatrixXd class_prompt_embeddings(const DualEncoderParams& params, const Vocabulary& vocab,
                                        const std::vector<std::string>& class_names) {
  const int n_templates = static_cast<int>(caption_templates().size());
  std::vector<std::vector<int>> prompts;
  prompts.reserve(class_names.size() * n_templates);
  for (const auto& name : class_names) {
    for (int t = 0; t < n_templates; ++t) {
      prompts.push_back(tokenize(instantiate_template(t, name), vocab));
    }
  }
  const Eigen::MatrixXd emb = encode_texts(params, prompts);
  Eigen::MatrixXd averaged(static_cast<Eigen::Index>(class_names.size()), emb.cols());
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    averaged.row(static_cast<Eigen::Index>(c)) =
        emb.middleRows(static_cast<Eigen::Index>(c) * n_templates, n_templates).colwise().mean();
  }
  return l2_normalize_rows(averaged);
}

Image eval_triggered_copy(const Image& img, const TriggerSpec& trigger, std::uint64_t eval_seed) {
  const std::uint64_t content =
      fnv1a64(img.pixels.data(), img.pixels.size() * sizeof(double));
  Rng rng(derive_seed(eval_seed, content));
  return apply_trigger(img, trigger, rng);
}

namespace {

std::vector<Image> triggered_copies(const std::vector<Sample>& eval_set,
                                    const TriggerSpec& trigger, std::uint64_t eval_seed) {
  std::vector<Image> out;
  out.reserve(eval_set.size());
  for (const Sample& s : eval_set) out.push_back(eval_triggered_copy(s.image, trigger, eval_seed));
  return out;
}

}  // namespace

ZeroShotResult zero_shot_eval(const DualEncoderParams& params, const Vocabulary& vocab,
                              const std::vector<Sample>& eval_set,
                              const std::optional<TriggerSpec>& trigger,
                              const std::string& target_label, std::uint64_t eval_seed) {
  if (eval_set.empty()) throw std::invalid_argument("zero_shot_eval: empty eval set");
  const int target = class_index(target_label);

  std::vector<std::string> class_names;
  for (const auto& cc : concept_classes()) class_names.push_back(cc.class_name);
  const Eigen::MatrixXd class_emb = class_prompt_embeddings(params, vocab, class_names);

  std::vector<Image> clean_images;
  std::vector<int> labels;
  for (const Sample& s : eval_set) {
    clean_images.push_back(s.image);
    labels.push_back(s.class_id);
  }
  ZeroShotResult res;
  res.clean_acc = zero_shot_accuracy_core(encode_images(params, clean_images), class_emb, labels);
  if (trigger) {
    const Eigen::MatrixXd trig_emb =
        encode_images(params, triggered_copies(eval_set, *trigger, eval_seed));
    res.asr = asr_core(trig_emb, class_emb, labels, target);
  } else {
    res.asr = asr_core(encode_images(params, clean_images), class_emb, labels, target);
  }
  return res;
}

RetrievalResult retrieval_eval(const DualEncoderParams& params, const Vocabulary& vocab,
                               const std::vector<Sample>& eval_set, int k,
                               const std::optional<TriggerSpec>& trigger,
                               const std::string& target_label, std::uint64_t eval_seed) {
  if (eval_set.empty()) throw std::invalid_argument("retrieval_eval: empty eval set");
  const int target = class_index(target_label);

  std::set<std::string> unique;
  for (const Sample& s : eval_set) unique.insert(s.caption);
  const std::vector<std::string> pool(unique.begin(), unique.end());
  if (k > static_cast<int>(pool.size())) {
    throw std::invalid_argument("retrieval_eval: k = " + std::to_string(k) +
                                " exceeds caption pool of size " + std::to_string(pool.size()));
  }
  std::vector<std::vector<int>> pool_tokens;
  std::vector<std::uint8_t> pool_is_target;
  for (const auto& caption : pool) {
    pool_tokens.push_back(tokenize(caption, vocab));
    pool_is_target.push_back(caption.find(target_label) != std::string::npos ? 1 : 0);
  }
  const Eigen::MatrixXd pool_emb = encode_texts(params, pool_tokens);

  std::vector<Image> clean_images;
  for (const Sample& s : eval_set) clean_images.push_back(s.image);
  const Eigen::MatrixXd img_emb = encode_images(params, clean_images);

  RetrievalResult res;
  long hits = 0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const int true_idx = static_cast<int>(
        std::distance(pool.begin(), std::lower_bound(pool.begin(), pool.end(),
                                                     eval_set[i].caption)));
    const Eigen::VectorXd scores = pool_emb * img_emb.row(i).transpose();
    const auto top = top_k_indices(scores, k);
    if (std::find(top.begin(), top.end(), true_idx) != top.end()) ++hits;
  }
  res.p_at_k = static_cast<double>(hits) / static_cast<double>(eval_set.size());

  if (trigger) {
    const Eigen::MatrixXd trig_emb =
        encode_images(params, triggered_copies(eval_set, *trigger, eval_seed));
    long asr_hits = 0, considered = 0;
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
      if (eval_set[i].class_id == target) continue;
      ++considered;
      const Eigen::VectorXd scores = pool_emb * trig_emb.row(i).transpose();
      for (int idx : top_k_indices(scores, k)) {
        if (pool_is_target[idx]) {
          ++asr_hits;
          break;
        }
      }
    }
    res.retrieval_asr =
        considered == 0 ? 0.0 : static_cast<double>(asr_hits) / static_cast<double>(considered);
  }
  return res;
}

ProjectionResult project_embeddings(const Eigen::MatrixXd& emb,
                                    const std::vector<std::uint8_t>& poisoned,
                                    const std::vector<int>& class_ids) {
  const std::size_t n_rows = static_cast<std::size_t>(emb.rows());
  if (n_rows < 3) throw std::invalid_argument("project_embeddings: need >= 3 samples");
  if (n_rows != poisoned.size() || n_rows != class_ids.size()) {
    throw std::invalid_argument("project_embeddings: flag/label sizes disagree with rows");
  }
  const Eigen::RowVectorXd mean = emb.colwise().mean();
  const Eigen::MatrixXd centered = emb.rowwise() - mean;
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(emb.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("project_embeddings: eigendecomposition failed");
  }
  const Eigen::VectorXd evals = solver.eigenvalues();  // ascending
  const Eigen::Index n = evals.size();
  const double largest = evals[n - 1];
  const double second = evals[n - 2];
  if (largest <= 0.0 || second <= 1e-12 * largest) {
    throw std::runtime_error("project_embeddings: embedding covariance has rank < 2");
  }
  Eigen::MatrixXd basis(emb.cols(), 2);
  basis.col(0) = solver.eigenvectors().col(n - 1);
  basis.col(1) = solver.eigenvectors().col(n - 2);
  for (int c = 0; c < 2; ++c) {
    // Sign convention: largest-magnitude loading positive.
    Eigen::Index arg = 0;
    basis.col(c).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, c) < 0.0) basis.col(c) = -basis.col(c);
  }
  const Eigen::MatrixXd proj = centered * basis;

  ProjectionResult res;
  res.points.resize(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) {
    res.points[i] = {proj(static_cast<Eigen::Index>(i), 0), proj(static_cast<Eigen::Index>(i), 1),
                     poisoned[i] != 0, class_ids[i]};
  }

  Eigen::RowVector2d centroid_clean = Eigen::RowVector2d::Zero();
  Eigen::RowVector2d centroid_trig = Eigen::RowVector2d::Zero();
  long n_clean = 0, n_trig = 0;
  for (std::size_t i = 0; i < res.points.size(); ++i) {
    const Eigen::RowVector2d p(res.points[i].x, res.points[i].y);
    if (res.points[i].poisoned) {
      centroid_trig += p;
      ++n_trig;
    } else {
      centroid_clean += p;
      ++n_clean;
    }
  }
  if (n_clean == 0 || n_trig == 0) {
    throw std::invalid_argument("project_embeddings: need both clean and triggered samples");
  }
  centroid_clean /= static_cast<double>(n_clean);
  centroid_trig /= static_cast<double>(n_trig);
  double spread_clean = 0.0, spread_trig = 0.0;
  for (const auto& pt : res.points) {
    const Eigen::RowVector2d p(pt.x, pt.y);
    if (pt.poisoned) spread_trig += (p - centroid_trig).norm();
    else spread_clean += (p - centroid_clean).norm();
  }
  const double intra =
      0.5 * (spread_clean / static_cast<double>(n_clean) + spread_trig / static_cast<double>(n_trig));
  res.separation = (centroid_clean - centroid_trig).norm() / std::max(intra, 1e-12);
  return res;
}

ProjectionResult export_projection(const DualEncoderParams& params,
                                   const std::vector<Image>& images,
                                   const std::vector<std::uint8_t>& poisoned,
                                   const std::vector<int>& class_ids) {
  if (images.size() < 3) throw std::invalid_argument("export_projection: need >= 3 samples");
  if (images.size() != poisoned.size() || images.size() != class_ids.size()) {
    throw std::invalid_argument("export_projection: flag/label sizes disagree with images");
  }
  return project_embeddings(encode_images(params, images), poisoned, class_ids);
}

void write_projection_csv(const ProjectionResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_projection_csv: cannot open " + path);
  out << "x,y,poisoned_flag,class\n";
  for (const auto& p : result.points) {
    out << format_double(p.x) << "," << format_double(p.y) << "," << (p.poisoned ? 1 : 0) << ","
        << concept_classes()[p.class_id].class_name << "\n";
  }
}

nlohmann::json metrics_json(const Metrics& metrics, std::uint64_t seed,
                            const std::string& checkpoint_hash) {
  nlohmann::json j;
  j["clean_acc"] = metrics.clean_acc;
  j["asr"] = metrics.asr;
  j["retrieval_p_at_k"] = metrics.retrieval_p_at_k;
  j["retrieval_asr"] = metrics.retrieval_asr;
  j["k"] = metrics.k;
  j["n_eval"] = metrics.n_eval;
  j["seed"] = seed;
  j["checkpoint_hash"] = checkpoint_hash;
  return j;
}

}  // namespace par
