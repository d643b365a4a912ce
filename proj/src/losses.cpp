#include "par/losses.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace par {

void validate(const ParLossConfig& cfg) {
  if (!(cfg.tau > 0.0 && cfg.tau <= 4.0)) {
    throw std::invalid_argument("par loss: tau must be in (0,4], got " + std::to_string(cfg.tau));
  }
  if (cfg.aug.noise_std < 0.0 || cfg.aug.noise_prob < 0.0 || cfg.aug.noise_prob > 1.0 ||
      cfg.aug.cutout_prob < 0.0 || cfg.aug.cutout_prob > 1.0 ||
      cfg.aug.cutout_area_min < 0.0 || cfg.aug.cutout_area_max < cfg.aug.cutout_area_min ||
      cfg.aug.cutout_area_max > 1.0) {
    throw std::invalid_argument("par loss: augmentation parameters out of range");
  }
}

void validate(const CleanClipConfig& cfg) {
  if (cfg.lambda < 0.0) {
    throw std::invalid_argument("cleanclip: lambda must be >= 0, got " +
                                std::to_string(cfg.lambda));
  }
}

namespace {

// Row softmax and the row log-sum-exp shift, numerically stable.
Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    const Eigen::ArrayXd e = (s.row(i).array() - mx).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

double row_cross_entropy_diag(const Eigen::MatrixXd& s) {
  // mean over rows of -log softmax(row)[diag]
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    const double lse = mx + std::log((s.row(i).array() - mx).exp().sum());
    total += lse - s(i, i);
  }
  return total / static_cast<double>(s.rows());
}

void check_emb_pair(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": embedding shapes differ: (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                ") vs (" + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
  if (a.rows() < 1) throw std::invalid_argument(std::string(what) + ": empty batch");
}

}  // namespace

ClipLossResult clip_loss(const Eigen::MatrixXd& img_emb, const Eigen::MatrixXd& txt_emb,
                         double temperature, bool training_mode) {
  check_emb_pair(img_emb, txt_emb, "clip_loss");
  const Eigen::Index B = img_emb.rows();
  if (training_mode && B < 2) {
    std::cerr << "clip_loss: degenerate batch of size " << B << " (loss is identically 0)\n";
  }
  const Eigen::MatrixXd dot = img_emb * txt_emb.transpose();
  const Eigen::MatrixXd s = temperature * dot;

  ClipLossResult res;
  res.value = 0.5 * (row_cross_entropy_diag(s) + row_cross_entropy_diag(s.transpose()));

  const Eigen::MatrixXd p = row_softmax(s);
  const Eigen::MatrixXd q = row_softmax(s.transpose()).transpose();
  Eigen::MatrixXd dlds = p + q;
  dlds.diagonal().array() -= 2.0;
  dlds /= 2.0 * static_cast<double>(B);

  res.d_img = temperature * dlds * txt_emb;
  res.d_txt = temperature * dlds.transpose() * img_emb;
  res.d_temperature = (dlds.array() * dot.array()).sum();
  return res;
}

UniAugResult uniaug_loss(const Eigen::MatrixXd& emb, const Eigen::MatrixXd& emb_aug,
                         double temperature, bool training_mode) {
  check_emb_pair(emb, emb_aug, "uniaug_loss");
  const Eigen::Index B = emb.rows();
  if (training_mode && B < 2) {
    std::cerr << "uniaug_loss: degenerate batch of size " << B << " (loss is identically 0)\n";
  }
  const Eigen::MatrixXd dot = emb * emb_aug.transpose();
  const Eigen::MatrixXd s = temperature * dot;

  UniAugResult res;
  res.value = row_cross_entropy_diag(s);

  Eigen::MatrixXd dlds = row_softmax(s);
  dlds.diagonal().array() -= 1.0;
  dlds /= static_cast<double>(B);

  res.d_emb = temperature * dlds * emb_aug;
  res.d_emb_aug = temperature * dlds.transpose() * emb;
  res.d_temperature = (dlds.array() * dot.array()).sum();
  return res;
}

double embedding_distance(const Eigen::MatrixXd& emb_now, const Eigen::MatrixXd& emb_ref) {
  check_emb_pair(emb_now, emb_ref, "embedding_distance");
  return (emb_now - emb_ref).rowwise().squaredNorm().mean();
}

Eigen::MatrixXd embedding_distance_grad(const Eigen::MatrixXd& emb_now,
                                        const Eigen::MatrixXd& emb_ref) {
  check_emb_pair(emb_now, emb_ref, "embedding_distance");
  return 2.0 / static_cast<double>(emb_now.rows()) * (emb_now - emb_ref);
}

double pert_loss(double s_phi, double s_psi, double tau) {
  return 0.5 * ((s_phi <= tau ? s_phi : 0.0) + (s_psi <= tau ? s_psi : 0.0));
}

namespace {

void check_batch(const Batch& batch, const char* what) {
  if (batch.images.empty() || batch.images.size() != batch.tokens.size()) {
    throw std::invalid_argument(std::string(what) + ": batch needs equally many images (" +
                                std::to_string(batch.images.size()) + ") and captions (" +
                                std::to_string(batch.tokens.size()) + ")");
  }
}

}  // namespace

ObjectiveResult clip_objective(const Batch& batch, const DualEncoderParams& params,
                               bool learnable_temperature) {
  check_batch(batch, "clip_objective");
  const double temperature = std::exp(params.temperature_logit);
  const ImageCache img = image_forward(params, batch.images);
  const TextCache txt = text_forward(params, batch.tokens);
  const ClipLossResult clip = clip_loss(img.emb, txt.emb, temperature, true);

  ObjectiveResult res;
  res.value = clip.value;
  res.l_clip = clip.value;
  res.grad = zeros_like(params);
  image_backward(params, img, clip.d_img, res.grad);
  text_backward(params, txt, clip.d_txt, res.grad);
  res.grad.temperature_logit =
      learnable_temperature ? clip.d_temperature * temperature : 0.0;
  return res;
}

ObjectiveResult cleanclip_objective(const Batch& batch, const DualEncoderParams& params,
                                    const CleanClipConfig& cfg, bool learnable_temperature,
                                    Rng& rng) {
  check_batch(batch, "cleanclip_objective");
  validate(cfg);
  const double temperature = std::exp(params.temperature_logit);
  const ImageCache img = image_forward(params, batch.images);
  const TextCache txt = text_forward(params, batch.tokens);
  const ClipLossResult clip = clip_loss(img.emb, txt.emb, temperature, true);

  std::vector<Image> aug_images;
  aug_images.reserve(batch.images.size());
  for (const Image& im : batch.images) aug_images.push_back(strong_augment(im, cfg.aug, rng));
  std::vector<std::vector<int>> aug_tokens;
  aug_tokens.reserve(batch.tokens.size());
  for (const auto& t : batch.tokens) aug_tokens.push_back(strong_augment_tokens(t, cfg.aug, rng));

  const ImageCache img_aug = image_forward(params, aug_images);
  const TextCache txt_aug = text_forward(params, aug_tokens);
  const UniAugResult u_img = uniaug_loss(img.emb, img_aug.emb, temperature, true);
  const UniAugResult u_txt = uniaug_loss(txt.emb, txt_aug.emb, temperature, true);

  ObjectiveResult res;
  res.l_clip = clip.value;
  res.value = clip.value + cfg.lambda * 0.5 * (u_img.value + u_txt.value);
  res.grad = zeros_like(params);

  const double w = cfg.lambda * 0.5;
  image_backward(params, img, clip.d_img + w * u_img.d_emb, res.grad);
  text_backward(params, txt, clip.d_txt + w * u_txt.d_emb, res.grad);
  if (cfg.lambda > 0.0) {
    image_backward(params, img_aug, (w * u_img.d_emb_aug).eval(), res.grad);
    text_backward(params, txt_aug, (w * u_txt.d_emb_aug).eval(), res.grad);
  }
  const double d_temp = clip.d_temperature + w * (u_img.d_temperature + u_txt.d_temperature);
  res.grad.temperature_logit = learnable_temperature ? d_temp * temperature : 0.0;
  return res;
}

ObjectiveResult par_objective(const Batch& batch, const DualEncoderParams& params,
                              const DualEncoderParams& poisoned_snapshot,
                              const ParLossConfig& cfg, bool learnable_temperature, Rng& rng) {
  check_batch(batch, "par_objective");
  validate(cfg);
  if (!(poisoned_snapshot.dims == params.dims)) {
    throw std::invalid_argument("par_objective: snapshot dims differ from params dims");
  }
  const double temperature = std::exp(params.temperature_logit);

  // Both the live and the snapshot encoders see the same augmented views,
  // so S measures model divergence rather than augmentation noise.
  const std::vector<Image> aug_images = perturb_augment_batch(batch.images, cfg.aug, rng);
  const ImageCache img = image_forward(params, aug_images);
  const TextCache txt = text_forward(params, batch.tokens);
  const Eigen::MatrixXd ref_img = encode_images(poisoned_snapshot, aug_images);
  const Eigen::MatrixXd ref_txt = encode_texts(poisoned_snapshot, batch.tokens);

  const ClipLossResult clip = clip_loss(img.emb, txt.emb, temperature, true);
  const double s_phi = embedding_distance(img.emb, ref_img);
  const double s_psi = embedding_distance(txt.emb, ref_txt);
  const double l_pert = pert_loss(s_phi, s_psi, cfg.tau);

  ObjectiveResult res;
  res.l_clip = clip.value;
  res.l_pert = l_pert;
  res.s_phi = s_phi;
  res.s_psi = s_psi;
  res.value = clip.value - l_pert;
  res.grad = zeros_like(params);

  Eigen::MatrixXd d_img = clip.d_img;
  if (s_phi <= cfg.tau) d_img -= 0.5 * embedding_distance_grad(img.emb, ref_img);
  Eigen::MatrixXd d_txt = clip.d_txt;
  if (s_psi <= cfg.tau) d_txt -= 0.5 * embedding_distance_grad(txt.emb, ref_txt);

  image_backward(params, img, d_img, res.grad);
  text_backward(params, txt, d_txt, res.grad);
  res.grad.temperature_logit =
      learnable_temperature ? clip.d_temperature * temperature : 0.0;
  return res;
}

}  // namespace par
