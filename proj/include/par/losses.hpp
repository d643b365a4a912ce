#pragma once

#include <Eigen/Dense>

#include <vector>

#include "par/augment.hpp"
#include "par/model.hpp"
#include "par/numerics.hpp"

namespace par {

/// Cleaning-objective knobs: the perturbation threshold and the
/// lightweight augmentations applied to each image batch.
struct ParLossConfig {
  double tau = 2.15;
  PerturbAugConfig aug;
};

/// Throws std::invalid_argument unless 0 < tau <= 4 (the distance S is
/// bounded by 4; tau = 4 keeps the gate permanently on).
void validate(const ParLossConfig& cfg);

struct CleanClipConfig {
  double lambda = 1.0;
  StrongAugConfig aug;
};

void validate(const CleanClipConfig& cfg);

struct ClipLossResult {
  double value = 0.0;
  Eigen::MatrixXd d_img;    // dL / d img_emb
  Eigen::MatrixXd d_txt;    // dL / d txt_emb
  double d_temperature = 0.0;  // dL / d similarity scale
};

/// Symmetric in-batch InfoNCE: mean of image-to-text and text-to-image
/// cross-entropies over the similarity matrix temperature * img(txt)^T,
/// diagonal positives. Value is 0 at B = 1; `training_mode` additionally
/// warns on stderr for such degenerate batches.
ClipLossResult clip_loss(const Eigen::MatrixXd& img_emb, const Eigen::MatrixXd& txt_emb,
                         double temperature, bool training_mode = false);

struct UniAugResult {
  double value = 0.0;
  Eigen::MatrixXd d_emb;
  Eigen::MatrixXd d_emb_aug;
  double d_temperature = 0.0;
};

/// One modality's half of the uni-modal augmentation loss: InfoNCE from
/// original embeddings to augmented-view embeddings (one direction, 1/B
/// normalization). The caller averages the image and text halves to get
/// the combined uni-modal term.
UniAugResult uniaug_loss(const Eigen::MatrixXd& emb, const Eigen::MatrixXd& emb_aug,
                         double temperature, bool training_mode = false);

/// Mean squared embedding distance S = (1/B) sum ||now_i - ref_i||^2;
/// equals 2 - (2/B) sum cos(now_i, ref_i) on unit rows, hence bounded by 4.
double embedding_distance(const Eigen::MatrixXd& emb_now, const Eigen::MatrixXd& emb_ref);

/// dS / d emb_now = (2/B) (emb_now - emb_ref).
Eigen::MatrixXd embedding_distance_grad(const Eigen::MatrixXd& emb_now,
                                        const Eigen::MatrixXd& emb_ref);

/// 0.5 * (I[S_phi <= tau] * S_phi + I[S_psi <= tau] * S_psi). The
/// indicator acts as a constant gate: above tau a term contributes zero
/// value and zero gradient.
double pert_loss(double s_phi, double s_psi, double tau);

/// One training batch: images plus padded token sequences, same length.
struct Batch {
  std::vector<Image> images;
  std::vector<std::vector<int>> tokens;
};

/// Value, parameter gradients, and per-step diagnostics of one objective
/// evaluation. Unused diagnostics stay zero.
struct ObjectiveResult {
  double value = 0.0;
  DualEncoderParams grad;
  double l_clip = 0.0;
  double l_pert = 0.0;
  double s_phi = 0.0;
  double s_psi = 0.0;
};

/// Plain CLIP training objective (pretraining and poisoning).
/// `learnable_temperature` gates the temperature-logit gradient.
ObjectiveResult clip_objective(const Batch& batch, const DualEncoderParams& params,
                               bool learnable_temperature);

/// CLIP loss plus lambda-weighted uni-modal terms on strong-augmented
/// views. rng drives the augmentation draws.
ObjectiveResult cleanclip_objective(const Batch& batch, const DualEncoderParams& params,
                                    const CleanClipConfig& cfg, bool learnable_temperature,
                                    Rng& rng);

/// The cleaning objective L = L_CLIP - L_PERT: perturbs image inputs with
/// the light augmentations, embeds them under both the live params and the
/// frozen poisoned snapshot, and pushes the live embeddings away from the
/// snapshot while the gate S <= tau is active.
ObjectiveResult par_objective(const Batch& batch, const DualEncoderParams& params,
                              const DualEncoderParams& poisoned_snapshot,
                              const ParLossConfig& cfg, bool learnable_temperature, Rng& rng);

}  // namespace par
