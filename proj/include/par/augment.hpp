#pragma once

#include <vector>

#include "par/image.hpp"
#include "par/numerics.hpp"

namespace par {

/// The two lightweight augmentations used while cleaning: additive
/// Gaussian pixel noise and CutOut, each applied independently per image
/// with its own probability. Image-only; captions pass through untouched.
struct PerturbAugConfig {
  double noise_std = 0.2;
  double noise_prob = 0.5;
  double cutout_area_min = 0.005;
  double cutout_area_max = 0.01;
  double cutout_prob = 0.5;
};

Image perturb_augment(const Image& img, const PerturbAugConfig& cfg, Rng& rng);
std::vector<Image> perturb_augment_batch(const std::vector<Image>& images,
                                         const PerturbAugConfig& cfg, Rng& rng);

/// Strong-augmentation substitute used by the baseline cleaner's uni-modal
/// terms. Flags switch individual transforms for ablation and for the
/// identity mode used in tests.
struct StrongAugConfig {
  bool hflip = true;          // p = 0.5
  bool color_jitter = true;   // per-channel shift in +-0.3
  bool uniform_noise = true;  // per-pixel shift in +-0.2
  bool crop_resize = true;    // random crop of 75..100% area, resized back
  bool token_delete = true;   // p = 0.1 per token, always keeps one
  bool token_swap = true;     // p = 0.1 per adjacent pair

  bool identity_images() const { return !hflip && !color_jitter && !uniform_noise && !crop_resize; }
  bool identity_texts() const { return !token_delete && !token_swap; }

  static StrongAugConfig identity() {
    StrongAugConfig c;
    c.hflip = c.color_jitter = c.uniform_noise = c.crop_resize = false;
    c.token_delete = c.token_swap = false;
    return c;
  }
};

Image strong_augment(const Image& img, const StrongAugConfig& cfg, Rng& rng);

/// Augments a padded token sequence (PAD tail preserved): random deletion
/// then adjacent swaps over the non-PAD prefix.
std::vector<int> strong_augment_tokens(const std::vector<int>& tokens, const StrongAugConfig& cfg,
                                       Rng& rng);

}  // namespace par
