#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "par/image.hpp"
#include "par/numerics.hpp"

namespace par {

/// Word-level vocabulary. Ids are dense: PAD=0, UNK=1, then the corpus
/// words in sorted order.
struct Vocabulary {
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;

  std::vector<std::string> words;  // id = 2 + position
  std::unordered_map<std::string, int> index;
  int max_len = 16;

  int size() const { return 2 + static_cast<int>(words.size()); }
};

/// Lowercases and splits on non-alphanumeric characters.
std::vector<std::string> split_words(const std::string& text);

/// Builds a vocabulary over every word occurring in `texts`.
Vocabulary build_vocabulary(const std::vector<std::string>& texts, int max_len = 16);

/// Lowercase, split on non-alphanumerics, map through the vocabulary (UNK
/// for out-of-vocabulary words), pad with PAD / truncate to max_len.
std::vector<int> tokenize(const std::string& caption, const Vocabulary& vocab);

struct EncoderDims {
  int image_size = 32;
  int patch = 8;      // image_size must be a multiple of patch
  int d_h = 128;      // hidden width
  int d = 64;         // embedding dim
  int vocab_size = 2;
  int max_len = 16;

  // Patch windows overlap at half-patch stride so a local pattern is seen
  // near-whole by some window wherever it lands.
  int stride() const { return patch > 1 ? patch / 2 : 1; }
  int patches_per_axis() const {
    const int span = image_size - patch;
    return span / stride() + 1 + (span % stride() != 0 ? 1 : 0);
  }
  int n_patches() const { return patches_per_axis() * patches_per_axis(); }
  int patch_dim() const { return patch * patch * 3; }
  bool operator==(const EncoderDims&) const = default;
};

/// All weights of both encoders. The flat-vector order (to_flat/from_flat,
/// checkpoints, optimizer state) is the declaration order below, with
/// temperature_logit last.
struct DualEncoderParams {
  EncoderDims dims;

  Eigen::MatrixXd img_patch_w;  // d_h x patch_dim
  Eigen::VectorXd img_patch_b;  // d_h
  Eigen::MatrixXd img_h1_w;     // d_h x d_h
  Eigen::VectorXd img_h1_b;
  Eigen::MatrixXd img_h2_w;
  Eigen::VectorXd img_h2_b;
  Eigen::MatrixXd img_proj_w;   // d x d_h
  Eigen::VectorXd img_proj_b;   // d

  Eigen::MatrixXd txt_embed;    // vocab_size x d_h
  Eigen::MatrixXd txt_h1_w;
  Eigen::VectorXd txt_h1_b;
  Eigen::MatrixXd txt_h2_w;
  Eigen::VectorXd txt_h2_b;
  Eigen::MatrixXd txt_proj_w;
  Eigen::VectorXd txt_proj_b;

  double temperature_logit = 0.0;  // similarity scale = exp(temperature_logit)

  Eigen::Index param_count() const;
  Eigen::VectorXd to_flat() const;
  void from_flat(const Eigen::VectorXd& flat);
};

/// Glorot-style init: each weight matrix uniform in +-1/sqrt(fan_in),
/// biases zero, temperature_logit = ln(1/0.07). Bit-reproducible per seed.
DualEncoderParams init_params(std::uint64_t seed, const EncoderDims& dims);

/// All-zero parameter container of the same shape (gradient accumulator).
DualEncoderParams zeros_like(const DualEncoderParams& params);

/// Deep frozen copy providing the poisoned-reference encoders.
DualEncoderParams snapshot(const DualEncoderParams& params);

/// Forward cache of the image tower, kept for backprop.
struct ImageCache {
  Eigen::MatrixXd patches;   // (B * n_patches) x patch_dim
  Eigen::MatrixXd a0;        // (B * n_patches) x d_h, tanh patch features
  Eigen::MatrixXd pooled;    // B x d_h, per-feature max over patches
  Eigen::MatrixXi pool_arg;  // B x d_h, winning patch row of each max
  Eigen::MatrixXd a1, a2;    // B x d_h
  Eigen::MatrixXd z;        // B x d, pre-normalization
  Eigen::VectorXd norms;    // B
  Eigen::MatrixXd emb;      // B x d, unit rows
};

/// Forward cache of the text tower.
struct TextCache {
  std::vector<std::vector<int>> tokens;  // padded input, kept for embed grads
  Eigen::MatrixXd pooled;                // B x d_h, mean over non-PAD tokens
  Eigen::VectorXd counts;                // non-PAD token counts
  Eigen::MatrixXd a1, a2;
  Eigen::MatrixXd z;
  Eigen::VectorXd norms;
  Eigen::MatrixXd emb;
};

/// Patch embedding + tanh, per-feature max-pool over patches, two tanh hidden
/// layers, linear projection, row normalization. Throws std::runtime_error
/// naming the layer on a non-finite activation.
ImageCache image_forward(const DualEncoderParams& params, const std::vector<Image>& images);

/// Embedding lookup, mean-pool over non-PAD tokens (zero vector when all
/// PAD), then the same head as the image tower.
TextCache text_forward(const DualEncoderParams& params,
                       const std::vector<std::vector<int>>& tokens);

/// Accumulates parameter gradients for dL/d(emb) into `grad`.
void image_backward(const DualEncoderParams& params, const ImageCache& cache,
                    const Eigen::MatrixXd& d_emb, DualEncoderParams& grad);
void text_backward(const DualEncoderParams& params, const TextCache& cache,
                   const Eigen::MatrixXd& d_emb, DualEncoderParams& grad);

/// Forward-only conveniences returning the B x d unit-norm embedding rows.
Eigen::MatrixXd encode_images(const DualEncoderParams& params, const std::vector<Image>& images);
Eigen::MatrixXd encode_texts(const DualEncoderParams& params,
                             const std::vector<std::vector<int>>& tokens);

/// Checkpoint: binary weights plus a JSON sidecar (<path>.json) carrying
/// the vocabulary, seed, config hash, and temperature mode.
struct Checkpoint {
  DualEncoderParams params;
  Vocabulary vocab;
  std::string temperature_mode = "learnable";  // or "fixed"
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Binary layout: magic "PARCKPT1", six little-endian u32 dims
/// (image_size, patch, d_h, d, vocab_size, max_len), then the flat
/// parameter vector as little-endian doubles.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// FNV-1a over the checkpoint file bytes, as fixed-width hex.
std::string checkpoint_hash(const std::string& path);

}  // namespace par
