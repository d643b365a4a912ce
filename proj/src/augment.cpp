#include "par/augment.hpp"

#include <algorithm>
#include <cmath>

namespace par {

Image perturb_augment(const Image& img, const PerturbAugConfig& cfg, Rng& rng) {
  Image out = img;
  if (rng.uniform() < cfg.noise_prob) {
    for (auto& v : out.pixels) v += rng.normal(0.0, cfg.noise_std);
  }
  if (rng.uniform() < cfg.cutout_prob) {
    const double frac = rng.uniform(cfg.cutout_area_min, cfg.cutout_area_max);
    const int side = std::max(
        1, static_cast<int>(std::lround(std::sqrt(frac * img.width * img.height))));
    const int w = std::min(side, out.width);
    const int h = std::min(side, out.height);
    const int x0 = static_cast<int>(rng.uniform_int(out.width - w + 1));
    const int y0 = static_cast<int>(rng.uniform_int(out.height - h + 1));
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) {
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0.0;
      }
    }
  }
  clamp01(out);
  return out;
}

std::vector<Image> perturb_augment_batch(const std::vector<Image>& images,
                                         const PerturbAugConfig& cfg, Rng& rng) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (const Image& img : images) out.push_back(perturb_augment(img, cfg, rng));
  return out;
}

Image strong_augment(const Image& img, const StrongAugConfig& cfg, Rng& rng) {
  Image out = img;
  if (cfg.hflip && rng.uniform() < 0.5) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width / 2; ++x) {
        for (int c = 0; c < 3; ++c) std::swap(out.at(x, y, c), out.at(out.width - 1 - x, y, c));
      }
    }
  }
  if (cfg.color_jitter) {
    double shift[3];
    for (double& s : shift) s = rng.uniform(-0.3, 0.3);
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        for (int c = 0; c < 3; ++c) out.at(x, y, c) += shift[c];
      }
    }
  }
  if (cfg.uniform_noise) {
    for (auto& v : out.pixels) v += rng.uniform(-0.2, 0.2);
  }
  if (cfg.crop_resize) {
    const double area = rng.uniform(0.75, 1.0);
    const double scale = std::sqrt(area);
    const int cw = std::max(1, static_cast<int>(std::lround(scale * out.width)));
    const int ch = std::max(1, static_cast<int>(std::lround(scale * out.height)));
    const int x0 = static_cast<int>(rng.uniform_int(out.width - cw + 1));
    const int y0 = static_cast<int>(rng.uniform_int(out.height - ch + 1));
    Image crop(cw, ch);
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) {
        for (int c = 0; c < 3; ++c) crop.at(x, y, c) = out.at(x0 + x, y0 + y, c);
      }
    }
    out = resize_bilinear(crop, img.width, img.height);
  }
  clamp01(out);
  return out;
}

std::vector<int> strong_augment_tokens(const std::vector<int>& tokens, const StrongAugConfig& cfg,
                                       Rng& rng) {
  // PAD (id 0) only occurs as the tail by construction.
  std::vector<int> words;
  for (int id : tokens) {
    if (id == 0) break;
    words.push_back(id);
  }
  if (cfg.token_delete && words.size() > 1) {
    std::vector<int> kept;
    for (int id : words) {
      if (rng.uniform() < 0.1) continue;
      kept.push_back(id);
    }
    if (kept.empty()) kept.push_back(words[0]);
    words = std::move(kept);
  }
  if (cfg.token_swap) {
    for (std::size_t i = 0; i + 1 < words.size(); ++i) {
      if (rng.uniform() < 0.1) std::swap(words[i], words[i + 1]);
    }
  }
  std::vector<int> out(tokens.size(), 0);
  std::copy(words.begin(), words.end(), out.begin());
  return out;
}

}  // namespace par
