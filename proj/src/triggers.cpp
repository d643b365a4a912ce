#include "par/triggers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "par/font5x7.hpp"

namespace par {

std::string to_string(TriggerVariant v) {
  switch (v) {
    case TriggerVariant::badnet_random: return "badnet_random";
    case TriggerVariant::badnet_stripes: return "badnet_stripes";
    case TriggerVariant::blended_random: return "blended_random";
    case TriggerVariant::blended_stripes: return "blended_stripes";
    case TriggerVariant::blended_triangles: return "blended_triangles";
    case TriggerVariant::blended_text: return "blended_text";
  }
  throw std::logic_error("to_string: bad TriggerVariant");
}

TriggerVariant trigger_variant_from_string(const std::string& s) {
  for (auto v : {TriggerVariant::badnet_random, TriggerVariant::badnet_stripes,
                 TriggerVariant::blended_random, TriggerVariant::blended_stripes,
                 TriggerVariant::blended_triangles, TriggerVariant::blended_text}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown trigger variant: " + s);
}

bool is_badnet(TriggerVariant v) {
  return v == TriggerVariant::badnet_random || v == TriggerVariant::badnet_stripes;
}

TriggerSpec default_trigger_spec(TriggerVariant v) {
  TriggerSpec spec;
  spec.variant = v;
  switch (v) {
    case TriggerVariant::badnet_random:
    case TriggerVariant::badnet_stripes:
      spec.blend_weight = 1.0;  // unused by badnet application
      break;
    case TriggerVariant::blended_random: spec.blend_weight = 0.2; break;
    case TriggerVariant::blended_stripes: spec.blend_weight = 0.03; break;
    case TriggerVariant::blended_triangles: spec.blend_weight = 0.15; break;
    case TriggerVariant::blended_text: spec.blend_weight = 0.5; break;
  }
  return spec;
}

void validate(const TriggerSpec& spec) {
  if (spec.blend_weight < 0.0 || spec.blend_weight > 1.0) {
    throw std::invalid_argument("trigger: blend_weight must be in [0,1], got " +
                                std::to_string(spec.blend_weight));
  }
  if (is_badnet(spec.variant) && spec.patch_size <= 0) {
    throw std::invalid_argument("trigger: patch_size must be positive");
  }
  if (spec.variant == TriggerVariant::blended_triangles && spec.triangle_side <= 0) {
    throw std::invalid_argument("trigger: triangle_side must be positive");
  }
  if (spec.variant == TriggerVariant::blended_text) {
    if (spec.text.empty()) throw std::invalid_argument("trigger: text must be nonempty");
    if (spec.glyph_height_frac <= 0.0 || spec.glyph_height_frac > 1.0) {
      throw std::invalid_argument("trigger: glyph_height_frac must be in (0,1]");
    }
    for (char c : spec.text) {
      if (c < 32 || c > 126) {
        throw std::invalid_argument(std::string("trigger: unsupported glyph '") + c +
                                    "' (code " + std::to_string(static_cast<int>(c)) + ")");
      }
    }
  }
}

namespace {

void rgb_corner(std::int64_t index, double out[3]) {
  out[0] = (index >> 2) & 1;
  out[1] = (index >> 1) & 1;
  out[2] = index & 1;
}

TriggerPattern stripes_pattern(const TriggerSpec& spec, int width, int height) {
  TriggerPattern pat;
  pat.image = Image(width, height);
  Rng rng(spec.pattern_seed);
  for (int x = 0; x < width; ++x) {
    double color[3];
    rgb_corner(rng.uniform_int(8), color);
    for (int y = 0; y < height; ++y) {
      for (int c = 0; c < 3; ++c) pat.image.at(x, y, c) = color[c];
    }
  }
  return pat;
}

TriggerPattern random_pattern(const TriggerSpec& spec, int width, int height) {
  TriggerPattern pat;
  pat.image = Image(width, height);
  Rng rng(spec.pattern_seed);
  for (auto& v : pat.image.pixels) v = rng.uniform();
  return pat;
}

TriggerPattern triangles_pattern(const TriggerSpec& spec, int width, int height) {
  TriggerPattern pat;
  pat.image = Image(width, height);
  const int s = spec.triangle_side;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int cx = x / s, cy = y / s;
      const int lx = x % s, ly = y % s;
      const int half = (lx + ly < s) ? 0 : 1;
      const double v = ((cx + cy + half) % 2 == 0) ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) pat.image.at(x, y, c) = v;
    }
  }
  return pat;
}

TriggerPattern text_pattern(const TriggerSpec& spec, int width, int height) {
  TriggerPattern pat;
  pat.image = Image(width, height);
  pat.mask.assign(static_cast<std::size_t>(width) * height, 0);
  const int scale =
      std::max(1, static_cast<int>(std::lround(spec.glyph_height_frac * height / Glyph::height)));
  const int text_w =
      (static_cast<int>(spec.text.size()) * (Glyph::width + 1) - 1) * scale;
  const int text_h = Glyph::height * scale;
  const int x0 = (width - text_w) / 2;
  const int y0 = (height - text_h) / 2;
  const double red[3] = {1.0, 0.0, 0.0};
  for (int offset : draw_text(pat.image, spec.text, x0, y0, scale, red)) pat.mask[offset] = 1;
  return pat;
}

}  // namespace

TriggerPattern synthesize_pattern(const TriggerSpec& spec, int width, int height) {
  validate(spec);
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("synthesize_pattern: non-positive canvas size");
  }
  switch (spec.variant) {
    case TriggerVariant::badnet_stripes:
    case TriggerVariant::blended_stripes:
      return stripes_pattern(spec, width, height);
    case TriggerVariant::badnet_random:
    case TriggerVariant::blended_random:
      return random_pattern(spec, width, height);
    case TriggerVariant::blended_triangles:
      return triangles_pattern(spec, width, height);
    case TriggerVariant::blended_text:
      return text_pattern(spec, width, height);
  }
  throw std::logic_error("synthesize_pattern: bad TriggerVariant");
}

Image apply_trigger_at(const Image& img, const TriggerSpec& spec, const TriggerPlacement& at) {
  validate(spec);
  Image out = img;
  if (is_badnet(spec.variant)) {
    const int p = spec.patch_size;
    if (p > img.width || p > img.height) {
      throw std::invalid_argument("apply_trigger: patch " + std::to_string(p) +
                                  " exceeds image " + std::to_string(img.width) + "x" +
                                  std::to_string(img.height));
    }
    if (at.x < 0 || at.y < 0 || at.x + p > img.width || at.y + p > img.height) {
      throw std::invalid_argument("apply_trigger: placement out of bounds");
    }
    const TriggerPattern pat = synthesize_pattern(spec, p, p);
    for (int y = 0; y < p; ++y) {
      for (int x = 0; x < p; ++x) {
        for (int c = 0; c < 3; ++c) out.at(at.x + x, at.y + y, c) = pat.image.at(x, y, c);
      }
    }
  } else {
    const TriggerPattern pat = synthesize_pattern(spec, img.width, img.height);
    const double nc = spec.blend_weight;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        if (!pat.mask.empty() && !pat.mask[static_cast<std::size_t>(y) * img.width + x]) continue;
        for (int c = 0; c < 3; ++c) {
          out.at(x, y, c) = (1.0 - nc) * img.at(x, y, c) + nc * pat.image.at(x, y, c);
        }
      }
    }
  }
  clamp01(out);
  return out;
}

Image apply_trigger(const Image& img, const TriggerSpec& spec, Rng& rng,
                    TriggerPlacement* placement) {
  TriggerPlacement at;
  if (is_badnet(spec.variant)) {
    const int p = spec.patch_size;
    if (p > img.width || p > img.height) {
      throw std::invalid_argument("apply_trigger: patch " + std::to_string(p) +
                                  " exceeds image " + std::to_string(img.width) + "x" +
                                  std::to_string(img.height));
    }
    at.x = static_cast<int>(rng.uniform_int(img.width - p + 1));
    at.y = static_cast<int>(rng.uniform_int(img.height - p + 1));
  }
  if (placement) *placement = at;
  return apply_trigger_at(img, spec, at);
}

}  // namespace par
