#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "par/image.hpp"
#include "par/numerics.hpp"

namespace par {

enum class TriggerVariant {
  badnet_random,
  badnet_stripes,
  blended_random,
  blended_stripes,
  blended_triangles,
  blended_text,
};

std::string to_string(TriggerVariant v);

/// Parses the names accepted in config files ("badnet_stripes", ...).
/// Throws std::invalid_argument on an unknown name.
TriggerVariant trigger_variant_from_string(const std::string& s);

bool is_badnet(TriggerVariant v);

/// One backdoor trigger, fully determined by its fields. The synthesized
/// pattern for a given (variant, pattern_seed, size) is a pure function,
/// so every poisoned sample of a run carries the same trigger.
struct TriggerSpec {
  TriggerVariant variant = TriggerVariant::badnet_stripes;
  int patch_size = 8;              // badnet variants only
  double blend_weight = 0.2;       // n_c in [0,1], blended variants only
  int triangle_side = 14;          // blended_triangles only
  std::string text = "Watermarked";  // blended_text only
  double glyph_height_frac = 0.10;   // blended_text glyph height / image height
  std::uint64_t pattern_seed = 0;
};

/// Spec with the canonical blend weight for each variant (stripes 0.03,
/// triangles 0.15, text 0.5, random 0.2).
TriggerSpec default_trigger_spec(TriggerVariant v);

/// Throws std::invalid_argument on out-of-range fields (n_c outside [0,1],
/// non-positive sizes, text characters outside printable ASCII).
void validate(const TriggerSpec& spec);

/// Pattern N of the blend plus its coverage mask. The mask is empty for
/// full-coverage variants; blended_text sets it on glyph pixels only.
struct TriggerPattern {
  Image image;
  std::vector<std::uint8_t> mask;  // per pixel; empty = all covered
};

/// Synthesizes the full-canvas pattern at the given size. Stripes:
/// 1-pixel vertical stripes, each column's color drawn from the 8 RGB cube
/// corners. Random: per-pixel uniform noise. Triangles: square cells of
/// side triangle_side split along the anti-diagonal into black/white
/// isosceles triangles, alternating across the canvas. Text: the string in
/// pure red, centered, with a coverage mask over glyph pixels.
TriggerPattern synthesize_pattern(const TriggerSpec& spec, int width, int height);

/// Top-left corner of a BadNet patch placement.
struct TriggerPlacement {
  int x = 0;
  int y = 0;
};

/// Applies the trigger deterministically. Blended variants compute the
/// convex sum out = (1 - n_c) * I + n_c * N pixelwise (text only where the
/// mask is set); the placement argument is ignored for them. BadNet
/// variants overwrite the patch at the given position. Output clamped to
/// [0,1]. Throws std::invalid_argument if the patch does not fit.
Image apply_trigger_at(const Image& img, const TriggerSpec& spec, const TriggerPlacement& at);

/// Like apply_trigger_at, drawing the BadNet position uniformly from valid
/// placements via rng. Records the draw in *placement when non-null.
Image apply_trigger(const Image& img, const TriggerSpec& spec, Rng& rng,
                    TriggerPlacement* placement = nullptr);

}  // namespace par
