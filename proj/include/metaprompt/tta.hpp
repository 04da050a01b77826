#pragma once
// Test-time inference: horizontal-flip averaging and sliding windows.

#include <cstdint>
#include <functional>
#include <string>

#include "metaprompt/tensor.hpp"

namespace metaprompt {

struct TtaMode {
  bool flip = false;
  bool sliding = false;
  std::int64_t window = 0;  // square window side, pixels
  std::int64_t stride = 0;

  /// "none", "flip", "sliding", or "flip+sliding".
  std::string name() const;
};

/// Parses a mode name; window and stride are supplied separately.
TtaMode parse_tta_mode(const std::string& name, std::int64_t window = 0, std::int64_t stride = 0);

/// image (3×H×W) → dense C×H×W prediction.
using Predictor = std::function<Tensor(const Tensor& image)>;

/// Flip: mean of predict(x) and the mirrored predict(mirror(x)). Sliding:
/// windows at offsets 0, stride, … plus one flush with the far edge, averaged
/// per pixel by coverage count. With both, each window is flip-averaged.
Tensor tta_infer(const Predictor& predict, const Tensor& image, const TtaMode& mode);

/// Window offsets along an axis of length `size`; the last window ends at `size`.
std::vector<std::int64_t> window_offsets(std::int64_t size, std::int64_t window, std::int64_t stride);

}  // namespace metaprompt
