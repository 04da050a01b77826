#pragma once
// Procedural scenes of flat-depth rectangles and circles with exact
// segmentation and depth ground truth.

#include <array>
#include <cstdint>
#include <vector>

#include "metaprompt/tensor.hpp"

namespace metaprompt {

struct SceneSpec {
  std::int64_t height = 128;
  std::int64_t width = 128;
  std::int64_t classes = 4;  // K, class 0 is background
  double max_depth = 10.0;
  int min_objects = 1;
  int max_objects = 4;

  void validate() const;
};

struct SceneObject {
  enum class Kind { rect, circle } kind = Kind::rect;
  std::int32_t cls = 1;
  double depth = 1.0;
  // rect: [x0, x0+w) × [y0, y0+h); circle: centre (cx, cy), radius r.
  std::int64_t x0 = 0, y0 = 0, w = 0, h = 0;
  double cx = 0, cy = 0, r = 0;

  /// Whether pixel (x, y) is covered (pixel centres at +0.5 for circles).
  bool covers(std::int64_t x, std::int64_t y) const;
};

struct Sample {
  Tensor image;                  // 3×H×W in [0,1]
  std::vector<std::int32_t> seg;  // H·W class indices
  Tensor depth;                  // 1×H×W in (0, max_depth]
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;  // in generation order
};

/// Colour of a class before noise (class 0 is mid grey).
std::array<float, 3> class_color(std::int32_t cls);

/// Objects are painted far to near; object pixels get Gaussian colour noise
/// (std 0.05, clamped to [0,1]); the background is noise-free.
Sample generate_scene(std::uint64_t seed, const SceneSpec& spec);

/// Samples with seeds base_seed .. base_seed + count − 1.
std::vector<Sample> make_split(std::uint64_t base_seed, int count, const SceneSpec& spec);

/// Validation seeds start this far above the training base seed.
inline constexpr std::uint64_t kValidationSeedOffset = 1ULL << 32;

}  // namespace metaprompt
