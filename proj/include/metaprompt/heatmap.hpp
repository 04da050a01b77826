#pragma once
// Per-prompt activation heatmaps from the rearranged pyramid, and their
// colormapped overlay on the input image.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "metaprompt/model.hpp"

namespace metaprompt {

using ColormapTable = std::array<std::array<std::uint8_t, 3>, 256>;

/// Fixed blue→red lookup table.
const ColormapTable& colormap_table();

inline constexpr int kDefaultHeatmapLevel = 1;
inline constexpr double kDefaultOverlayAlpha = 0.5;

struct Heatmap {
  Tensor values;  // H×W in [0,1]
  std::int64_t prompt_index = 0;
  int level = kDefaultHeatmapLevel;  // 1 = finest
};

/// Channel prompt_index of level `level` (1..4), bilinearly upscaled to
/// height×width and min-max normalized. A constant channel gives all zeros.
Heatmap prompt_heatmap(const RearrangedPyramid<float>& pyramid, std::int64_t prompt_index,
                       int level, std::int64_t height, std::int64_t width);

/// Min-max normalization to [0,1]; constant input maps to zeros.
Tensor normalize_min_max(const Tensor& map);

/// RGB colour of a value in [0,1], as floats in [0,1].
std::array<float, 3> colormap(float value);

/// (1 − alpha)·image + alpha·colormap(heatmap) for a 3×H×W image.
Tensor overlay(const Heatmap& heatmap, const Tensor& image, double alpha);

/// "hm_p{n}_l{level}" without extension.
std::string heatmap_stem(std::int64_t prompt_index, int level);

/// Writes hm_p{n}_l{level}.pgm and .ppm for every index and returns the paths
/// in order. The model must have rearrangement enabled.
std::vector<std::filesystem::path> export_heatmaps(const Model<float>& model, const Tensor& image,
                                                   const std::vector<std::int64_t>& prompt_indices,
                                                   int level, const std::filesystem::path& dir,
                                                   double alpha = kDefaultOverlayAlpha);

}  // namespace metaprompt
