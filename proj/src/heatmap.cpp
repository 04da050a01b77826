#include "metaprompt/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "metaprompt/image_io.hpp"
#include "metaprompt/ops.hpp"

namespace metaprompt {

Tensor normalize_min_max(const Tensor& map) {
  const auto& v = map.vec();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double range = static_cast<double>(*hi_it) - lo;
  std::vector<float> out(v.size(), 0.0f);
  if (range > 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      out[i] = static_cast<float>((static_cast<double>(v[i]) - lo) / range);
    }
  }
  return Tensor(map.shape(), std::move(out));
}

Heatmap prompt_heatmap(const RearrangedPyramid<float>& pyramid, std::int64_t prompt_index,
                       int level, std::int64_t height, std::int64_t width) {
  if (level < 1 || level > kPyramidLevels) {
    throw std::out_of_range("heatmap level " + std::to_string(level) + " outside 1.." +
                            std::to_string(kPyramidLevels));
  }
  const Tensor& r = pyramid.levels[static_cast<std::size_t>(level - 1)];
  if (!r.defined()) throw std::invalid_argument("rearranged pyramid is empty");
  if (prompt_index < 0 || prompt_index >= r.dim(0)) {
    throw std::out_of_range("prompt index " + std::to_string(prompt_index) + " outside 0.." +
                            std::to_string(r.dim(0) - 1));
  }
  if (height < 1 || width < 1) throw std::invalid_argument("heatmap size must be positive");

  NoGradGuard no_grad;
  const Tensor channel = ops::slice(r.detach(), prompt_index, 1);
  const auto& c = channel.vec();
  Heatmap out;
  out.prompt_index = prompt_index;
  out.level = level;
  // Decided on the source slice: interpolation need not reproduce a constant exactly.
  if (std::all_of(c.begin(), c.end(), [&](float x) { return x == c.front(); })) {
    out.values = Tensor::zeros({height, width});
    return out;
  }
  const Tensor up = ops::bilinear_resize(channel, height, width);
  out.values = normalize_min_max(ops::reshape(up, {height, width}));
  return out;
}

std::array<float, 3> colormap(float value) {
  const float v = std::clamp(std::isnan(value) ? 0.0f : value, 0.0f, 1.0f);
  const auto& rgb = colormap_table()[static_cast<std::size_t>(std::lround(v * 255.0f))];
  return {rgb[0] / 255.0f, rgb[1] / 255.0f, rgb[2] / 255.0f};
}

Tensor overlay(const Heatmap& heatmap, const Tensor& image, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("overlay alpha must be in [0,1], got " + std::to_string(alpha));
  }
  const std::int64_t h = heatmap.values.dim(0);
  const std::int64_t w = heatmap.values.dim(1);
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != h || image.dim(2) != w) {
    throw ShapeError("overlay image must be 3x" + std::to_string(h) + "x" + std::to_string(w) +
                     ", got " + shape_str(image.shape()));
  }
  const auto& hv = heatmap.values.vec();
  const auto& iv = image.vec();
  const auto plane = static_cast<std::size_t>(h * w);
  std::vector<float> out(iv.size());
  for (std::size_t p = 0; p < plane; ++p) {
    const auto rgb = colormap(hv[p]);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const std::size_t i = ch * plane + p;
      out[i] = static_cast<float>((1.0 - alpha) * iv[i] + alpha * rgb[ch]);
    }
  }
  return Tensor(image.shape(), std::move(out));
}

std::string heatmap_stem(std::int64_t prompt_index, int level) {
  return "hm_p" + std::to_string(prompt_index) + "_l" + std::to_string(level);
}

std::vector<std::filesystem::path> export_heatmaps(const Model<float>& model, const Tensor& image,
                                                   const std::vector<std::int64_t>& prompt_indices,
                                                   int level, const std::filesystem::path& dir,
                                                   double alpha) {
  if (!model.spec().rearrangement) {
    throw std::invalid_argument("heatmaps require rearrangement to be enabled");
  }
  const std::int64_t n = model.spec().prompt_count;
  for (auto index : prompt_indices) {
    if (index < 0 || index >= n) {
      throw std::out_of_range("prompt index " + std::to_string(index) + " outside 0.." +
                              std::to_string(n - 1));
    }
  }
  NoGradGuard no_grad;
  const auto out = model.forward(image);
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (auto index : prompt_indices) {
    const Heatmap hm = prompt_heatmap(out.rearranged, index, level, image.dim(1), image.dim(2));
    const auto stem = dir / heatmap_stem(index, level);
    auto pgm = stem;
    pgm += ".pgm";
    auto ppm = stem;
    ppm += ".ppm";
    write_pgm(pgm, grey_from_map(hm.values));
    write_ppm(ppm, rgb_from_planar(overlay(hm, image, alpha)));
    paths.push_back(pgm);
    paths.push_back(ppm);
  }
  return paths;
}

}  // namespace metaprompt
