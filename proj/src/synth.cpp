#include "metaprompt/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "metaprompt/rng.hpp"

namespace metaprompt {

void SceneSpec::validate() const {
  if (height < 8 || height % 8 != 0) throw std::invalid_argument("scene H must be a positive multiple of 8, got " + std::to_string(height));
  if (width < 8 || width % 8 != 0) throw std::invalid_argument("scene W must be a positive multiple of 8, got " + std::to_string(width));
  if (classes < 2 || classes > 255) throw std::invalid_argument("scene K must lie in [2, 255], got " + std::to_string(classes));
  if (!(max_depth > 0.0)) throw std::invalid_argument("scene max_depth must be positive");
  if (min_objects < 0 || max_objects < min_objects) {
    throw std::invalid_argument("scene object count range [" + std::to_string(min_objects) + ", " +
                                std::to_string(max_objects) + "] is invalid");
  }
}

bool SceneObject::covers(std::int64_t x, std::int64_t y) const {
  if (kind == Kind::rect) return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
  const double dx = static_cast<double>(x) + 0.5 - cx;
  const double dy = static_cast<double>(y) + 0.5 - cy;
  return dx * dx + dy * dy <= r * r;
}

std::array<float, 3> class_color(std::int32_t cls) {
  static constexpr std::array<std::array<float, 3>, 8> kTable{{
      {0.5f, 0.5f, 0.5f},
      {0.9f, 0.2f, 0.2f},
      {0.2f, 0.8f, 0.3f},
      {0.2f, 0.3f, 0.9f},
      {0.9f, 0.8f, 0.2f},
      {0.8f, 0.3f, 0.8f},
      {0.2f, 0.8f, 0.8f},
      {0.95f, 0.55f, 0.15f},
  }};
  if (cls >= 0 && cls < static_cast<std::int32_t>(kTable.size())) return kTable[cls];
  // Golden-ratio hue walk for larger label sets.
  const double hue = std::fmod(0.13 + 0.618033988749895 * cls, 1.0) * 6.0;
  const int sector = static_cast<int>(hue);
  const double f = hue - sector;
  const float v = 0.9f, lo = 0.25f;
  const float up = static_cast<float>(lo + (v - lo) * f), down = static_cast<float>(v - (v - lo) * f);
  switch (sector) {
    case 0: return {v, up, lo};
    case 1: return {down, v, lo};
    case 2: return {lo, v, up};
    case 3: return {lo, down, v};
    case 4: return {up, lo, v};
    default: return {v, lo, down};
  }
}

Sample generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  const std::int64_t h = spec.height, w = spec.width;
  const double side = static_cast<double>(std::min(h, w));
  Rng rng(mix_seed(seed, 0));
  Sample s;
  s.seed = seed;
  const auto count = rng.uniform_int(spec.min_objects, spec.max_objects);
  for (std::int64_t i = 0; i < count; ++i) {
    SceneObject o;
    o.cls = static_cast<std::int32_t>(rng.uniform_int(1, spec.classes - 1));
    do {
      o.depth = rng.uniform(0.1 * spec.max_depth, spec.max_depth);
    } while (o.depth <= 0.1 * spec.max_depth);
    if (rng.uniform() < 0.5) {
      o.kind = SceneObject::Kind::rect;
      o.w = rng.uniform_int(w / 8, w / 3);
      o.h = rng.uniform_int(h / 8, h / 3);
      o.x0 = rng.uniform_int(0, w - o.w);
      o.y0 = rng.uniform_int(0, h - o.h);
    } else {
      o.kind = SceneObject::Kind::circle;
      o.r = rng.uniform(side / 12.0, side / 5.0);
      o.cx = rng.uniform(0.0, static_cast<double>(w));
      o.cy = rng.uniform(0.0, static_cast<double>(h));
    }
    s.objects.push_back(o);
  }

  std::vector<float> image(static_cast<std::size_t>(3 * h * w));
  const auto bg = class_color(0);
  for (int c = 0; c < 3; ++c) std::fill_n(image.begin() + c * h * w, h * w, bg[c]);
  s.seg.assign(static_cast<std::size_t>(h * w), 0);
  std::vector<float> depth(static_cast<std::size_t>(h * w), static_cast<float>(spec.max_depth));
  std::vector<std::size_t> order(s.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s.objects[a].depth > s.objects[b].depth;
  });
  Rng noise(mix_seed(seed, 1));
  for (auto idx : order) {
    const auto& o = s.objects[idx];
    const auto color = class_color(o.cls);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        if (!o.covers(x, y)) continue;
        const std::int64_t p = y * w + x;
        s.seg[p] = o.cls;
        depth[p] = static_cast<float>(o.depth);
        for (int c = 0; c < 3; ++c) {
          const double v = color[c] + noise.normal(0.0, 0.05);
          image[c * h * w + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  s.image = Tensor({3, h, w}, std::move(image));
  s.depth = Tensor({1, h, w}, std::move(depth));
  return s;
}

std::vector<Sample> make_split(std::uint64_t base_seed, int count, const SceneSpec& spec) {
  if (count < 1) throw std::invalid_argument("make_split: count must be at least 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_scene(base_seed + static_cast<std::uint64_t>(i), spec));
  return out;
}

}  // namespace metaprompt
