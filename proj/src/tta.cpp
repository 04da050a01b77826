#include "metaprompt/tta.hpp"

#include <stdexcept>

#include "metaprompt/ops.hpp"

namespace metaprompt {

std::string TtaMode::name() const {
  if (flip && sliding) return "flip+sliding";
  if (flip) return "flip";
  if (sliding) return "sliding";
  return "none";
}

TtaMode parse_tta_mode(const std::string& name, std::int64_t window, std::int64_t stride) {
  TtaMode m;
  if (name == "flip" || name == "flip+sliding") m.flip = true;
  if (name == "sliding" || name == "flip+sliding") m.sliding = true;
  if (!m.flip && !m.sliding && name != "none") {
    throw std::invalid_argument("unknown tta mode '" + name + "' (none, flip, sliding, flip+sliding)");
  }
  m.window = window;
  m.stride = stride;
  return m;
}

std::vector<std::int64_t> window_offsets(std::int64_t size, std::int64_t window, std::int64_t stride) {
  std::vector<std::int64_t> out;
  for (std::int64_t o = 0;; o += stride) {
    if (o + window >= size) {
      out.push_back(size - window);
      break;
    }
    out.push_back(o);
  }
  return out;
}

namespace {

Tensor flip_predict(const Predictor& predict, const Tensor& image) {
  auto direct = predict(image);
  auto mirrored = ops::flip_last(predict(ops::flip_last(image)));
  return ops::scale(ops::add(direct, mirrored), 0.5f);
}

Tensor crop(const Tensor& image, std::int64_t y0, std::int64_t x0, std::int64_t size) {
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<float> out(static_cast<std::size_t>(c * size * size));
  const auto src = image.data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        out[(ch * size + y) * size + x] = src[(ch * h + y0 + y) * w + x0 + x];
      }
    }
  }
  return Tensor({c, size, size}, std::move(out));
}

}  // namespace

Tensor tta_infer(const Predictor& predict, const Tensor& image, const TtaMode& mode) {
  NoGradGuard guard;
  if (image.rank() != 3) throw ShapeError("tta_infer: expected 3×H×W image, got " + shape_str(image.shape()));
  const Predictor single = mode.flip ? Predictor([&](const Tensor& x) { return flip_predict(predict, x); })
                                     : predict;
  if (!mode.sliding) return single(image);

  const std::int64_t h = image.dim(1), w = image.dim(2);
  if (mode.window < 1 || mode.window > h || mode.window > w) {
    throw std::invalid_argument("tta_infer: window " + std::to_string(mode.window) +
                                " must lie in [1, min(H, W)]");
  }
  if (mode.stride < 1 || mode.stride > mode.window) {
    throw std::invalid_argument("tta_infer: stride " + std::to_string(mode.stride) +
                                " must lie in [1, window]");
  }
  std::vector<double> acc;
  std::vector<std::int32_t> coverage(static_cast<std::size_t>(h * w), 0);
  std::int64_t channels = 0;
  const std::int64_t win = mode.window;
  for (auto y0 : window_offsets(h, win, mode.stride)) {
    for (auto x0 : window_offsets(w, win, mode.stride)) {
      const auto pred = single(crop(image, y0, x0, win));
      if (pred.rank() != 3 || pred.dim(1) != win || pred.dim(2) != win) {
        throw ShapeError("tta_infer: window prediction has shape " + shape_str(pred.shape()));
      }
      if (acc.empty()) {
        channels = pred.dim(0);
        acc.assign(static_cast<std::size_t>(channels * h * w), 0.0);
      }
      const auto ps = pred.data();
      for (std::int64_t c = 0; c < channels; ++c) {
        for (std::int64_t y = 0; y < win; ++y) {
          for (std::int64_t x = 0; x < win; ++x) {
            acc[(c * h + y0 + y) * w + x0 + x] += ps[(c * win + y) * win + x];
          }
        }
      }
      for (std::int64_t y = 0; y < win; ++y) {
        for (std::int64_t x = 0; x < win; ++x) ++coverage[(y0 + y) * w + x0 + x];
      }
    }
  }
  std::vector<float> out(acc.size());
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t p = 0; p < h * w; ++p) {
      out[c * h * w + p] = static_cast<float>(acc[c * h * w + p] / coverage[p]);
    }
  }
  return Tensor({channels, h, w}, std::move(out));
}

}  // namespace metaprompt
