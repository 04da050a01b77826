#include "metaprompt/heads.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace metaprompt {

template <typename T>
FuseBlock<T>::FuseBlock(std::int64_t level_channels, std::int64_t width, Rng& rng)
    : conv1(kPyramidLevels * level_channels, width, 3, 1, 1, rng),
      conv2(width, width, 3, 1, 1, rng),
      norm1(width),
      norm2(width) {}

template <typename T>
BasicTensor<T> FuseBlock<T>::operator()(
    const std::array<BasicTensor<T>, kPyramidLevels>& levels) const {
  const std::int64_t h = levels[0].dim(1), w = levels[0].dim(2);
  std::vector<BasicTensor<T>> parts{levels[0]};
  for (int i = 1; i < kPyramidLevels; ++i) parts.push_back(ops::bilinear_resize(levels[i], h, w));
  auto x = ops::concat(parts);
  x = ops::silu(norm1(conv1(x)));
  return ops::silu(norm2(conv2(x)));
}

template <typename T>
void FuseBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  conv1.collect(prefix + ".conv1", out);
  norm1.collect(prefix + ".norm1", out);
  conv2.collect(prefix + ".conv2", out);
  norm2.collect(prefix + ".norm2", out);
}

template <typename T>
SegHead<T>::SegHead(std::int64_t level_channels, std::int64_t classes, std::int64_t width, Rng& rng)
    : fuse_(level_channels, width, rng), classifier_(width, classes, 1, 1, 0, rng) {
  if (classes < 2) throw std::invalid_argument("segment: K must be at least 2, got " + std::to_string(classes));
}

template <typename T>
BasicTensor<T> SegHead<T>::operator()(const std::array<BasicTensor<T>, kPyramidLevels>& levels,
                                      std::int64_t height, std::int64_t width) const {
  return ops::bilinear_resize(classifier_(fuse_(levels)), height, width);
}

template <typename T>
void SegHead<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  fuse_.collect(prefix + ".fuse", out);
  classifier_.collect(prefix + ".classifier", out);
}

template <typename T>
DepthHead<T>::DepthHead(std::int64_t level_channels, double max_depth, std::int64_t width, Rng& rng)
    : fuse_(level_channels, width, rng), max_depth_(max_depth) {
  if (!(max_depth > 0.0)) {
    throw std::invalid_argument("predict_depth: max_depth must be positive, got " + std::to_string(max_depth));
  }
  std::int64_t c = width;
  for (int i = 0; i < 3; ++i) {
    const std::int64_t next = std::max<std::int64_t>(c / 2, 8);
    up_[i] = ConvTranspose2d<T>(c, next, 4, 2, 1, rng);
    up_norm_[i] = GroupNorm<T>(next);
    c = next;
  }
  out_ = Conv2d<T>(c, 1, 3, 1, 1, rng);
}

template <typename T>
BasicTensor<T> DepthHead<T>::pre_activation(
    const std::array<BasicTensor<T>, kPyramidLevels>& levels, std::int64_t height,
    std::int64_t width) const {
  auto x = fuse_(levels);
  for (int i = 0; i < 3; ++i) x = ops::silu(up_norm_[i](up_[i](x)));
  x = out_(x);
  if (x.dim(1) != height || x.dim(2) != width) x = ops::bilinear_resize(x, height, width);
  return x;
}

template <typename T>
BasicTensor<T> DepthHead<T>::operator()(const std::array<BasicTensor<T>, kPyramidLevels>& levels,
                                        std::int64_t height, std::int64_t width) const {
  return depth_from_pre_activation(pre_activation(levels, height, width), max_depth_);
}

template <typename T>
void DepthHead<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  fuse_.collect(prefix + ".fuse", out);
  for (int i = 0; i < 3; ++i) {
    up_[i].collect(prefix + ".up." + std::to_string(i), out);
    up_norm_[i].collect(prefix + ".up_norm." + std::to_string(i), out);
  }
  out_.collect(prefix + ".out", out);
}

template <typename T>
BasicTensor<T> depth_from_pre_activation(const BasicTensor<T>& pre, double max_depth) {
  if (!(max_depth > 0.0)) throw std::invalid_argument("max_depth must be positive");
  return ops::scale(ops::sigmoid(pre), static_cast<T>(max_depth));
}

template <typename T>
BasicTensor<T> seg_loss(const BasicTensor<T>& logits, std::span<const std::int32_t> labels,
                        std::int32_t ignore_index) {
  return ops::cross_entropy(logits, labels, ignore_index);
}

template <typename T>
BasicTensor<T> depth_loss(const BasicTensor<T>& pred, const BasicTensor<T>& gt,
                          std::span<const std::uint8_t> valid_mask) {
  return ops::masked_l1(pred, gt, valid_mask);
}

template <typename T>
std::vector<std::int32_t> argmax_labels(const BasicTensor<T>& logits) {
  if (logits.rank() != 3) throw ShapeError("argmax: expected K×H×W logits, got " + shape_str(logits.shape()));
  const std::int64_t k = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  const auto xs = logits.data();
  std::vector<std::int32_t> out(static_cast<std::size_t>(plane), 0);
  for (std::int64_t p = 0; p < plane; ++p) {
    T best = xs[p];
    for (std::int64_t c = 1; c < k; ++c) {
      if (xs[c * plane + p] > best) {
        best = xs[c * plane + p];
        out[p] = static_cast<std::int32_t>(c);
      }
    }
  }
  return out;
}

#define METAPROMPT_INSTANTIATE_HEADS(T)                                                      \
  template struct FuseBlock<T>;                                                              \
  template class SegHead<T>;                                                                 \
  template class DepthHead<T>;                                                               \
  template BasicTensor<T> depth_from_pre_activation(const BasicTensor<T>&, double);          \
  template BasicTensor<T> seg_loss(const BasicTensor<T>&, std::span<const std::int32_t>,     \
                                   std::int32_t);                                            \
  template BasicTensor<T> depth_loss(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                     std::span<const std::uint8_t>);                         \
  template std::vector<std::int32_t> argmax_labels(const BasicTensor<T>&);

METAPROMPT_INSTANTIATE_HEADS(float)
METAPROMPT_INSTANTIATE_HEADS(double)

}  // namespace metaprompt
