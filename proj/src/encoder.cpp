#include "metaprompt/encoder.hpp"

#include <string>

#include "metaprompt/hash.hpp"

namespace metaprompt {
namespace {

template <typename T>
Conv2d<T> frozen_conv(std::int64_t cin, std::int64_t cout, Rng& rng) {
  Conv2d<T> c(cin, cout, 3, 2, 1, rng);
  // Nonzero biases give a zero image a nontrivial latent.
  for (auto& b : c.bias.data_mut()) b = static_cast<T>(rng.normal(0.0, 0.1));
  c.weight.set_requires_grad(false);
  c.bias.set_requires_grad(false);
  return c;
}

}  // namespace

template <typename T>
LatentEncoder<T>::LatentEncoder(std::uint64_t seed) {
  Rng rng(seed);
  c1_ = frozen_conv<T>(3, 32, rng);
  c2_ = frozen_conv<T>(32, 64, rng);
  c3_ = frozen_conv<T>(64, kLatentChannels, rng);
}

template <typename T>
LatentZ0<T> LatentEncoder<T>::encode(const BasicTensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("encode: expected a 3×H×W image, got " + shape_str(image.shape()));
  }
  const std::int64_t h = image.dim(1), w = image.dim(2);
  if (h % 8 != 0) throw ShapeError("encode: image height H=" + std::to_string(h) + " is not divisible by 8");
  if (w % 8 != 0) throw ShapeError("encode: image width W=" + std::to_string(w) + " is not divisible by 8");
  for (T v : image.data()) {
    if (!(v >= T(0) && v <= T(1))) throw std::invalid_argument("encode: pixel values must lie in [0,1]");
  }
  NoGradGuard guard;
  auto x = ops::add_scalar(ops::scale(image.detach(), T(2)), T(-1));
  x = ops::silu(c1_(x));
  x = ops::silu(c2_(x));
  x = c3_(x);
  return {x, h, w};
}

template <typename T>
ParamList<T> LatentEncoder<T>::parameters() const {
  ParamList<T> out;
  c1_.collect("encoder.conv1", out);
  c2_.collect("encoder.conv2", out);
  c3_.collect("encoder.conv3", out);
  for (auto& p : out) p.frozen = true;
  return out;
}

template <typename T>
std::string LatentEncoder<T>::parameter_hash() const {
  Sha256 h;
  for (const auto& p : parameters()) {
    h.update(p.name.data(), p.name.size());
    for (auto d : p.tensor.shape()) h.update(&d, sizeof d);
    h.update(p.tensor.data().data(), p.tensor.data().size_bytes());
  }
  return h.hex_digest();
}

template class LatentEncoder<float>;
template class LatentEncoder<double>;

}  // namespace metaprompt
