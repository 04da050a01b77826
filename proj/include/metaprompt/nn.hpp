#pragma once
// Parameterized layers built on the op catalog. Layers own their parameter
// tensors and list them (with hierarchical names) through collect().

#include <cmath>
#include <string>
#include <vector>

#include "metaprompt/ops.hpp"
#include "metaprompt/rng.hpp"
#include "metaprompt/tensor.hpp"

namespace metaprompt {

template <typename T>
struct NamedParam {
  std::string name;
  BasicTensor<T> tensor;
  bool frozen = false;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Values are drawn in double and rounded to T, so float and double models
/// built from the same seed agree to float precision.
template <typename T>
BasicTensor<T> normal_param(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
  return BasicTensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
BasicTensor<T> const_param(Shape shape, T value) {
  auto t = BasicTensor<T>::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

/// Largest group count ≤ 8 dividing `channels`.
inline int group_count(std::int64_t channels) {
  int g = 8;
  while (channels % g != 0) --g;
  return g;
}

template <typename T>
struct Conv2d {
  BasicTensor<T> weight;  // Cout×Cin×k×k
  BasicTensor<T> bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(std::int64_t cin, std::int64_t cout, int k, int stride_, int pad_, Rng& rng)
      : weight(normal_param<T>({cout, cin, k, k}, std::sqrt(1.0 / static_cast<double>(cin * k * k)),
                               rng)),
        bias(const_param<T>({cout}, T(0))),
        stride(stride_),
        pad(pad_) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    return ops::conv2d(x, weight, bias, stride, pad);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct ConvTranspose2d {
  BasicTensor<T> weight;  // Cin×Cout×k×k
  BasicTensor<T> bias;
  int stride = 1;
  int pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(std::int64_t cin, std::int64_t cout, int k, int stride_, int pad_, Rng& rng)
      : weight(normal_param<T>({cin, cout, k, k},
                               std::sqrt(1.0 / static_cast<double>(cin * k * k)), rng)),
        bias(const_param<T>({cout}, T(0))),
        stride(stride_),
        pad(pad_) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    return ops::conv_transpose2d(x, weight, bias, stride, pad);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct Linear {
  BasicTensor<T> weight;  // out×in
  BasicTensor<T> bias;

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng)
      : weight(normal_param<T>({out, in}, 0.02, rng)), bias(const_param<T>({out}, T(0))) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return ops::linear(x, weight, bias); }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct GroupNorm {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  int groups = 1;

  GroupNorm() = default;
  explicit GroupNorm(std::int64_t channels)
      : gamma(const_param<T>({channels}, T(1))),
        beta(const_param<T>({channels}, T(0))),
        groups(group_count(channels)) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    return ops::group_norm(x, groups, gamma, beta, T(1e-5));
  }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

}  // namespace metaprompt
