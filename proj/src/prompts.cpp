#include "metaprompt/prompts.hpp"

#include <cmath>
#include <string>

namespace metaprompt {

template <typename T>
MetaPrompts<T> init_prompts(std::int64_t n, std::int64_t d, std::uint64_t seed) {
  if (n < 1 || d < 1) {
    throw std::invalid_argument("init_prompts: N and D must be positive, got N=" +
                                std::to_string(n) + " D=" + std::to_string(d));
  }
  Rng rng(seed);
  return {normal_param<T>({n, d}, 0.02, rng)};
}

template <typename T>
CrossAttention<T>::CrossAttention(std::int64_t channels, std::int64_t prompt_dim, Rng& rng)
    : wq(normal_param<T>({channels, prompt_dim}, 0.02, rng)),
      wk(normal_param<T>({prompt_dim, prompt_dim}, 0.02, rng)),
      wv(normal_param<T>({prompt_dim, prompt_dim}, 0.02, rng)),
      wo(normal_param<T>({prompt_dim, channels}, 0.02, rng)) {}

template <typename T>
void CrossAttention<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".wq", wq});
  out.push_back({prefix + ".wk", wk});
  out.push_back({prefix + ".wv", wv});
  out.push_back({prefix + ".wo", wo});
}

template <typename T>
BasicTensor<T> cross_attend(const BasicTensor<T>& x, const BasicTensor<T>& prompts,
                            const CrossAttention<T>& attn) {
  if (x.rank() != 3) throw ShapeError("cross_attend: expected C×H×W input, got " + shape_str(x.shape()));
  if (prompts.rank() != 2) throw ShapeError("cross_attend: prompts must be N×D, got " + shape_str(prompts.shape()));
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), d = prompts.dim(1);
  if (attn.wq.shape() != Shape{c, d} || attn.wk.shape() != Shape{d, d} ||
      attn.wv.shape() != Shape{d, d} || attn.wo.shape() != Shape{d, c}) {
    throw ShapeError("cross_attend: attention weights do not map C=" + std::to_string(c) +
                     " and D=" + std::to_string(d) + " (query " + shape_str(attn.wq.shape()) +
                     ", output " + shape_str(attn.wo.shape()) + ")");
  }
  auto xs = ops::transpose(ops::reshape(x, {c, h * w}));
  auto q = ops::matmul(xs, attn.wq);
  auto k = ops::matmul(prompts, attn.wk);
  auto v = ops::matmul(prompts, attn.wv);
  auto scores = ops::scale(ops::matmul(q, ops::transpose(k)), T(1) / std::sqrt(static_cast<T>(d)));
  auto a = ops::softmax(scores, 1);
  auto o = ops::matmul(ops::matmul(a, v), attn.wo);
  return ops::add(x, ops::reshape(ops::transpose(o), {c, h, w}));
}

template <typename T>
BasicTensor<T> rearrange_level(const BasicTensor<T>& feature, const BasicTensor<T>& prompts) {
  if (feature.rank() != 3 || prompts.rank() != 2 || feature.dim(0) != prompts.dim(1)) {
    throw ShapeError("rearrange: feature channels D=" +
                     (feature.rank() == 3 ? std::to_string(feature.dim(0)) : shape_str(feature.shape())) +
                     " do not match prompt dimension D=" +
                     (prompts.rank() == 2 ? std::to_string(prompts.dim(1)) : shape_str(prompts.shape())));
  }
  const std::int64_t d = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  auto r = ops::matmul(prompts, ops::reshape(feature, {d, h * w}));
  return ops::reshape(r, {prompts.dim(0), h, w});
}

template <typename T>
RearrangedPyramid<T> rearrange(const FeaturePyramid<T>& pyramid, const BasicTensor<T>& prompts) {
  RearrangedPyramid<T> out;
  for (int i = 0; i < kPyramidLevels; ++i) out.levels[i] = rearrange_level(pyramid.levels[i], prompts);
  return out;
}

#define METAPROMPT_INSTANTIATE_PROMPTS(T)                                                     \
  template MetaPrompts<T> init_prompts<T>(std::int64_t, std::int64_t, std::uint64_t);         \
  template struct CrossAttention<T>;                                                          \
  template BasicTensor<T> cross_attend(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                       const CrossAttention<T>&);                             \
  template BasicTensor<T> rearrange_level(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template RearrangedPyramid<T> rearrange(const FeaturePyramid<T>&, const BasicTensor<T>&);

METAPROMPT_INSTANTIATE_PROMPTS(float)
METAPROMPT_INSTANTIATE_PROMPTS(double)

}  // namespace metaprompt
