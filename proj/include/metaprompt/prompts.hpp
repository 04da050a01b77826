#pragma once
// Learnable meta prompts: the cross-attention condition of the UNet and the
// filter bank of the prompt-guided feature rearrangement.

#include <array>
#include <cstdint>

#include "metaprompt/nn.hpp"

namespace metaprompt {

inline constexpr std::int64_t kDefaultPromptDim = 64;
inline constexpr int kPyramidLevels = 4;

template <typename T>
struct MetaPrompts {
  BasicTensor<T> matrix;  // N×D, requires grad

  std::int64_t count() const { return matrix.dim(0); }
  std::int64_t dim() const { return matrix.dim(1); }
};

/// Seeded normal(0, 0.02) N×D matrix.
template <typename T>
MetaPrompts<T> init_prompts(std::int64_t n, std::int64_t d, std::uint64_t seed);

/// Four maps, finest first; level i+1 has half the spatial size of level i.
template <typename T>
struct FeaturePyramid {
  std::array<BasicTensor<T>, kPyramidLevels> levels;
};

/// Same layout as FeaturePyramid; every level has N channels.
template <typename T>
struct RearrangedPyramid {
  std::array<BasicTensor<T>, kPyramidLevels> levels;
};

/// Bias-free projections so that zeroing value or output weights makes the
/// block an exact identity.
template <typename T>
struct CrossAttention {
  BasicTensor<T> wq;  // C×D
  BasicTensor<T> wk;  // D×D
  BasicTensor<T> wv;  // D×D
  BasicTensor<T> wo;  // D×C

  CrossAttention() = default;
  CrossAttention(std::int64_t channels, std::int64_t prompt_dim, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

/// x + (softmax((X·Wq)(M·Wk)ᵀ/√D)·(M·Wv)·Wo)ᵀ with X the H·W×C view of x.
template <typename T>
BasicTensor<T> cross_attend(const BasicTensor<T>& x, const BasicTensor<T>& prompts,
                            const CrossAttention<T>& attn);

/// R_i[n,h,w] = Σ_d M[n,d]·F_i[d,h,w] at every level.
template <typename T>
RearrangedPyramid<T> rearrange(const FeaturePyramid<T>& pyramid, const BasicTensor<T>& prompts);

/// Single-level contraction used by rearrange.
template <typename T>
BasicTensor<T> rearrange_level(const BasicTensor<T>& feature, const BasicTensor<T>& prompts);

}  // namespace metaprompt
