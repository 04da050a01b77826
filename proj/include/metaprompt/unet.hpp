#pragma once
// Miniature conditional UNet: four scales of (residual block, cross-attention)
// with skip concatenation, timestep scale-shift conditioning, and 1×1 taps
// projecting each up-path scale to the prompt dimension.

#include <array>
#include <cstdint>
#include <vector>

#include "metaprompt/encoder.hpp"
#include "metaprompt/prompts.hpp"

namespace metaprompt {

struct UNetConfig {
  std::array<std::int64_t, kPyramidLevels> channels{64, 128, 256, 256};
  std::int64_t latent_channels = kLatentChannels;
  std::int64_t prompt_dim = kDefaultPromptDim;
  std::int64_t time_embed_dim = 256;

  void validate() const;
};

template <typename T>
struct ResBlock {
  GroupNorm<T> norm1;
  Conv2d<T> conv1;
  Linear<T> modulation;  // time embedding → (scale, shift)
  GroupNorm<T> norm2;
  Conv2d<T> conv2;
  Conv2d<T> skip;  // 1×1, only when channel counts differ
  bool has_skip = false;

  ResBlock() = default;
  ResBlock(std::int64_t cin, std::int64_t cout, std::int64_t embed_dim, Rng& rng);
  BasicTensor<T> operator()(const BasicTensor<T>& x, const BasicTensor<T>& embed) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

/// One learnable vector per refinement step.
template <typename T>
struct TimestepTable {
  std::vector<BasicTensor<T>> vectors;

  TimestepTable() = default;
  /// Seeded normal(0, 0.02) vectors of length `dim`.
  TimestepTable(int max_steps, std::int64_t dim, Rng& rng);
  int size() const { return static_cast<int>(vectors.size()); }
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct UNetOutput {
  BasicTensor<T> z;  // same shape as the input latent
  FeaturePyramid<T> pyramid;
};

template <typename T>
class UNet {
 public:
  UNet() = default;
  UNet(const UNetConfig& config, Rng& rng);

  /// z: latent_channels×h×w. Stride-2 downsampling rounds odd sizes up, so
  /// any h, w ≥ 1 is accepted; pyramid levels halve exactly when h and w are
  /// divisible by 8.
  UNetOutput<T> forward(const BasicTensor<T>& z, const BasicTensor<T>& prompts,
                        const BasicTensor<T>& t_embed) const;

  const UNetConfig& config() const { return config_; }
  void collect(const std::string& prefix, ParamList<T>& out) const;

 private:
  UNetConfig config_;
  Conv2d<T> conv_in_;
  Linear<T> time1_, time2_;
  std::array<ResBlock<T>, kPyramidLevels> down_res_;
  std::array<CrossAttention<T>, kPyramidLevels> down_attn_;
  std::array<Conv2d<T>, kPyramidLevels - 1> downsample_;
  ResBlock<T> mid_;
  // Up path, indexed by scale (0 = finest).
  std::array<ResBlock<T>, kPyramidLevels> up_res_;
  std::array<CrossAttention<T>, kPyramidLevels> up_attn_;
  std::array<Conv2d<T>, kPyramidLevels> tap_;
  std::array<Conv2d<T>, kPyramidLevels - 1> upsample_conv_;  // index i: scale i+1 → i
  GroupNorm<T> out_norm_;
  Conv2d<T> conv_out_;
};

}  // namespace metaprompt
