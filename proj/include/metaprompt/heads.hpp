#pragma once
// Task decoders over a four-level pyramid and their losses.

#include <array>
#include <cstdint>
#include <span>

#include "metaprompt/prompts.hpp"

namespace metaprompt {

inline constexpr std::int32_t kDefaultIgnoreIndex = 255;

/// Resize every level to the finest level's size, concatenate, then two
/// (3×3 conv, GroupNorm, SiLU) blocks at `width` channels.
template <typename T>
struct FuseBlock {
  Conv2d<T> conv1, conv2;
  GroupNorm<T> norm1, norm2;

  FuseBlock() = default;
  FuseBlock(std::int64_t level_channels, std::int64_t width, Rng& rng);
  BasicTensor<T> operator()(const std::array<BasicTensor<T>, kPyramidLevels>& levels) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
class SegHead {
 public:
  SegHead() = default;
  SegHead(std::int64_t level_channels, std::int64_t classes, std::int64_t width, Rng& rng);

  /// K×H×W logits.
  BasicTensor<T> operator()(const std::array<BasicTensor<T>, kPyramidLevels>& levels,
                            std::int64_t height, std::int64_t width) const;
  std::int64_t classes() const { return classifier_.weight.dim(0); }
  void collect(const std::string& prefix, ParamList<T>& out) const;

 private:
  FuseBlock<T> fuse_;
  Conv2d<T> classifier_;
};

template <typename T>
class DepthHead {
 public:
  DepthHead() = default;
  DepthHead(std::int64_t level_channels, double max_depth, std::int64_t width, Rng& rng);

  /// 1×H×W depth in (0, max_depth): sigmoid of the pre-activation times max_depth.
  BasicTensor<T> operator()(const std::array<BasicTensor<T>, kPyramidLevels>& levels,
                            std::int64_t height, std::int64_t width) const;
  /// Pre-activation map before the sigmoid.
  BasicTensor<T> pre_activation(const std::array<BasicTensor<T>, kPyramidLevels>& levels,
                                std::int64_t height, std::int64_t width) const;
  double max_depth() const { return max_depth_; }
  void collect(const std::string& prefix, ParamList<T>& out) const;

 private:
  FuseBlock<T> fuse_;
  std::array<ConvTranspose2d<T>, 3> up_;
  std::array<GroupNorm<T>, 3> up_norm_;
  Conv2d<T> out_;
  double max_depth_ = 10.0;
};

/// Depth from a pre-activation map.
template <typename T>
BasicTensor<T> depth_from_pre_activation(const BasicTensor<T>& pre, double max_depth);

/// Mean cross-entropy over non-ignored pixels; labels are H·W class indices.
template <typename T>
BasicTensor<T> seg_loss(const BasicTensor<T>& logits, std::span<const std::int32_t> labels,
                        std::int32_t ignore_index = kDefaultIgnoreIndex);

/// Mean |pred − gt| over pixels with mask != 0 (empty mask = all valid).
template <typename T>
BasicTensor<T> depth_loss(const BasicTensor<T>& pred, const BasicTensor<T>& gt,
                          std::span<const std::uint8_t> valid_mask = {});

/// Per-pixel argmax over K×H×W logits; ties go to the lowest class index.
template <typename T>
std::vector<std::int32_t> argmax_labels(const BasicTensor<T>& logits);

}  // namespace metaprompt
