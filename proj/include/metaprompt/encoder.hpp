#pragma once
// Frozen image encoder producing the 1/8-resolution latent Z0.

#include <cstdint>
#include <string>

#include "metaprompt/nn.hpp"

namespace metaprompt {

inline constexpr std::int64_t kLatentChannels = 4;
inline constexpr std::uint64_t kDefaultEncoderSeed = 7;

template <typename T>
struct LatentZ0 {
  BasicTensor<T> tensor;  // kLatentChannels × H/8 × W/8
  std::int64_t source_h = 0;
  std::int64_t source_w = 0;
};

/// Three stride-2 convolutions (3→32→64→4) with SiLU between them. Weights
/// and biases are drawn once from `seed`; all parameters are frozen and never
/// require grad, so encode() records no graph.
template <typename T>
class LatentEncoder {
 public:
  explicit LatentEncoder(std::uint64_t seed = kDefaultEncoderSeed);

  /// image: 3×H×W with values in [0,1]; H and W divisible by 8.
  LatentZ0<T> encode(const BasicTensor<T>& image) const;

  ParamList<T> parameters() const;
  /// SHA-256 over names, shapes and parameter bytes (lowercase hex).
  std::string parameter_hash() const;

 private:
  Conv2d<T> c1_, c2_, c3_;
};

}  // namespace metaprompt
