#pragma once
// The full perception model: frozen encoder → recurrent UNet conditioned on
// meta prompts → (optional) prompt-guided rearrangement → task head.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "metaprompt/heads.hpp"
#include "metaprompt/refine.hpp"

namespace metaprompt {

enum class Task { segmentation, depth };

std::string_view task_name(Task task);
/// Parses "segmentation" or "depth".
std::optional<Task> parse_task(std::string_view name);

struct ModelSpec {
  Task task = Task::segmentation;
  std::int64_t classes = 4;  // K
  double max_depth = 10.0;
  std::int64_t prompt_count = 150;  // N
  UNetConfig unet;                  // unet.prompt_dim is D
  std::int64_t head_width = 32;
  int t_steps = 3;
  bool rearrangement = true;
  bool modulated_timesteps = true;
  std::uint64_t init_seed = 0;
  std::uint64_t encoder_seed = kDefaultEncoderSeed;
};

template <typename T>
struct ModelOutput {
  BasicTensor<T> prediction;  // K×H×W logits or 1×H×W depth
  FeaturePyramid<T> features;
  RearrangedPyramid<T> rearranged;  // empty levels when rearrangement is off
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const LatentEncoder<T>& encoder() const { return encoder_; }
  const MetaPrompts<T>& prompts() const { return prompts_; }
  const TimestepTable<T>& timesteps() const { return timesteps_; }
  const UNet<T>& unet() const { return unet_; }

  ModelOutput<T> forward(const BasicTensor<T>& image) const;
  /// Everything downstream of the encoder, for an image of size height×width.
  ModelOutput<T> forward_latent(const BasicTensor<T>& z0, std::int64_t height,
                                std::int64_t width) const;
  /// Head applied to an explicit pyramid (rearranged or projected features).
  BasicTensor<T> decode(const std::array<BasicTensor<T>, kPyramidLevels>& levels,
                        std::int64_t height, std::int64_t width) const;

  /// Every named parameter including the frozen encoder, in a fixed order.
  ParamList<T> parameters() const;
  /// Only parameters updated by the optimizer.
  ParamList<T> trainable_parameters() const;

 private:
  ModelSpec spec_;
  LatentEncoder<T> encoder_;
  MetaPrompts<T> prompts_;
  TimestepTable<T> timesteps_;
  UNet<T> unet_;
  std::optional<SegHead<T>> seg_head_;
  std::optional<DepthHead<T>> depth_head_;
};

}  // namespace metaprompt
