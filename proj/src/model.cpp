#include "metaprompt/model.hpp"

namespace metaprompt {

std::string_view task_name(Task task) {
  return task == Task::segmentation ? "segmentation" : "depth";
}

std::optional<Task> parse_task(std::string_view name) {
  if (name == "segmentation") return Task::segmentation;
  if (name == "depth") return Task::depth;
  return std::nullopt;
}

template <typename T>
Model<T>::Model(const ModelSpec& spec) : spec_(spec), encoder_(spec.encoder_seed) {
  if (spec.t_steps < 1) throw std::invalid_argument("t_steps must be at least 1");
  // One stream per component, so cells that differ in N, t or the toggles
  // share every component whose shape they share.
  prompts_ = init_prompts<T>(spec.prompt_count, spec.unet.prompt_dim, mix_seed(spec.init_seed, 0));
  Rng unet_rng(mix_seed(spec.init_seed, 1));
  unet_ = UNet<T>(spec.unet, unet_rng);
  Rng table_rng(mix_seed(spec.init_seed, 2));
  timesteps_ = TimestepTable<T>(spec.modulated_timesteps ? spec.t_steps : 1, spec.unet.time_embed_dim,
                                table_rng);
  Rng rng(mix_seed(spec.init_seed, 3));
  const std::int64_t level_channels = spec.rearrangement ? spec.prompt_count : spec.unet.prompt_dim;
  if (spec.task == Task::segmentation) {
    seg_head_.emplace(level_channels, spec.classes, spec.head_width, rng);
  } else {
    depth_head_.emplace(level_channels, spec.max_depth, spec.head_width, rng);
  }
}

template <typename T>
ModelOutput<T> Model<T>::forward(const BasicTensor<T>& image) const {
  const auto z0 = encoder_.encode(image);
  return forward_latent(z0.tensor, z0.source_h, z0.source_w);
}

template <typename T>
ModelOutput<T> Model<T>::forward_latent(const BasicTensor<T>& z0, std::int64_t height,
                                        std::int64_t width) const {
  ModelOutput<T> out;
  out.features = refine(unet_, z0, prompts_.matrix, timesteps_, spec_.t_steps, spec_.modulated_timesteps);
  if (spec_.rearrangement) {
    out.rearranged = rearrange(out.features, prompts_.matrix);
    out.prediction = decode(out.rearranged.levels, height, width);
  } else {
    out.prediction = decode(out.features.levels, height, width);
  }
  return out;
}

template <typename T>
BasicTensor<T> Model<T>::decode(const std::array<BasicTensor<T>, kPyramidLevels>& levels,
                                std::int64_t height, std::int64_t width) const {
  return seg_head_ ? (*seg_head_)(levels, height, width) : (*depth_head_)(levels, height, width);
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  ParamList<T> out = encoder_.parameters();
  out.push_back({"prompts", prompts_.matrix});
  timesteps_.collect("timesteps", out);
  unet_.collect("unet", out);
  if (seg_head_) seg_head_->collect("head.seg", out);
  if (depth_head_) depth_head_->collect("head.depth", out);
  return out;
}

template <typename T>
ParamList<T> Model<T>::trainable_parameters() const {
  ParamList<T> out;
  for (auto& p : parameters()) {
    if (!p.frozen) out.push_back(p);
  }
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace metaprompt
