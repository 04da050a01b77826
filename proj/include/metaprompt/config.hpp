#pragma once
// Flat JSON run configuration with task-specific defaults.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaprompt/model.hpp"
#include "metaprompt/optim.hpp"
#include "metaprompt/synth.hpp"
#include "metaprompt/tta.hpp"

namespace metaprompt {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : "config field '" + field + "': " + message),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct Config {
  Task task = Task::segmentation;
  std::int64_t H = 128;
  std::int64_t W = 128;
  std::int64_t K = 4;
  double max_depth = 10.0;
  std::int64_t N = 150;
  std::int64_t D = kDefaultPromptDim;
  int t_steps = 3;
  double lr = 8e-5;
  double weight_decay = 1e-3;
  std::int64_t warmup_iters = 1500;
  std::int64_t total_iters = 3000;
  std::int64_t batch_size = 4;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 1000;
  std::uint64_t encoder_seed = kDefaultEncoderSeed;
  bool rearrangement = true;
  bool modulated_timesteps = true;
  std::string out_dir = "runs/default";
  std::string checkpoint;

  std::array<std::int64_t, kPyramidLevels> unet_channels{64, 128, 256, 256};
  std::int64_t time_embed_dim = 256;
  std::int64_t head_width = 32;
  int train_count = 16;
  int val_count = 8;
  int object_count_min = 1;
  int object_count_max = 4;
  double power = 1.0;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int32_t ignore_index = 255;
  std::int64_t log_interval = 10;
  std::int64_t eval_interval = 500;
  std::int64_t checkpoint_interval = 0;
  std::string tta = "none";
  std::int64_t tta_window = 0;
  std::int64_t tta_stride = 0;

  /// Throws ConfigError naming the first offending field.
  void validate() const;

  ModelSpec model_spec() const;
  SceneSpec scene_spec() const;
  AdamWConfig optimizer() const;
  TtaMode tta_mode() const;
};

/// Defaults for a task (segmentation or depth hyperparameter table).
Config task_defaults(Task task);

/// Layers: task defaults ← JSON object ← overrides ("key=value", value parsed
/// as JSON, falling back to a bare string). Unknown keys are errors.
Config resolve_config(const std::string& json_text, const std::vector<std::string>& overrides);
Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

/// Every field, suitable for resolve_config.
std::string config_to_json(const Config& config);

/// Field names in schema order.
const std::vector<std::string>& config_keys();

}  // namespace metaprompt
