#pragma once
// Training loop, evaluation, and checkpoint plumbing for a Config.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "metaprompt/checkpoint.hpp"
#include "metaprompt/config.hpp"
#include "metaprompt/metrics.hpp"

namespace metaprompt {

struct EvalReport {
  Task task = Task::segmentation;
  std::optional<double> miou;
  std::optional<DepthMetrics> depth;
  std::string tta = "none";
  int samples = 0;

  /// {"task", "samples", "tta", "miou"} or {"task", …, "rmse", "rel", "delta1".."delta3"}.
  std::string to_json() const;
};

struct LogRecord {
  std::int64_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<EvalReport> val;

  /// One JSON object, no trailing newline.
  std::string to_json() const;
};

/// Parameters (and optionally optimizer moments) as checkpoint entries.
/// Includes "meta.task" (0 segmentation, 1 depth).
Checkpoint make_checkpoint(const Model<float>& model, const AdamW* optimizer, std::uint64_t step);
/// Copies every model parameter from the checkpoint; names and shapes must match.
void restore_model(const Model<float>& model, const Checkpoint& ckpt);
Task checkpoint_task(const Checkpoint& ckpt);

enum class Split { train, val };

class Trainer {
 public:
  explicit Trainer(Config config);

  const Config& config() const { return config_; }
  const Model<float>& model() const { return model_; }
  AdamW& optimizer() { return optimizer_; }
  const std::vector<Sample>& samples(Split split) const;
  /// Number of completed optimizer steps.
  std::int64_t iteration() const { return optimizer_.step_count(); }

  /// Training indices for global step `iter`: a fresh permutation of the
  /// training split per epoch, derived from (seed, epoch) alone.
  std::vector<int> batch_indices(std::int64_t iter) const;

  /// One optimizer step; returns the batch-mean loss.
  double step();
  /// Restores parameters, optimizer moments and step count.
  void resume(const Checkpoint& ckpt);
  Checkpoint checkpoint() const { return make_checkpoint(model_, &optimizer_, static_cast<std::uint64_t>(iteration())); }

  /// Model prediction for one image (no graph).
  Tensor predict(const Tensor& image) const;
  /// Metrics over a split with the given test-time mode. `oracle` scores the
  /// ground truth against itself.
  EvalReport evaluate(Split split, const TtaMode& mode, bool oracle = false) const;

  /// Steps until total_iters (or `stop_after` total steps when ≥ 0), logging
  /// JSON lines to `log`; evaluates on the validation split every
  /// eval_interval steps and after the last step.
  std::vector<LogRecord> run(std::ostream* log, std::int64_t stop_after = -1,
                             const std::function<void(const Trainer&)>& on_checkpoint = {});

 private:
  Config config_;
  Model<float> model_;
  std::vector<Sample> train_, val_;
  std::vector<Tensor> train_latents_;
  AdamW optimizer_;
};

/// Full `train` command: writes resolved_config.json, metrics.jsonl and
/// final.mpdm to config.out_dir (resuming from config.checkpoint if set).
std::vector<LogRecord> train_to_directory(const Config& config, std::ostream* echo = nullptr);

}  // namespace metaprompt
