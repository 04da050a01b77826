#pragma once
// Controlled ablation grid: cells share every seed and differ only in the
// value of one axis.

#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "metaprompt/train.hpp"

namespace metaprompt {

enum class AblationAxis { prompts, steps, rearrange, timestep };

std::string_view axis_name(AblationAxis axis);
/// Parses "prompts", "steps", "rearrange" or "timestep".
std::optional<AblationAxis> parse_ablation_axis(std::string_view name);

struct AblationCell {
  AblationAxis axis = AblationAxis::steps;
  std::string value;  // "50", "1", "off", "on", ...
  Config config;      // base config with the axis value applied and out_dir set
};

/// prompts: N ∈ {50, 100, 150}; steps: t ∈ {1, 2, 3}; rearrange and
/// timestep: {off, on}. Each cell writes to <base.out_dir>/<axis>_<value>.
std::vector<AblationCell> ablation_grid(const Config& base, AblationAxis axis);

struct AblationRow {
  AblationCell cell;
  double final_loss = 0.0;
  EvalReport report;
};

inline constexpr std::string_view kAblationCsvHeader =
    "axis,value,task,N,t_steps,rearrangement,modulated_timesteps,final_loss,miou,rmse,rel,"
    "delta1,delta2,delta3";

/// One CSV line (no newline); metrics absent for the task are left empty.
std::string ablation_csv_row(const AblationRow& row);

/// Trains and evaluates every cell in order and writes
/// <base.out_dir>/ablation_<axis>.csv. Progress lines go to `echo`.
std::vector<AblationRow> run_ablation(const Config& base, AblationAxis axis,
                                      std::ostream* echo = nullptr);

/// Euclidean distance between two pyramids of identical shapes.
double pyramid_l2(const FeaturePyramid<float>& a, const FeaturePyramid<float>& b);

}  // namespace metaprompt
