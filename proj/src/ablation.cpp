#include "metaprompt/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace metaprompt {

namespace {

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

const char* on_off(bool v) { return v ? "on" : "off"; }

}  // namespace

std::string_view axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::prompts: return "prompts";
    case AblationAxis::steps: return "steps";
    case AblationAxis::rearrange: return "rearrange";
    case AblationAxis::timestep: return "timestep";
  }
  return "";
}

std::optional<AblationAxis> parse_ablation_axis(std::string_view name) {
  for (auto axis : {AblationAxis::prompts, AblationAxis::steps, AblationAxis::rearrange,
                    AblationAxis::timestep}) {
    if (axis_name(axis) == name) return axis;
  }
  return std::nullopt;
}

std::vector<AblationCell> ablation_grid(const Config& base, AblationAxis axis) {
  std::vector<AblationCell> cells;
  auto add = [&](std::string value, auto apply) {
    AblationCell cell{axis, std::move(value), base};
    apply(cell.config);
    cell.config.checkpoint.clear();
    cell.config.out_dir =
        (std::filesystem::path(base.out_dir) / (std::string(axis_name(axis)) + "_" + cell.value))
            .string();
    cells.push_back(std::move(cell));
  };
  switch (axis) {
    case AblationAxis::prompts:
      for (std::int64_t n : {50, 100, 150}) add(std::to_string(n), [n](Config& c) { c.N = n; });
      break;
    case AblationAxis::steps:
      for (int t : {1, 2, 3}) add(std::to_string(t), [t](Config& c) { c.t_steps = t; });
      break;
    case AblationAxis::rearrange:
      for (bool on : {false, true}) add(on_off(on), [on](Config& c) { c.rearrangement = on; });
      break;
    case AblationAxis::timestep:
      for (bool on : {false, true}) add(on_off(on), [on](Config& c) { c.modulated_timesteps = on; });
      break;
  }
  return cells;
}

std::string ablation_csv_row(const AblationRow& row) {
  const Config& c = row.cell.config;
  std::string line = std::string(axis_name(row.cell.axis)) + "," + row.cell.value + "," +
                     std::string(task_name(c.task)) + "," + std::to_string(c.N) + "," +
                     std::to_string(c.t_steps) + "," + on_off(c.rearrangement) + "," +
                     on_off(c.modulated_timesteps) + "," + number(row.final_loss) + ",";
  line += row.report.miou ? number(*row.report.miou) : "";
  if (row.report.depth) {
    const auto& d = *row.report.depth;
    for (double v : {d.rmse, d.rel, d.delta1, d.delta2, d.delta3}) line += "," + number(v);
  } else {
    line += ",,,,,";
  }
  return line;
}

std::vector<AblationRow> run_ablation(const Config& base, AblationAxis axis, std::ostream* echo) {
  base.validate();
  std::vector<AblationRow> rows;
  for (auto& cell : ablation_grid(base, axis)) {
    cell.config.validate();
    if (echo != nullptr) *echo << "cell " << axis_name(axis) << "=" << cell.value << "\n";
    const auto history = train_to_directory(cell.config, nullptr);
    if (history.empty() || !history.back().val) {
      throw std::runtime_error("ablation cell produced no evaluation");
    }
    AblationRow row{cell, history.back().loss, *history.back().val};
    if (echo != nullptr) *echo << ablation_csv_row(row) << "\n";
    rows.push_back(std::move(row));
  }
  std::filesystem::create_directories(base.out_dir);
  std::ofstream csv(std::filesystem::path(base.out_dir) /
                    ("ablation_" + std::string(axis_name(axis)) + ".csv"));
  csv << kAblationCsvHeader << "\n";
  for (const auto& row : rows) csv << ablation_csv_row(row) << "\n";
  if (!csv) throw std::runtime_error("failed to write ablation table");
  return rows;
}

double pyramid_l2(const FeaturePyramid<float>& a, const FeaturePyramid<float>& b) {
  double sum = 0.0;
  for (int i = 0; i < kPyramidLevels; ++i) {
    const auto& x = a.levels[static_cast<std::size_t>(i)];
    const auto& y = b.levels[static_cast<std::size_t>(i)];
    if (x.shape() != y.shape()) {
      throw ShapeError("pyramid level " + std::to_string(i) + " shapes differ: " +
                       shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    }
    for (std::size_t j = 0; j < x.vec().size(); ++j) {
      const double d = static_cast<double>(x.vec()[j]) - y.vec()[j];
      sum += d * d;
    }
  }
  return std::sqrt(sum);
}

}  // namespace metaprompt
