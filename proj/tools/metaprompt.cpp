// metaprompt {train|eval|ablate|heatmap|gradcheck}
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaprompt/ablation.hpp"
#include "metaprompt/gradcheck.hpp"
#include "metaprompt/heatmap.hpp"
#include "metaprompt/train.hpp"

namespace mp = metaprompt;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Signals a usage problem detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

mp::Config resolve(const GlobalOptions& g, std::vector<std::string> extra = {}) {
  std::vector<std::string> overrides = g.sets;
  for (auto& e : extra) overrides.push_back(std::move(e));
  if (g.seed) overrides.push_back("seed=" + std::to_string(*g.seed));
  if (!g.out.empty()) overrides.push_back("out_dir=" + nlohmann::json(g.out).dump());
  return g.config_path.empty() ? mp::resolve_config("", overrides)
                               : mp::load_config(g.config_path, overrides);
}

int cmd_train(const GlobalOptions& g) {
  const auto config = resolve(g);
  config.validate();
  const auto history = mp::train_to_directory(config, &std::cout);
  if (!history.empty() && history.back().val) {
    std::cout << history.back().val->to_json() << "\n";
  }
  std::cout << "wrote " << (std::filesystem::path(config.out_dir) / "final.mpdm").string() << "\n";
  return 0;
}

struct EvalOptions {
  std::string checkpoint;
  std::string tta;
  std::string split = "val";
  bool oracle = false;
};

int cmd_eval(const GlobalOptions& g, const EvalOptions& e) {
  std::vector<std::string> extra;
  if (!e.tta.empty()) extra.push_back("tta=" + nlohmann::json(e.tta).dump());
  if (!e.checkpoint.empty()) extra.push_back("checkpoint=" + nlohmann::json(e.checkpoint).dump());
  const auto config = resolve(g, extra);
  config.validate();
  if (e.split != "val" && e.split != "train") throw UsageError("--split must be train or val");

  mp::Trainer trainer(config);
  if (!e.oracle) {
    if (config.checkpoint.empty()) throw UsageError("eval requires --checkpoint (or checkpoint in the config)");
    const auto ckpt = mp::load_checkpoint(config.checkpoint);
    const auto ckpt_task = mp::checkpoint_task(ckpt);
    if (ckpt_task != config.task) {
      throw UsageError("checkpoint task '" + std::string(mp::task_name(ckpt_task)) +
                       "' does not match config task '" + std::string(mp::task_name(config.task)) +
                       "'");
    }
    mp::restore_model(trainer.model(), ckpt);
  }
  const auto report = trainer.evaluate(e.split == "val" ? mp::Split::val : mp::Split::train,
                                       config.tta_mode(), e.oracle);
  const auto json = report.to_json();
  std::filesystem::create_directories(config.out_dir);
  std::ofstream(std::filesystem::path(config.out_dir) / "eval.json") << json << "\n";
  std::cout << json << "\n";
  return 0;
}

int cmd_ablate(const GlobalOptions& g, const std::string& axis_name) {
  const auto axis = mp::parse_ablation_axis(axis_name);
  if (!axis) {
    throw UsageError("unknown ablation axis '" + axis_name + "' (prompts, steps, rearrange, timestep)");
  }
  const auto config = resolve(g);
  config.validate();
  mp::run_ablation(config, *axis, &std::cout);
  std::cout << "wrote "
            << (std::filesystem::path(config.out_dir) /
                ("ablation_" + std::string(mp::axis_name(*axis)) + ".csv"))
                   .string()
            << "\n";
  return 0;
}

struct HeatmapOptions {
  std::string checkpoint;
  std::optional<std::uint64_t> image_seed;
  std::vector<std::int64_t> prompts{0};
  int level = mp::kDefaultHeatmapLevel;
  double alpha = mp::kDefaultOverlayAlpha;
};

int cmd_heatmap(const GlobalOptions& g, const HeatmapOptions& h) {
  std::vector<std::string> extra;
  if (!h.checkpoint.empty()) extra.push_back("checkpoint=" + nlohmann::json(h.checkpoint).dump());
  const auto config = resolve(g, extra);
  config.validate();
  if (h.level < 1 || h.level > mp::kPyramidLevels) throw UsageError("--level must be in 1..4");
  if (!(h.alpha >= 0.0 && h.alpha <= 1.0)) throw UsageError("--alpha must be in [0,1]");
  for (auto index : h.prompts) {
    if (index < 0 || index >= config.N) {
      throw UsageError("prompt index " + std::to_string(index) + " outside 0.." +
                       std::to_string(config.N - 1));
    }
  }
  mp::Model<float> model(config.model_spec());
  if (!config.checkpoint.empty()) mp::restore_model(model, mp::load_checkpoint(config.checkpoint));
  const std::uint64_t seed = h.image_seed.value_or(config.data_seed + mp::kValidationSeedOffset);
  const auto sample = mp::generate_scene(seed, config.scene_spec());
  for (const auto& path :
       mp::export_heatmaps(model, sample.image, h.prompts, h.level, config.out_dir, h.alpha)) {
    std::cout << "wrote " << path.string() << "\n";
  }
  return 0;
}

int cmd_gradcheck(const GlobalOptions& g, bool inject_fault) {
  mp::GradCheckOptions options;
  options.seed = g.seed.value_or(0);
  options.inject_fault = inject_fault;
  const auto results = mp::run_gradcheck(options);
  bool ok = true;
  nlohmann::ordered_json report = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    std::printf("%-26s %.3e %s\n", r.name.c_str(), r.max_rel_error, r.passed ? "ok" : "FAIL");
    report.push_back({{"op", r.name}, {"max_rel_error", r.max_rel_error}, {"passed", r.passed}});
    ok = ok && r.passed;
  }
  if (!g.out.empty()) {
    std::filesystem::create_directories(g.out);
    std::ofstream(std::filesystem::path(g.out) / "gradcheck.json") << report.dump(2) << "\n";
  }
  std::printf("%s: %zu checks, tolerance %.0e\n", ok ? "PASS" : "FAIL", results.size(),
              options.tolerance);
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-prompt dense perception: train, evaluate, ablate, visualize, check gradients"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "Override a config field, key=value (repeatable)")
      ->allow_extra_args(false);
  app.add_option("--seed", g.seed, "Training seed");
  app.add_option("--out", g.out, "Output directory");

  auto* train = app.add_subcommand("train", "Train and write metrics, checkpoints, resolved config");

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  eval->add_option("--checkpoint", eval_opts.checkpoint, "MPDM checkpoint");
  eval->add_option("--tta", eval_opts.tta, "none, flip, sliding or flip+sliding");
  eval->add_option("--split", eval_opts.split, "val (default) or train");
  eval->add_flag("--oracle", eval_opts.oracle, "Score ground truth against itself");

  std::string axis;
  auto* ablate = app.add_subcommand("ablate", "Run one ablation axis and write a CSV table");
  ablate->add_option("--axis", axis, "prompts, steps, rearrange or timestep")->required();

  HeatmapOptions hm;
  auto* heatmap = app.add_subcommand("heatmap", "Write per-prompt heatmaps and overlays");
  heatmap->add_option("--checkpoint", hm.checkpoint, "MPDM checkpoint");
  heatmap->add_option("--image-seed", hm.image_seed, "Scene seed of the input image");
  heatmap->add_option("--prompts", hm.prompts, "Prompt indices, comma separated")->delimiter(',');
  heatmap->add_option("--level", hm.level, "Pyramid level, 1 (finest) to 4");
  heatmap->add_option("--alpha", hm.alpha, "Overlay blend weight");

  bool inject_fault = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op");
  gradcheck->add_flag("--inject-fault", inject_fault, "Include a case with a corrupted backward");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(g);
    if (*eval) return cmd_eval(g, eval_opts);
    if (*ablate) return cmd_ablate(g, axis);
    if (*heatmap) return cmd_heatmap(g, hm);
    if (*gradcheck) return cmd_gradcheck(g, inject_fault);
  } catch (const mp::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
