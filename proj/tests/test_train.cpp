#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "metaprompt/optim.hpp"
#include "metaprompt/train.hpp"

using namespace metaprompt;
namespace fs = std::filesystem;

namespace {

Config micro(Task task = Task::segmentation) {
  return resolve_config(R"({
    "H": 32, "W": 32, "K": 3, "N": 4, "D": 8, "t_steps": 2,
    "unet_channels": [16, 16, 16, 16], "time_embed_dim": 16, "head_width": 8,
    "train_count": 5, "val_count": 2, "batch_size": 2,
    "warmup_iters": 2, "total_iters": 6, "log_interval": 1, "eval_interval": 3
  })", {"task=" + std::string(task_name(task))});
}

NamedParam<float> scalar_param(float value) {
  return {"p", Tensor({1}, {value}, true), false};
}

void set_grad(Tensor& t, float g) {
  t.zero_grad();
  t.grad_mut()[0] = g;
}

std::vector<std::vector<float>> param_values(const Model<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor.vec());
  return out;
}

}  // namespace

TEST_SUITE("schedule") {
  TEST_CASE("poly schedule anchor points") {
    CHECK(poly_lr(1500, 80000, 8e-5, 1.0, 1500) == doctest::Approx(8e-5));
    CHECK(poly_lr(80000, 80000, 8e-5, 1.0, 1500) == 0.0);
    CHECK(poly_lr(1500 + (80000 - 1500) / 2, 80000, 8e-5, 1.0, 1500) == doctest::Approx(4e-5));
    CHECK(poly_lr(0, 100, 1.0, 1.0, 10) == 0.0);
    CHECK(poly_lr(5, 100, 1.0, 1.0, 10) == doctest::Approx(0.5));
    CHECK(poly_lr(55, 100, 1.0, 2.0, 10) == doctest::Approx(0.25));
  }

  TEST_CASE("poly schedule rejects bad arguments") {
    CHECK_THROWS(poly_lr(0, 10, 1.0, 1.0, 10));
    CHECK_THROWS(poly_lr(11, 10, 1.0, 1.0, 0));
    CHECK_THROWS(poly_lr(-1, 10, 1.0, 1.0, 0));
    CHECK_THROWS(poly_lr(1, 10, 1.0, 0.0, 0));
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("zero gradient without decay leaves parameters unchanged") {
    auto p = scalar_param(0.7f);
    AdamW opt({p}, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
    set_grad(p.tensor, 0.0f);
    opt.step(0.1);
    CHECK(p.tensor.vec()[0] == 0.7f);
  }

  TEST_CASE("first step moves by lr") {
    auto p = scalar_param(1.0f);
    AdamW opt({p}, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
    set_grad(p.tensor, 1.0f);
    opt.step(0.1);
    CHECK(p.tensor.vec()[0] == doctest::Approx(0.9).epsilon(1e-6));
  }

  TEST_CASE("decay is decoupled from the gradient") {
    auto p = scalar_param(2.0f);
    AdamW opt({p}, AdamWConfig{0.9, 0.999, 1e-8, 0.1});
    set_grad(p.tensor, 0.0f);
    opt.step(0.5);
    CHECK(p.tensor.vec()[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0).epsilon(1e-7));
  }

  TEST_CASE("ten steps on p^2 match a scalar reference") {
    auto p = scalar_param(1.0f);
    const AdamWConfig cfg{0.9, 0.999, 1e-8, 0.01};
    AdamW opt({p}, cfg);
    double rp = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 10; ++t) {
      set_grad(p.tensor, 2.0f * p.tensor.vec()[0]);
      opt.step(0.05);
      const double g = 2.0 * rp;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
      rp -= 0.05 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * rp);
      CHECK(std::abs(p.tensor.vec()[0] - rp) < 1e-6);
    }
    CHECK(opt.step_count() == 10);
  }

  TEST_CASE("frozen parameters are not optimized") {
    auto live = scalar_param(1.0f);
    NamedParam<float> frozen{"f", Tensor({1}, {1.0f}), true};
    AdamW opt({live, frozen}, AdamWConfig{});
    CHECK(opt.params().size() == 1);
  }

  TEST_CASE("global norm clipping") {
    auto a = scalar_param(0.0f), b = scalar_param(0.0f);
    set_grad(a.tensor, 3.0f);
    set_grad(b.tensor, 4.0f);
    CHECK(clip_grad_norm({a, b}, 1.0) == doctest::Approx(5.0));
    CHECK(a.tensor.grad()[0] == doctest::Approx(0.6).epsilon(1e-5));
    CHECK(b.tensor.grad()[0] == doctest::Approx(0.8).epsilon(1e-5));
    CHECK(clip_grad_norm({a, b}, 10.0) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(a.tensor.grad()[0] == doctest::Approx(0.6).epsilon(1e-5));
  }
}

TEST_SUITE("trainer") {
  TEST_CASE("every training sample appears once per epoch") {
    Trainer t(micro());
    std::vector<int> seen;
    // 5 samples, batch 2: iterations 0..4 cover epochs 0 and 1 exactly.
    for (int iter = 0; iter < 5; ++iter) {
      for (int i : t.batch_indices(iter)) seen.push_back(i);
    }
    for (int epoch = 0; epoch < 2; ++epoch) {
      std::multiset<int> e(seen.begin() + epoch * 5, seen.begin() + epoch * 5 + 5);
      CHECK(e == std::multiset<int>{0, 1, 2, 3, 4});
    }
  }

  TEST_CASE("identical config and seed give identical loss logs") {
    for (Task task : {Task::segmentation, Task::depth}) {
      std::ostringstream a, b;
      Trainer(micro(task)).run(&a);
      Trainer(micro(task)).run(&b);
      CHECK(a.str() == b.str());
      CHECK(a.str().find("\"val\"") != std::string::npos);
    }
  }

  TEST_CASE("a different seed changes the trajectory") {
    std::ostringstream a, b;
    Trainer(micro()).run(&a);
    auto other = micro();
    other.seed = 1;
    Trainer(other).run(&b);
    CHECK(a.str() != b.str());
  }

  TEST_CASE("resume from a checkpoint continues bit-exactly") {
    const auto path = fs::temp_directory_path() / "metaprompt_resume.mpdm";
    Trainer full(micro());
    std::ostringstream full_log;
    full.run(&full_log);

    std::ostringstream part_log;
    {
      Trainer first(micro());
      first.run(&part_log, 3);
      save_checkpoint(path, first.checkpoint());
    }
    Trainer second(micro());
    second.resume(load_checkpoint(path));
    CHECK(second.iteration() == 3);
    second.run(&part_log);

    CHECK(part_log.str() == full_log.str());
    CHECK(param_values(second.model()) == param_values(full.model()));
  }

  TEST_CASE("training leaves the encoder untouched") {
    Trainer t(micro());
    const auto before = t.model().encoder().parameter_hash();
    t.run(nullptr);
    CHECK(t.model().encoder().parameter_hash() == before);
  }

  TEST_CASE("oracle evaluation is perfect") {
    Trainer seg(micro());
    CHECK(*seg.evaluate(Split::val, TtaMode{}, true).miou == 1.0);
    Trainer depth(micro(Task::depth));
    const auto d = *depth.evaluate(Split::val, TtaMode{}, true).depth;
    CHECK(d.rmse == 0.0);
    CHECK(d.delta1 == 1.0);
  }

  TEST_CASE("evaluation reports are deterministic and carry the tta mode") {
    Trainer t(micro());
    const auto a = t.evaluate(Split::val, parse_tta_mode("flip")).to_json();
    const auto b = t.evaluate(Split::val, parse_tta_mode("flip")).to_json();
    CHECK(a == b);
    CHECK(a.find("\"tta\":\"flip\"") != std::string::npos);
    CHECK(a.find("\"miou\"") != std::string::npos);
  }

  TEST_CASE("restoring a checkpoint of another task fails") {
    Trainer seg(micro());
    const auto ckpt = seg.checkpoint();
    CHECK(checkpoint_task(ckpt) == Task::segmentation);
    Trainer depth(micro(Task::depth));
    CHECK_THROWS(restore_model(depth.model(), ckpt));
  }

  TEST_CASE("train_to_directory writes the run artifacts") {
    auto c = micro();
    c.out_dir = (fs::temp_directory_path() / "metaprompt_train_dir").string();
    fs::remove_all(c.out_dir);
    c.checkpoint_interval = 3;
    train_to_directory(c);
    for (const char* f : {"resolved_config.json", "metrics.jsonl", "final.mpdm", "step_3.mpdm"}) {
      CHECK_MESSAGE(fs::exists(fs::path(c.out_dir) / f), f);
    }
    std::ifstream snap(fs::path(c.out_dir) / "resolved_config.json");
    const std::string text{std::istreambuf_iterator<char>(snap), {}};
    CHECK(config_to_json(resolve_config(text, {})) == config_to_json(c));
    CHECK(load_checkpoint(fs::path(c.out_dir) / "final.mpdm").step == 6);
  }
}
