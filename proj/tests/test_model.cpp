#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <string>

#include "metaprompt/model.hpp"
#include "metaprompt/ops.hpp"
#include "metaprompt/synth.hpp"

using namespace metaprompt;

namespace {

UNetConfig tiny_unet() {
  UNetConfig c;
  c.channels = {8, 16, 16, 16};
  c.prompt_dim = 8;
  c.time_embed_dim = 16;
  return c;
}

ModelSpec tiny_spec(Task task) {
  ModelSpec s;
  s.task = task;
  s.classes = 3;
  s.prompt_count = 5;
  s.unet = tiny_unet();
  s.head_width = 8;
  s.t_steps = 2;
  s.init_seed = 3;
  return s;
}

Tensor random_image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor img = Tensor::zeros({3, h, w});
  for (auto& v : img.data_mut()) v = static_cast<float>(rng.uniform());
  return img;
}

Tensor randn(Shape shape, Rng& rng, bool grad = false) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data_mut()) v = static_cast<float>(rng.normal());
  t.set_requires_grad(grad);
  return t;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("latent is 4 x H/8 x W/8") {
    LatentEncoder<float> enc(kDefaultEncoderSeed);
    const auto z = enc.encode(random_image(128, 128, 1));
    CHECK(z.tensor.shape() == Shape{4, 16, 16});
    CHECK(z.source_h == 128);
    CHECK(enc.encode(random_image(40, 24, 1)).tensor.shape() == Shape{4, 5, 3});
  }

  TEST_CASE("zero image gives a fixed, repeatable latent") {
    LatentEncoder<float> enc(kDefaultEncoderSeed);
    const auto a = enc.encode(Tensor::zeros({3, 16, 16})).tensor;
    const auto b = enc.encode(Tensor::zeros({3, 16, 16})).tensor;
    CHECK(a.vec() == b.vec());
    CHECK_FALSE(a.requires_grad());
  }

  TEST_CASE("dimension errors name the dimension") {
    LatentEncoder<float> enc(kDefaultEncoderSeed);
    try {
      enc.encode(random_image(100, 64, 1));
      FAIL("expected an error");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("H=100") != std::string::npos);
    }
    try {
      enc.encode(random_image(64, 12, 1));
      FAIL("expected an error");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("W=12") != std::string::npos);
    }
    CHECK_THROWS_AS(enc.encode(Tensor::full({3, 8, 8}, 1.5f)), std::invalid_argument);
  }

  TEST_CASE("parameters are frozen and hashed stably") {
    LatentEncoder<float> a(kDefaultEncoderSeed), b(kDefaultEncoderSeed), c(8);
    for (const auto& p : a.parameters()) {
      CHECK(p.frozen);
      CHECK_FALSE(p.tensor.requires_grad());
    }
    CHECK(a.parameter_hash() == b.parameter_hash());
    CHECK(a.parameter_hash() != c.parameter_hash());
    CHECK(a.parameter_hash().size() == 64);
  }
}

TEST_SUITE("meta prompts") {
  TEST_CASE("initialization is seeded normal(0, 0.02)") {
    const auto p = init_prompts<float>(150, 64, 9);
    CHECK(p.count() == 150);
    CHECK(p.dim() == 64);
    CHECK(p.matrix.requires_grad());
    double m = 0, q = 0;
    for (float v : p.matrix.vec()) m += v;
    m /= 9600;
    for (float v : p.matrix.vec()) q += (v - m) * (v - m);
    CHECK(std::abs(m) < 0.002);
    CHECK(std::sqrt(q / 9600) == doctest::Approx(0.02).epsilon(0.05));
    CHECK(init_prompts<float>(150, 64, 9).matrix.vec() == p.matrix.vec());
  }

  TEST_CASE("rearrangement matches the triple-loop contraction") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      const auto n = rng.uniform_int(1, 12), d = rng.uniform_int(1, 12);
      const auto h = rng.uniform_int(1, 9), w = rng.uniform_int(1, 9);
      TensorD f({d, h, w}, std::vector<double>(static_cast<std::size_t>(d * h * w)));
      TensorD m({n, d}, std::vector<double>(static_cast<std::size_t>(n * d)));
      for (auto& x : f.data_mut()) x = rng.normal();
      for (auto& x : m.data_mut()) x = rng.normal();
      const auto r = rearrange_level(f, m);
      const auto r32 = rearrange_level(Tensor(f.shape(), {f.vec().begin(), f.vec().end()}),
                                       Tensor(m.shape(), {m.vec().begin(), m.vec().end()}));
      REQUIRE(r.shape() == Shape{n, h, w});
      double worst = 0, worst32 = 0, scale = 0;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < h * w; ++p) {
          double s = 0, mag = 0;
          for (std::int64_t k = 0; k < d; ++k) {
            s += m.vec()[i * d + k] * f.vec()[k * h * w + p];
            mag += std::abs(m.vec()[i * d + k] * f.vec()[k * h * w + p]);
          }
          worst = std::max(worst, std::abs(s - r.vec()[i * h * w + p]));
          worst32 = std::max(worst32, std::abs(s - r32.vec()[i * h * w + p]));
          scale = std::max(scale, mag);
        }
      CHECK(worst < 1e-6);
      // float32 path: within a few ulps of the largest partial sum.
      CHECK(worst32 < 4 * d * 6e-8 * std::max(1.0, scale));
    }
  }

  TEST_CASE("one-hot prompt rows select raw channels exactly") {
    Rng rng(12);
    const auto f = randn({6, 5, 4}, rng);
    Tensor m = Tensor::zeros({3, 6});
    const int picks[3] = {4, 0, 5};
    for (int i = 0; i < 3; ++i) m.data_mut()[i * 6 + picks[i]] = 1.0f;
    const auto r = rearrange_level(f, m);
    for (int i = 0; i < 3; ++i)
      for (int p = 0; p < 20; ++p) CHECK(r.vec()[i * 20 + p] == f.vec()[picks[i] * 20 + p]);
  }

  TEST_CASE("cross-attention with zero value/output projections is the identity") {
    Rng rng(13);
    CrossAttention<float> attn(6, 4, rng);
    const auto x = randn({6, 3, 5}, rng);
    const auto m = randn({7, 4}, rng);
    for (auto zero : {&CrossAttention<float>::wv, &CrossAttention<float>::wo}) {
      CrossAttention<float> a = attn;
      a.*zero = Tensor::zeros((a.*zero).shape());
      CHECK(cross_attend(x, m, a).vec() == x.vec());
    }
  }

  TEST_CASE("cross-attention matches a direct small-case evaluation") {
    Rng rng(14);
    const std::int64_t c = 3, d = 2, n = 4, hw = 2;
    CrossAttention<float> attn(c, d, rng);
    attn.wq = randn({c, d}, rng);
    attn.wk = randn({d, d}, rng);
    attn.wv = randn({d, d}, rng);
    attn.wo = randn({d, c}, rng);
    const auto x = randn({c, 1, hw}, rng);
    const auto m = randn({n, d}, rng);
    const auto out = cross_attend(x, m, attn);
    auto at = [](const Tensor& t, std::int64_t r, std::int64_t col, std::int64_t cols) {
      return static_cast<double>(t.vec()[r * cols + col]);
    };
    for (std::int64_t p = 0; p < hw; ++p) {
      double q[2] = {0, 0};
      for (std::int64_t j = 0; j < d; ++j)
        for (std::int64_t ch = 0; ch < c; ++ch) q[j] += at(x, ch, p, hw) * at(attn.wq, ch, j, d);
      double logits[4], mx = -1e300;
      for (std::int64_t i = 0; i < n; ++i) {
        logits[i] = 0;
        for (std::int64_t j = 0; j < d; ++j) {
          double kij = 0;
          for (std::int64_t l = 0; l < d; ++l) kij += at(m, i, l, d) * at(attn.wk, l, j, d);
          logits[i] += q[j] * kij;
        }
        logits[i] /= std::sqrt(static_cast<double>(d));
        mx = std::max(mx, logits[i]);
      }
      double z = 0, wts[4];
      for (std::int64_t i = 0; i < n; ++i) z += (wts[i] = std::exp(logits[i] - mx));
      double ctx[2] = {0, 0};
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) {
          double vij = 0;
          for (std::int64_t l = 0; l < d; ++l) vij += at(m, i, l, d) * at(attn.wv, l, j, d);
          ctx[j] += wts[i] / z * vij;
        }
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double o = at(x, ch, p, hw);
        for (std::int64_t j = 0; j < d; ++j) o += ctx[j] * at(attn.wo, j, ch, c);
        CHECK(std::abs(o - out.vec()[ch * hw + p]) < 1e-5);
      }
    }
  }
}

TEST_SUITE("unet and refinement") {
  TEST_CASE("output latent keeps the input shape and the pyramid halves") {
    Rng rng(20);
    UNet<float> unet(tiny_unet(), rng);
    TimestepTable<float> table(1, 16, rng);
    const auto m = randn({5, 8}, rng);
    for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{8, 8}, {16, 8}, {4, 12}, {16, 16}}) {
      const auto z = randn({4, h, w}, rng);
      const auto out = unet.forward(z, m, table.vectors[0]);
      CHECK(out.z.shape() == z.shape());
      for (int i = 0; i < kPyramidLevels; ++i) {
        const std::int64_t step = std::int64_t{1} << i;  // stride-2 stages round up
        CHECK(out.pyramid.levels[i].shape() == Shape{8, (h + step - 1) / step, (w + step - 1) / step});
      }
    }
  }

  TEST_CASE("refinement runs t = 1, 2, 3 without shape drift") {
    Rng rng(21);
    UNet<float> unet(tiny_unet(), rng);
    TimestepTable<float> table(3, 16, rng);
    const auto m = randn({5, 8}, rng);
    const auto z0 = randn({4, 8, 8}, rng);
    for (int t = 1; t <= 3; ++t) {
      const auto trace = refine_trace(unet, z0, m, table, t);
      REQUIRE(trace.size() == static_cast<std::size_t>(t));
      for (const auto& s : trace) CHECK(s.z.shape() == z0.shape());
    }
    CHECK_THROWS_AS(refine_trace(unet, z0, m, table, 4), std::out_of_range);
    CHECK_THROWS_AS(refine_trace(unet, z0, m, table, 0), std::out_of_range);
  }

  TEST_CASE("each step feeds the previous output latent and its own timestep vector") {
    Rng rng(22);
    UNet<float> unet(tiny_unet(), rng);
    TimestepTable<float> table(3, 16, rng);
    const auto m = randn({5, 8}, rng);
    const auto z0 = randn({4, 8, 8}, rng);
    const auto trace = refine_trace(unet, z0, m, table, 3);
    auto z = z0;
    for (int i = 0; i < 3; ++i) {
      const auto out = unet.forward(z, m, table.vectors[i]);
      CHECK(out.z.vec() == trace[i].z.vec());
      z = out.z;
    }
    const auto shared = refine_trace(unet, z0, m, table, 3, false);
    z = z0;
    for (int i = 0; i < 3; ++i) z = unet.forward(z, m, table.vectors[0]).z;
    CHECK(shared.back().z.vec() == z.vec());
  }

  TEST_CASE("gradients reach the UNet through every refinement step") {
    Rng rng(23);
    UNet<float> unet(tiny_unet(), rng);
    TimestepTable<float> table(3, 16, rng);
    const auto m = randn({5, 8}, rng);
    const auto z0 = randn({4, 8, 8}, rng);
    ParamList<float> params;
    unet.collect("unet", params);
    const Tensor& w = params.front().tensor;  // conv_in weight

    auto grad_with = [&](bool detach_early) {
      for (auto& p : params) p.tensor.impl()->grad.clear();
      auto z = z0;
      FeaturePyramid<float> pyr;
      for (int i = 0; i < 3; ++i) {
        auto out = unet.forward(z, m, table.vectors[i]);
        z = (detach_early && i < 2) ? out.z.detach() : out.z;
        pyr = out.pyramid;
      }
      auto loss = ops::sum(ops::mul(pyr.levels[0], pyr.levels[0]));
      if (!detach_early) {
        int uses = 0;
        for (const auto& [impl, count] : consumer_counts(loss)) {
          if (impl == w.impl()) uses = count;
        }
        CHECK(uses == 3);
      }
      loss.backward();
      return std::vector<float>(w.grad().begin(), w.grad().end());
    };
    const auto full = grad_with(false);
    const auto truncated = grad_with(true);
    double diff = 0;
    for (std::size_t i = 0; i < full.size(); ++i) diff += std::abs(full[i] - truncated[i]);
    CHECK(diff > 0.0);
  }
}

TEST_SUITE("heads") {
  TEST_CASE("segmentation head emits K x H x W logits") {
    Rng rng(30);
    SegHead<float> head(5, 3, 8, rng);
    std::array<Tensor, kPyramidLevels> levels;
    for (int i = 0; i < kPyramidLevels; ++i) {
      const std::int64_t s = std::max(4 >> i, 1);
      levels[i] = randn({5, s, s}, rng);
    }
    CHECK(head(levels, 32, 32).shape() == Shape{3, 32, 32});
    CHECK_THROWS_AS(SegHead<float>(5, 1, 8, rng), std::invalid_argument);
  }

  TEST_CASE("depth head output lies in (0, max_depth)") {
    Rng rng(31);
    DepthHead<float> head(5, 10.0, 8, rng);
    std::array<Tensor, kPyramidLevels> levels;
    for (int i = 0; i < kPyramidLevels; ++i) levels[i] = randn({5, std::max(4 >> i, 1), std::max(4 >> i, 1)}, rng);
    const auto d = head(levels, 32, 32);
    CHECK(d.shape() == Shape{1, 32, 32});
    for (float v : d.vec()) {
      CHECK(v > 0.0f);
      CHECK(v < 10.0f);
    }
    const auto half = depth_from_pre_activation(Tensor::zeros({1, 2, 2}), 80.0);
    for (float v : half.vec()) CHECK(v == 40.0f);
  }

  TEST_CASE("argmax breaks ties toward the lowest class") {
    const Tensor logits({3, 1, 2}, {1.0f, 0.0f, 1.0f, 2.0f, 0.5f, 2.0f});
    const auto labels = argmax_labels(logits);
    CHECK(labels == std::vector<std::int32_t>{0, 1});
  }
}

TEST_SUITE("model") {
  TEST_CASE("forward shapes for both tasks") {
    for (Task task : {Task::segmentation, Task::depth}) {
      Model<float> model(tiny_spec(task));
      const auto out = model.forward(random_image(32, 32, 2));
      if (task == Task::segmentation) {
        CHECK(out.prediction.shape() == Shape{3, 32, 32});
      } else {
        CHECK(out.prediction.shape() == Shape{1, 32, 32});
      }
      for (int i = 0; i < kPyramidLevels; ++i) CHECK(out.rearranged.levels[i].dim(0) == 5);
    }
  }

  TEST_CASE("parameter listing: encoder first and frozen, names unique") {
    Model<float> model(tiny_spec(Task::segmentation));
    const auto all = model.parameters();
    const auto trainable = model.trainable_parameters();
    std::set<std::string> names;
    std::size_t frozen = 0;
    for (const auto& p : all) {
      names.insert(p.name);
      if (p.frozen) ++frozen;
    }
    CHECK(names.size() == all.size());
    CHECK(all.front().name.rfind("encoder.", 0) == 0);
    CHECK(frozen == model.encoder().parameters().size());
    CHECK(trainable.size() + frozen == all.size());
    CHECK(names.count("prompts") == 1);
  }

  TEST_CASE("toggles: no rearrangement feeds projected features, no modulation shares one vector") {
    auto spec = tiny_spec(Task::segmentation);
    spec.rearrangement = false;
    spec.modulated_timesteps = false;
    spec.t_steps = 3;
    Model<float> model(spec);
    CHECK(model.timesteps().size() == 1);
    const auto out = model.forward(random_image(32, 32, 3));
    CHECK_FALSE(out.rearranged.levels[0].defined());
    CHECK(out.prediction.vec() == model.decode(out.features.levels, 32, 32).vec());
  }

  TEST_CASE("cells that differ in t share the UNet initialization") {
    auto a = tiny_spec(Task::segmentation);
    auto b = a;
    b.t_steps = 3;
    Model<float> ma(a), mb(b);
    ParamList<float> pa, pb;
    ma.unet().collect("unet", pa);
    mb.unet().collect("unet", pb);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor.vec() == pb[i].tensor.vec());
    CHECK(ma.timesteps().vectors[0].vec() == mb.timesteps().vectors[0].vec());
  }
}
