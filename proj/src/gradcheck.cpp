#include "metaprompt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "metaprompt/model.hpp"
#include "metaprompt/ops.hpp"
#include "metaprompt/synth.hpp"

namespace metaprompt {

namespace {

double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD(std::move(shape), std::move(v));
}

// Values bounded away from zero so that kinks (relu, |·|) stay out of reach
// of the finite-difference stencil.
TensorD random_away_from_zero(Shape shape, Rng& rng) {
  auto t = random_tensor(std::move(shape), rng, 0.1, 1.0);
  for (auto& x : t.data_mut()) {
    if (rng.uniform() < 0.5) x = -x;
  }
  return t;
}

// Reduces a non-scalar output to a scalar with fixed random weights, so every
// output element contributes a distinct gradient.
struct Probe {
  TensorD weights;
  TensorD operator()(const TensorD& y) {
    if (!weights.defined() || weights.shape() != y.shape()) {
      Rng rng(mix_seed(static_cast<std::uint64_t>(y.numel()), 0xB0B));
      weights = random_tensor(y.shape(), rng);
    }
    return ops::sum(ops::mul(y, weights));
  }
};

using ArgFn = std::function<TensorD(const std::vector<TensorD>&)>;

// Max error over every listed argument, each checked with the others fixed.
double check_args(const std::vector<TensorD>& args, const ArgFn& fn, double eps,
                  const std::vector<std::size_t>& which = {}) {
  std::vector<std::size_t> indices = which;
  if (indices.empty()) {
    for (std::size_t i = 0; i < args.size(); ++i) indices.push_back(i);
  }
  double worst = 0.0;
  for (std::size_t i : indices) {
    auto f = [&](const TensorD& x) {
      auto a = args;
      a[i] = x;
      return fn(a);
    };
    worst = std::max(worst, grad_check(f, args[i], eps));
  }
  return worst;
}

// Forward x², backward deliberately 10% too large.
TensorD faulty_square(const TensorD& x) {
  std::vector<double> out(x.vec());
  for (auto& v : out) v *= v;
  auto px = x.impl_ptr();
  return detail::record<double>(x.shape(), std::move(out), "faulty_square", {&x},
                                [px](TensorImpl<double>& o) {
                                  auto g = detail::sink(px);
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    g[i] += 2.2 * px->data[i] * o.grad[i];
                                  }
                                });
}

using Unary = TensorD (*)(const TensorD&);

GradCheckCase unary_case(std::string name, Unary op, bool away_from_zero = false) {
  return {std::move(name), [op, away_from_zero](std::uint64_t seed, double eps) {
            Rng rng(seed);
            Shape shape{2, 3, 4};
            auto x = away_from_zero ? random_away_from_zero(shape, rng) : random_tensor(shape, rng, -2, 2);
            Probe probe;
            return grad_check([&](const TensorD& v) { return probe(op(v)); }, x, eps);
          }};
}

ModelSpec micro_spec(Task task) {
  ModelSpec spec;
  spec.task = task;
  spec.classes = 4;
  spec.max_depth = 10.0;
  spec.prompt_count = 4;
  spec.unet.channels = {32, 32, 64, 64};
  spec.unet.prompt_dim = 8;
  spec.unet.time_embed_dim = 16;
  spec.head_width = 16;
  spec.t_steps = 2;
  spec.init_seed = 11;
  return spec;
}

double end_to_end(Task task, std::uint64_t seed, double eps) {
  const auto spec = micro_spec(task);
  Model<double> model(spec);
  SceneSpec scene;
  scene.height = 32;
  scene.width = 32;
  scene.classes = spec.classes;
  scene.max_depth = spec.max_depth;
  const Sample sample = generate_scene(seed, scene);
  const TensorD depth_gt = sample.depth.cast<double>();

  // Unit-scale evaluation point. At the init scale (prompts std 0.02, latent
  // std ~0.1) the downstream group norms amplify curvature enough that the
  // central-difference truncation error alone exceeds the tolerance.
  Rng rng(mix_seed(seed, 1));
  TensorD z0 = TensorD::zeros({kLatentChannels, scene.height / 8, scene.width / 8});
  for (auto& z : z0.data_mut()) z = rng.normal();
  TensorD prompts = model.prompts().matrix;
  for (auto& m : prompts.data_mut()) m = rng.normal();

  auto loss_at = [&](const TensorD& z) {
    auto out = model.forward_latent(z, scene.height, scene.width);
    if (task == Task::segmentation) return seg_loss(out.prediction, sample.seg);
    return depth_loss(out.prediction, depth_gt);
  };
  double worst = grad_check(loss_at, z0, eps);
  worst = std::max(worst, grad_check_inplace([&] { return loss_at(z0); }, prompts, eps));
  return worst;
}

}  // namespace

double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x0,
                  double eps) {
  TensorD x = x0.detach();
  x.set_requires_grad(true);
  return grad_check_inplace([&] { return f(x); }, x, eps);
}

double grad_check_inplace(const std::function<TensorD()>& loss, TensorD param, double eps) {
  param.zero_grad();
  {
    const TensorD y = loss();
    y.backward();
  }
  std::vector<double> analytic(static_cast<std::size_t>(param.numel()), 0.0);
  if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
  param.zero_grad();

  NoGradGuard no_grad;
  auto data = param.data_mut();
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + eps;
    const double up = loss().item();
    data[i] = saved - eps;
    const double down = loss().item();
    data[i] = saved;
    worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

std::vector<GradCheckCase> gradcheck_registry(const GradCheckOptions& options) {
  std::vector<GradCheckCase> cases;

  auto binary = [&](std::string name, TensorD (*op)(const TensorD&, const TensorD&)) {
    cases.push_back({std::move(name), [op](std::uint64_t seed, double eps) {
                       Rng rng(seed);
                       std::vector<TensorD> args{random_tensor({3, 4}, rng),
                                                 random_tensor({3, 4}, rng)};
                       Probe probe;
                       return check_args(args, [&](const auto& a) { return probe(op(a[0], a[1])); },
                                         eps);
                     }});
  };
  binary("add", &ops::add<double>);
  binary("sub", &ops::sub<double>);
  binary("mul", &ops::mul<double>);

  cases.push_back(unary_case("scale", [](const TensorD& x) { return ops::scale(x, -1.7); }));
  cases.push_back(unary_case("add_scalar", [](const TensorD& x) { return ops::add_scalar(x, 0.3); }));
  cases.push_back(unary_case("silu", &ops::silu<double>));
  cases.push_back(unary_case("gelu", &ops::gelu<double>));
  cases.push_back(unary_case("sigmoid", &ops::sigmoid<double>));
  cases.push_back(unary_case("relu", &ops::relu<double>, true));
  cases.push_back(unary_case("reshape", [](const TensorD& x) { return ops::reshape(x, {4, 6}); }));
  cases.push_back(unary_case("transpose", [](const TensorD& x) {
    return ops::transpose(ops::reshape(x, {6, 4}));
  }));
  cases.push_back({"concat", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     std::vector<TensorD> args{random_tensor({2, 3, 2}, rng),
                                               random_tensor({1, 3, 2}, rng),
                                               random_tensor({3, 3, 2}, rng)};
                     Probe probe;
                     return check_args(args, [&](const auto& a) { return probe(ops::concat(a)); },
                                       eps);
                   }});
  cases.push_back(unary_case("slice", [](const TensorD& x) { return ops::slice(x, 1, 1); }));
  cases.push_back(unary_case("flip_last", &ops::flip_last<double>));
  cases.push_back(unary_case("sum", [](const TensorD& x) { return ops::sum(x); }));
  cases.push_back(unary_case("mean", [](const TensorD& x) { return ops::mean(x); }));

  cases.push_back({"matmul", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     std::vector<TensorD> args{random_tensor({3, 5}, rng),
                                               random_tensor({5, 4}, rng)};
                     Probe probe;
                     return check_args(
                         args, [&](const auto& a) { return probe(ops::matmul(a[0], a[1])); }, eps);
                   }});
  cases.push_back({"linear", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     std::vector<TensorD> args{random_tensor({5}, rng), random_tensor({3, 5}, rng),
                                               random_tensor({3}, rng)};
                     Probe probe;
                     return check_args(
                         args, [&](const auto& a) { return probe(ops::linear(a[0], a[1], a[2])); },
                         eps);
                   }});
  cases.push_back({"softmax", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     const auto x = random_tensor({3, 4, 5}, rng, -2, 2);
                     double worst = 0.0;
                     for (int axis = 0; axis < 3; ++axis) {
                       Probe probe;
                       worst = std::max(worst, grad_check([&](const TensorD& v) {
                                          return probe(ops::softmax(v, axis));
                                        }, x, eps));
                     }
                     return worst;
                   }});
  cases.push_back({"layer_norm", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     std::vector<TensorD> args{random_tensor({3, 6}, rng),
                                               random_tensor({6}, rng, 0.5, 1.5),
                                               random_tensor({6}, rng)};
                     Probe probe;
                     return check_args(args, [&](const auto& a) {
                       return probe(ops::layer_norm(a[0], a[1], a[2]));
                     }, eps);
                   }});
  cases.push_back({"group_norm", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     std::vector<TensorD> args{random_tensor({6, 3, 3}, rng),
                                               random_tensor({6}, rng, 0.5, 1.5),
                                               random_tensor({6}, rng)};
                     Probe probe;
                     return check_args(args, [&](const auto& a) {
                       return probe(ops::group_norm(a[0], 3, a[1], a[2]));
                     }, eps);
                   }});
  cases.push_back({"scale_shift", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     std::vector<TensorD> args{random_tensor({3, 2, 4}, rng),
                                               random_tensor({3}, rng),
                                               random_tensor({3}, rng)};
                     Probe probe;
                     return check_args(args, [&](const auto& a) {
                       return probe(ops::scale_shift(a[0], a[1], a[2]));
                     }, eps);
                   }});
  cases.push_back({"conv2d", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     double worst = 0.0;
                     struct Geometry { std::int64_t k; int stride, pad; };
                     for (const Geometry g : {Geometry{3, 1, 1}, Geometry{3, 2, 1}, Geometry{1, 1, 0}}) {
                       std::vector<TensorD> args{random_tensor({3, 7, 6}, rng),
                                                 random_tensor({4, 3, g.k, g.k}, rng),
                                                 random_tensor({4}, rng)};
                       Probe probe;
                       worst = std::max(worst, check_args(args, [&](const auto& a) {
                         return probe(ops::conv2d(a[0], a[1], a[2], g.stride, g.pad));
                       }, eps));
                     }
                     return worst;
                   }});
  cases.push_back({"conv_transpose2d", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     std::vector<TensorD> args{random_tensor({3, 4, 5}, rng),
                                               random_tensor({3, 2, 4, 4}, rng),
                                               random_tensor({2}, rng)};
                     Probe probe;
                     return check_args(args, [&](const auto& a) {
                       return probe(ops::conv_transpose2d(a[0], a[1], a[2], 2, 1));
                     }, eps);
                   }});
  cases.push_back({"bilinear_resize", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     const auto x = random_tensor({2, 3, 4}, rng);
                     const auto y = random_tensor({2, 6, 6}, rng);
                     Probe up, down;
                     return std::max(
                         grad_check([&](const TensorD& v) { return up(ops::bilinear_resize(v, 5, 7)); },
                                    x, eps),
                         grad_check([&](const TensorD& v) { return down(ops::bilinear_resize(v, 3, 2)); },
                                    y, eps));
                   }});
  cases.push_back({"cross_entropy", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     const auto logits = random_tensor({4, 3, 3}, rng, -2, 2);
                     std::vector<std::int32_t> labels(9);
                     for (auto& l : labels) l = static_cast<std::int32_t>(rng.uniform_int(0, 3));
                     labels[4] = kDefaultIgnoreIndex;
                     return grad_check([&](const TensorD& v) {
                       return ops::cross_entropy(v, labels, kDefaultIgnoreIndex);
                     }, logits, eps);
                   }});
  cases.push_back({"masked_l1", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     // Offsets keep |pred − target| away from the kink.
                     auto target = random_tensor({1, 3, 4}, rng);
                     auto pred = random_away_from_zero({1, 3, 4}, rng);
                     for (std::size_t i = 0; i < pred.vec().size(); ++i) {
                       pred.data_mut()[i] += target.vec()[i];
                     }
                     std::vector<std::uint8_t> mask(12, 1);
                     mask[2] = mask[7] = 0;
                     return check_args({pred, target}, [&](const auto& a) {
                       return ops::masked_l1(a[0], a[1], mask);
                     }, eps);
                   }});
  cases.push_back({"cross_attention", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     CrossAttention<double> attn(5, 4, rng);
                     attn.wq = random_tensor({5, 4}, rng).set_requires_grad(true);
                     attn.wk = random_tensor({4, 4}, rng).set_requires_grad(true);
                     attn.wv = random_tensor({4, 4}, rng).set_requires_grad(true);
                     attn.wo = random_tensor({4, 5}, rng).set_requires_grad(true);
                     const auto x = random_tensor({5, 3, 2}, rng);
                     auto prompts = random_tensor({3, 4}, rng);
                     Probe probe;
                     double worst = grad_check([&](const TensorD& v) {
                       return probe(cross_attend(v, prompts, attn));
                     }, x, eps);
                     worst = std::max(worst, grad_check([&](const TensorD& m) {
                       return probe(cross_attend(x, m, attn));
                     }, prompts, eps));
                     for (auto w : {attn.wq, attn.wk, attn.wv, attn.wo}) {
                       worst = std::max(worst, grad_check_inplace([&] {
                         return probe(cross_attend(x, prompts, attn));
                       }, w, eps));
                     }
                     return worst;
                   }});
  cases.push_back({"rearrange", [](std::uint64_t seed, double eps) {
                     Rng rng(seed);
                     std::vector<TensorD> args{random_tensor({4, 3, 5}, rng),
                                               random_tensor({6, 4}, rng)};
                     Probe probe;
                     return check_args(args, [&](const auto& a) {
                       return probe(rearrange_level(a[0], a[1]));
                     }, eps);
                   }});

  if (options.end_to_end) {
    cases.push_back({"end_to_end_segmentation", [](std::uint64_t seed, double eps) {
                       return end_to_end(Task::segmentation, seed, eps);
                     }});
    cases.push_back({"end_to_end_depth", [](std::uint64_t seed, double eps) {
                       return end_to_end(Task::depth, seed, eps);
                     }});
  }
  if (options.inject_fault) {
    cases.push_back(unary_case("faulty_square", &faulty_square));
  }
  return cases;
}

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options) {
  std::vector<GradCheckResult> results;
  const auto cases = gradcheck_registry(options);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const double err = cases[i].run(mix_seed(options.seed, i), options.eps);
    results.push_back({cases[i].name, err, err < options.tolerance});
  }
  return results;
}

}  // namespace metaprompt
