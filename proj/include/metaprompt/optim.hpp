#pragma once
// AdamW with decoupled weight decay, global-norm clipping, poly schedule.

#include <cstdint>
#include <vector>

#include "metaprompt/nn.hpp"

namespace metaprompt {

/// Linear warmup from 0 to base_lr over warmup_iters, then
/// base_lr·(1 − (iter − warmup)/(total − warmup))^power.
double poly_lr(std::int64_t iter, std::int64_t total_iters, double base_lr, double power,
               std::int64_t warmup_iters);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamW {
 public:
  /// Frozen entries are dropped and never touched.
  AdamW(ParamList<float> params, AdamWConfig config);

  /// p ← p − lr·(m̂/(√v̂+ε) + wd·p). Parameters without a gradient are
  /// treated as having a zero gradient.
  void step(double lr);
  void zero_grad();

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t step) { step_ = step; }
  const ParamList<float>& params() const { return params_; }
  std::vector<float>& first_moment(std::size_t i) { return m_[i]; }
  std::vector<float>& second_moment(std::size_t i) { return v_[i]; }
  const std::vector<float>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<float>& second_moment(std::size_t i) const { return v_[i]; }
  const AdamWConfig& config() const { return config_; }

 private:
  ParamList<float> params_;
  AdamWConfig config_;
  std::vector<std::vector<float>> m_, v_;
  std::int64_t step_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns
/// the norm before clipping.
double clip_grad_norm(const ParamList<float>& params, double max_norm);

}  // namespace metaprompt
