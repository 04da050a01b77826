#include "metaprompt/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace metaprompt {

double poly_lr(std::int64_t iter, std::int64_t total_iters, double base_lr, double power,
               std::int64_t warmup_iters) {
  if (total_iters <= warmup_iters) {
    throw std::invalid_argument("poly_lr: total_iters (" + std::to_string(total_iters) +
                                ") must exceed warmup_iters (" + std::to_string(warmup_iters) + ")");
  }
  if (iter < 0 || iter > total_iters) {
    throw std::out_of_range("poly_lr: iter " + std::to_string(iter) + " outside [0, " +
                            std::to_string(total_iters) + "]");
  }
  if (!(power > 0.0)) throw std::invalid_argument("poly_lr: power must be positive");
  if (iter < warmup_iters) return base_lr * static_cast<double>(iter) / static_cast<double>(warmup_iters);
  const double progress = static_cast<double>(iter - warmup_iters) / static_cast<double>(total_iters - warmup_iters);
  return base_lr * std::pow(1.0 - progress, power);
}

AdamW::AdamW(ParamList<float> params, AdamWConfig config) : config_(config) {
  for (auto& p : params) {
    if (p.frozen) continue;
    m_.emplace_back(p.tensor.data().size(), 0.0f);
    v_.emplace_back(p.tensor.data().size(), 0.0f);
    params_.push_back(std::move(p));
  }
}

void AdamW::step(double lr) {
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    auto data = t.data_mut();
    const auto grad = t.grad();
    if (!grad.empty() && grad.size() != data.size()) {
      throw std::invalid_argument("optim_step: gradient of " + params_[i].name + " has " +
                                  std::to_string(grad.size()) + " elements, parameter has " +
                                  std::to_string(data.size()));
    }
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = (mj / c1) / (std::sqrt(vj / c2) + config_.eps) + config_.weight_decay * data[j];
      data[j] = static_cast<float>(data[j] - lr * update);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double clip_grad_norm(const ParamList<float>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float s = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto p : params) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.grad_mut()) g *= s;
    }
  }
  return norm;
}

}  // namespace metaprompt
