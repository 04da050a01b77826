#include "metaprompt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace metaprompt {

ConfusionMatrix::ConfusionMatrix(std::int64_t classes) : k_(classes) {
  if (classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(classes * classes), 0);
}

void ConfusionMatrix::add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                          std::int32_t ignore_index) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("miou: prediction has " + std::to_string(pred.size()) +
                                " pixels, ground truth " + std::to_string(gt.size()));
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_index) continue;
    if (gt[i] < 0 || gt[i] >= k_ || pred[i] < 0 || pred[i] >= k_) {
      throw std::out_of_range("miou: label outside [0, " + std::to_string(k_) + ") at pixel " +
                              std::to_string(i));
    }
    ++counts_[gt[i] * k_ + pred[i]];
  }
}

std::vector<double> ConfusionMatrix::class_iou() const {
  std::vector<double> iou(static_cast<std::size_t>(k_), -1.0);
  for (std::int64_t c = 0; c < k_; ++c) {
    std::int64_t row = 0, col = 0;
    for (std::int64_t j = 0; j < k_; ++j) {
      row += at(c, j);
      col += at(j, c);
    }
    const std::int64_t tp = at(c, c);
    const std::int64_t uni = row + col - tp;
    if (uni > 0) iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return iou;
}

double ConfusionMatrix::miou() const {
  double total = 0.0;
  int present = 0;
  for (double v : class_iou()) {
    if (v < 0.0) continue;
    total += v;
    ++present;
  }
  if (present == 0) throw std::invalid_argument("miou: no valid classes");
  return total / present;
}

double miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
            std::int64_t classes, std::int32_t ignore_index) {
  ConfusionMatrix cm(classes);
  cm.add(pred, gt, ignore_index);
  return cm.miou();
}

void DepthAccumulator::add(std::span<const float> pred, std::span<const float> gt,
                           std::span<const std::uint8_t> valid_mask) {
  if (pred.size() != gt.size() || (!valid_mask.empty() && valid_mask.size() != gt.size())) {
    throw std::invalid_argument("depth_metrics: prediction, ground truth and mask sizes differ");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!valid_mask.empty() && valid_mask[i] == 0) continue;
    const double g = gt[i], p = pred[i];
    if (!(g > 0.0)) throw std::invalid_argument("depth_metrics: ground truth must be positive on valid pixels");
    const double diff = p - g;
    sq_ += diff * diff;
    rel_ += std::abs(diff) / g;
    // Non-positive predictions never count as accurate.
    const double ratio = p > 0.0 ? std::max(p / g, g / p) : INFINITY;
    if (ratio < 1.25) ++d1_;
    if (ratio < 1.25 * 1.25) ++d2_;
    if (ratio < 1.25 * 1.25 * 1.25) ++d3_;
    ++count_;
  }
}

DepthMetrics DepthAccumulator::result() const {
  if (count_ == 0) throw std::invalid_argument("depth_metrics: empty valid mask");
  const double n = static_cast<double>(count_);
  return {std::sqrt(sq_ / n), rel_ / n, static_cast<double>(d1_) / n, static_cast<double>(d2_) / n,
          static_cast<double>(d3_) / n};
}

DepthMetrics depth_metrics(std::span<const float> pred, std::span<const float> gt,
                           std::span<const std::uint8_t> valid_mask) {
  DepthAccumulator acc;
  acc.add(pred, gt, valid_mask);
  return acc.result();
}

}  // namespace metaprompt
