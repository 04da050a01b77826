#pragma once
// Segmentation and depth evaluation metrics.

#include <cstdint>
#include <span>
#include <vector>

namespace metaprompt {

/// K×K pixel counts, row = ground truth, column = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t classes);

  /// Pixels whose ground truth equals ignore_index are skipped.
  void add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
           std::int32_t ignore_index);
  std::int64_t classes() const { return k_; }
  std::int64_t at(std::int64_t gt, std::int64_t pred) const { return counts_[gt * k_ + pred]; }
  /// IoU per class; negative for classes absent from both prediction and truth.
  std::vector<double> class_iou() const;
  /// Mean IoU over classes present in prediction or truth.
  double miou() const;

 private:
  std::int64_t k_;
  std::vector<std::int64_t> counts_;
};

double miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
            std::int64_t classes, std::int32_t ignore_index);

struct DepthMetrics {
  double rmse = 0.0;
  double rel = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
};

/// Pixel-pooled accumulator, so dataset metrics weight every valid pixel equally.
class DepthAccumulator {
 public:
  /// Empty mask means every pixel is valid.
  void add(std::span<const float> pred, std::span<const float> gt,
           std::span<const std::uint8_t> valid_mask = {});
  std::int64_t count() const { return count_; }
  DepthMetrics result() const;

 private:
  double sq_ = 0.0, rel_ = 0.0;
  std::int64_t d1_ = 0, d2_ = 0, d3_ = 0, count_ = 0;
};

DepthMetrics depth_metrics(std::span<const float> pred, std::span<const float> gt,
                           std::span<const std::uint8_t> valid_mask = {});

}  // namespace metaprompt
