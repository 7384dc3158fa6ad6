#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "wsseg/core.hpp"

namespace wsseg {

/// counts(gt, pred); rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  int classes() const { return classes_; }
  std::uint64_t count(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * classes_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(int c) const;
  std::uint64_t col_sum(int c) const;

  /// Adds every pixel whose ground truth is not ignore. Throws on an ignore
  /// prediction or any label >= classes.
  void accumulate(const LabelMask& pred, const LabelMask& gt);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix& other) const = default;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMask& pred, const LabelMask& gt);

struct MiouResult {
  double miou = 0.0;
  std::vector<std::optional<double>> per_class;  // nullopt for absent classes
};

/// Mean IoU over classes with a non-zero denominator. With
/// absent_as_zero, absent classes enter the mean as 0 instead.
MiouResult miou(const ConfusionMatrix& cm, bool absent_as_zero = false);

}  // namespace wsseg
