#include "wsseg/metrics.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace wsseg {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(int c) const {
  std::uint64_t s = 0;
  for (int j = 0; j < classes_; ++j) s += count(c, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(int c) const {
  std::uint64_t s = 0;
  for (int i = 0; i < classes_; ++i) s += count(i, c);
  return s;
}

void ConfusionMatrix::accumulate(const LabelMask& pred, const LabelMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw std::invalid_argument("prediction and ground truth dimensions differ");
  for (std::size_t i = 0; i < pred.pixels(); ++i) {
    const int p = pred[i];
    if (pred.is_ignore(i)) throw std::invalid_argument("prediction contains the ignore label");
    if (p < 0 || p >= classes_) throw std::invalid_argument("predicted label " + std::to_string(p) + " out of range");
    if (gt.is_ignore(i)) continue;
    if (gt[i] < 0 || gt[i] >= classes_)
      throw std::invalid_argument("ground-truth label " + std::to_string(gt[i]) + " out of range");
  }
  for (std::size_t i = 0; i < pred.pixels(); ++i)
    if (!gt.is_ignore(i)) ++counts_[static_cast<std::size_t>(gt[i]) * classes_ + pred[i]];
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("confusion matrices have different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMask& pred, const LabelMask& gt) {
  cm.accumulate(pred, gt);
  return cm;
}

MiouResult miou(const ConfusionMatrix& cm, bool absent_as_zero) {
  MiouResult out;
  out.per_class.resize(cm.classes());
  double sum = 0.0;
  int included = 0;
  for (int c = 0; c < cm.classes(); ++c) {
    const std::uint64_t tp = cm.count(c, c);
    const std::uint64_t denom = cm.row_sum(c) + cm.col_sum(c) - tp;
    if (denom == 0) {
      if (absent_as_zero) ++included;
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    out.per_class[c] = iou;
    sum += iou;
    ++included;
  }
  if (included == 0 || (absent_as_zero && cm.total() == 0)) throw std::invalid_argument("empty evaluation");
  out.miou = sum / included;
  return out;
}

}  // namespace wsseg
