#pragma once

#include <cstdint>
#include <vector>

#include "wsseg/core.hpp"
#include "wsseg/losses.hpp"

namespace wsseg {

struct OptimConfig {
  double lr0 = 0.001;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double power = 1.2;
  int max_iter = 500;
  std::uint64_t seed = 0;
  double init_std = 0.0;  // 0 means zero-initialized logits

  void validate() const;
};

struct FitResult {
  UnaryField logits;
  SoftSeg soft;
  LabelMask mask;
  std::vector<LossReport> history;
};

/// lr0 * (1 - iter / max_iter)^power, for 0 <= iter <= max_iter.
double poly_lr(int iter, const OptimConfig& cfg);

struct SgdState {
  UnaryField logits;
  FieldGradient velocity;
};

/// g = grad + weight_decay * logits; v' = momentum * v + g; logits' = logits - lr * v'.
SgdState sgd_momentum_step(const UnaryField& logits, const FieldGradient& grad, const FieldGradient& velocity,
                           double lr, const OptimConfig& cfg);

/// Full-batch SGD with momentum on a per-pixel logit field under pCE + lambda * denseCRF.
FitResult fit_scribbles(const ImageBuffer& img, const LabelMask& scribbles, int classes, const LossConfig& loss_cfg,
                        const OptimConfig& opt_cfg);

}  // namespace wsseg
