#include "wsseg/optim.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace wsseg {

void OptimConfig::validate() const {
  if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
  if (!(power > 0.0)) throw std::invalid_argument("poly power must be positive");
  if (max_iter < 1) throw std::invalid_argument("max_iter must be at least 1");
  if (!(init_std >= 0.0)) throw std::invalid_argument("init_std must be non-negative");
}

double poly_lr(int iter, const OptimConfig& cfg) {
  cfg.validate();
  if (iter < 0 || iter > cfg.max_iter)
    throw std::invalid_argument("iteration " + std::to_string(iter) + " outside [0, " + std::to_string(cfg.max_iter) +
                                "]");
  return cfg.lr0 * std::pow(1.0 - static_cast<double>(iter) / cfg.max_iter, cfg.power);
}

SgdState sgd_momentum_step(const UnaryField& logits, const FieldGradient& grad, const FieldGradient& velocity,
                           double lr, const OptimConfig& cfg) {
  if (!logits.same_shape(grad) || !logits.same_shape(velocity))
    throw std::invalid_argument("logits, gradient and velocity shapes differ");
  SgdState out{logits, velocity};
  auto z = out.logits.data();
  auto v = out.velocity.data();
  const auto g = grad.data();
  for (std::size_t i = 0; i < z.size(); ++i) {
    v[i] = cfg.momentum * v[i] + (g[i] + cfg.weight_decay * z[i]);
    z[i] -= lr * v[i];
  }
  return out;
}

FitResult fit_scribbles(const ImageBuffer& img, const LabelMask& scribbles, int classes, const LossConfig& loss_cfg,
                        const OptimConfig& opt_cfg) {
  opt_cfg.validate();
  loss_cfg.validate();
  if (classes < 1) throw std::invalid_argument("need at least one class");
  if (scribbles.labeled_count() == 0 && loss_cfg.lambda_crf == 0.0)
    throw std::invalid_argument("objective has no supervision signal");
  const CombinedObjective objective(img, scribbles, classes, loss_cfg);

  UnaryField logits(img.height(), img.width(), classes, 0.0);
  if (opt_cfg.init_std > 0.0) {
    std::mt19937_64 rng(opt_cfg.seed);
    std::normal_distribution<double> normal(0.0, opt_cfg.init_std);
    for (double& z : logits.data()) z = normal(rng);
  }
  FieldGradient velocity(img.height(), img.width(), classes, 0.0);

  std::vector<LossReport> history;
  history.reserve(opt_cfg.max_iter);
  for (int it = 0; it < opt_cfg.max_iter; ++it) {
    CombinedResult r = objective.evaluate(logits);
    history.push_back(r.report);
    SgdState next = sgd_momentum_step(logits, r.grad, velocity, poly_lr(it, opt_cfg), opt_cfg);
    logits = std::move(next.logits);
    velocity = std::move(next.velocity);
  }
  SoftSeg soft = softmax_over_classes(logits);
  LabelMask mask = argmax_labeling(soft);
  return {std::move(logits), std::move(soft), std::move(mask), std::move(history)};
}

}  // namespace wsseg
