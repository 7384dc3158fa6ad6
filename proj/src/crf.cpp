#include "wsseg/crf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace wsseg {

namespace {

void check_image(const LabelMask& mask, const ImageBuffer& img) {
  if (mask.height() != img.height() || mask.width() != img.width())
    throw std::invalid_argument("mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                                " does not match image " + std::to_string(img.height()) + "x" +
                                std::to_string(img.width()));
}

void check_unary(const UnaryField& unary, const ImageBuffer& img) {
  if (unary.height() != img.height() || unary.width() != img.width())
    throw std::invalid_argument("unary field does not match image dimensions");
}

ValueField as_values(const detail::PixelClassField& field) {
  return ValueField(field.pixels(), field.classes(), std::vector<double>(field.data().begin(), field.data().end()));
}

int class_count(const LabelMask& mask) {
  int c = 0;
  for (int l : mask.data()) c = std::max(c, l + 1);
  return c;
}

}  // namespace

void CrfConfig::validate() const {
  if (!(sigma_alpha > 0.0 && sigma_beta > 0.0 && sigma_gamma > 0.0))
    throw std::invalid_argument("CRF bandwidths must be positive");
  if (!(w1 >= 0.0 && w2 >= 0.0)) throw std::invalid_argument("CRF kernel weights must be non-negative");
  if (iterations < 1) throw std::invalid_argument("mean-field iterations must be at least 1");
}

CrfKernels::CrfKernels(const ImageBuffer& img, const CrfConfig& cfg, FilterMethod method)
    : points_(img.pixels()), w1_(cfg.w1), w2_(cfg.w2) {
  cfg.validate();
  if (w1_ > 0.0) appearance_.emplace_back(bilateral_features(img, cfg.sigma_alpha, cfg.sigma_beta), method);
  if (w2_ > 0.0) smoothness_.emplace_back(spatial_features(img, cfg.sigma_gamma), method);
}

ValueField CrfKernels::message(const ValueField& q) const {
  ValueField out(q.points(), q.channels(), 0.0);
  auto dst = out.data();
  if (!appearance_.empty()) {
    const ValueField a = appearance_.front().apply(q, false);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w1_ * a.data()[i];
  }
  if (!smoothness_.empty()) {
    const ValueField s = smoothness_.front().apply(q, false);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w2_ * s.data()[i];
  }
  return out;
}

double unary_energy(const LabelMask& mask, const UnaryField& unary) {
  if (mask.height() != unary.height() || mask.width() != unary.width())
    throw std::invalid_argument("mask does not match unary field dimensions");
  if (!mask.complete()) throw std::invalid_argument("energy needs a complete labeling");
  mask.validate(unary.classes());
  double e = 0.0;
  for (std::size_t i = 0; i < mask.pixels(); ++i) {
    auto logits = unary.pixel(i);
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    e += m + std::log(z) - logits[mask[i]];
  }
  return e;
}

double pairwise_energy(const LabelMask& mask, const ImageBuffer& img, const CrfConfig& cfg, FilterMethod method) {
  check_image(mask, img);
  if (!mask.complete()) throw std::invalid_argument("energy needs a complete labeling");
  cfg.validate();
  const int classes = std::max(1, class_count(mask));
  const SoftSeg labels = one_hot(mask, classes);
  const ValueField msg = CrfKernels(img, cfg, method).message(as_values(labels));
  // sum_{q != p} k(p, q) [S_q != S_p] = sum over classes other than S_p of the filtered indicator
  double e = 0.0;
  for (std::size_t p = 0; p < mask.pixels(); ++p) {
    const auto row = msg.point(p);
    for (int l = 0; l < classes; ++l)
      if (l != mask[p]) e += row[l];
  }
  return e;
}

EnergyTerms energy_terms(const LabelMask& mask, const UnaryField& unary, const ImageBuffer& img, const CrfConfig& cfg,
                         FilterMethod method) {
  check_unary(unary, img);
  EnergyTerms t;
  t.unary = unary_energy(mask, unary);
  t.pairwise = pairwise_energy(mask, img, cfg, method);
  t.total = t.unary + t.pairwise;
  return t;
}

double total_energy(const LabelMask& mask, const UnaryField& unary, const ImageBuffer& img, const CrfConfig& cfg,
                    FilterMethod method) {
  return energy_terms(mask, unary, img, cfg, method).total;
}

SoftSeg mean_field_init(const UnaryField& unary) { return softmax_over_classes(unary); }

SoftSeg mean_field_step(const SoftSeg& q, const UnaryField& unary, const CrfKernels& kernels) {
  if (!q.same_shape(unary)) throw std::invalid_argument("Q and unary field shapes differ");
  if (kernels.points() != q.pixels()) throw std::invalid_argument("CRF kernels were built for a different image");
  const ValueField msg = kernels.message(as_values(q));
  std::vector<double> logits(unary.data().begin(), unary.data().end());
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += msg.data()[i];
  return softmax_over_classes(UnaryField(unary.height(), unary.width(), unary.classes(), std::move(logits)));
}

SoftSeg mean_field_step(const SoftSeg& q, const UnaryField& unary, const ImageBuffer& img, const CrfConfig& cfg,
                        FilterMethod method) {
  check_unary(unary, img);
  return mean_field_step(q, unary, CrfKernels(img, cfg, method));
}

RefineResult refine(const UnaryField& unary, const ImageBuffer& img, const CrfConfig& cfg, FilterMethod method) {
  check_unary(unary, img);
  const CrfKernels kernels(img, cfg, method);
  SoftSeg q = mean_field_init(unary);
  for (int it = 0; it < cfg.iterations; ++it) q = mean_field_step(q, unary, kernels);
  LabelMask labels = argmax_labeling(q);
  return {std::move(labels), std::move(q)};
}

}  // namespace wsseg
