#pragma once

#include "wsseg/core.hpp"
#include "wsseg/filtering.hpp"

namespace wsseg {

/// Two-kernel Potts dense CRF: an appearance kernel over (position / sigma_alpha,
/// raw RGB / sigma_beta) weighted by w1 and a smoothness kernel over
/// position / sigma_gamma weighted by w2.
struct CrfConfig {
  double w1 = 3.0;
  double w2 = 4.0;
  double sigma_alpha = 67.0;
  double sigma_beta = 3.0;
  double sigma_gamma = 1.0;
  int iterations = 5;

  void validate() const;
};

struct EnergyTerms {
  double unary = 0.0;
  double pairwise = 0.0;
  double total = 0.0;
};

/// Sum of -log softmax(logits_p)(mask_p) over pixels.
double unary_energy(const LabelMask& mask, const UnaryField& unary);

/// Potts pairwise energy summed over ordered pairs p != q, so every unordered
/// pair is counted twice.
double pairwise_energy(const LabelMask& mask, const ImageBuffer& img, const CrfConfig& cfg,
                       FilterMethod method = FilterMethod::exact);

double total_energy(const LabelMask& mask, const UnaryField& unary, const ImageBuffer& img, const CrfConfig& cfg,
                    FilterMethod method = FilterMethod::exact);

EnergyTerms energy_terms(const LabelMask& mask, const UnaryField& unary, const ImageBuffer& img, const CrfConfig& cfg,
                         FilterMethod method = FilterMethod::exact);

/// Appearance and smoothness filters for one image, built once and reused
/// across mean-field iterations.
class CrfKernels {
 public:
  CrfKernels(const ImageBuffer& img, const CrfConfig& cfg, FilterMethod method);

  /// w1 * appearance(Q) + w2 * smoothness(Q), self term excluded.
  ValueField message(const ValueField& q) const;
  std::size_t points() const { return points_; }

 private:
  std::size_t points_;
  double w1_, w2_;
  std::vector<GaussianFilter> appearance_, smoothness_;  // empty when the weight is zero
};

SoftSeg mean_field_init(const UnaryField& unary);

/// One synchronous update of every pixel:
///   Q'_p(l) ∝ exp(-phi_p(l) - sum_{l' != l} message_p(l')).
/// The message total is constant per pixel, so the update is evaluated as
/// softmax(logits_p + message_p).
SoftSeg mean_field_step(const SoftSeg& q, const UnaryField& unary, const CrfKernels& kernels);
SoftSeg mean_field_step(const SoftSeg& q, const UnaryField& unary, const ImageBuffer& img, const CrfConfig& cfg,
                        FilterMethod method = FilterMethod::lattice);

struct RefineResult {
  LabelMask labels;
  SoftSeg q;
};

/// Mean-field init followed by cfg.iterations steps; returns the MAP readout
/// and the final distribution.
RefineResult refine(const UnaryField& unary, const ImageBuffer& img, const CrfConfig& cfg,
                    FilterMethod method = FilterMethod::lattice);

}  // namespace wsseg
