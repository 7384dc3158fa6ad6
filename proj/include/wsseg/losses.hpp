#pragma once

#include <optional>

#include "wsseg/core.hpp"
#include "wsseg/filtering.hpp"

namespace wsseg {

struct LossConfig {
  double w = 1.0 / 512.0;  // CRF loss weight
  double sigma_rgb = 15.0;
  double sigma_xy = 100.0;  // in full-resolution pixels
  double scale = 0.5;       // resampling factor applied before the CRF term
  double lambda_crf = 1.0;  // weight of the CRF term against pCE
  bool exact = false;       // brute-force filter instead of the lattice
  bool mean_reduction = false;  // divide pCE by the labeled pixel count

  void validate() const;
};

struct LossReport {
  double pce = 0.0;
  double crf = 0.0;
  double combined = 0.0;
  std::size_t labeled_pixel_count = 0;
};

/// Per-pixel, per-class derivative with the same layout as a UnaryField.
class FieldGradient : public detail::PixelClassField {
 public:
  using PixelClassField::PixelClassField;
};

struct LossWithGradient {
  double loss = 0.0;
  FieldGradient grad;
};

/// -sum over labeled p of log S_p(label). The returned gradient is with
/// respect to the logits behind S: S_p - onehot(label) at labeled pixels,
/// exactly zero elsewhere.
LossWithGradient partial_cross_entropy(const SoftSeg& s, const LabelMask& scribbles, bool mean_reduction = false);

/// Separable bilinear resampling (half-pixel centres, edge clamped) as an
/// explicit linear operator, so the adjoint is available for gradients.
class BilinearResampler {
 public:
  BilinearResampler(int height, int width, double scale);

  int src_height() const { return src_h_; }
  int src_width() const { return src_w_; }
  int dst_height() const { return dst_h_; }
  int dst_width() const { return dst_w_; }
  bool identity() const { return identity_; }

  /// src (src_h x src_w x channels) -> dst (dst_h x dst_w x channels)
  std::vector<double> apply(std::span<const double> src, int channels) const;
  /// Adjoint of apply: dst-shaped values back onto the source grid.
  std::vector<double> adjoint(std::span<const double> dst, int channels) const;

 private:
  struct Tap {
    int index[2];
    double weight[2];
  };
  static std::vector<Tap> taps(int src, int dst);

  int src_h_, src_w_, dst_h_, dst_w_;
  bool identity_;
  std::vector<Tap> rows_, cols_;
};

/// Relaxed Potts energy w * sum_l sum_{p != q} k(p, q) S_p(l) (1 - S_q(l)) with
/// a bilateral affinity over (xy / sigma_xy, rgb / sigma_rgb), evaluated on the
/// image and segmentation resampled by cfg.scale. The spatial bandwidth is
/// rescaled with the image so the kernel keeps its extent in original pixels.
/// Image-dependent state (resampled image, filter) is built once.
class DenseCrfLoss {
 public:
  DenseCrfLoss(const ImageBuffer& img, const LossConfig& cfg, bool exact);

  /// Loss and gradient with respect to S at full resolution.
  LossWithGradient evaluate(const SoftSeg& s) const;

 private:
  int height_, width_;
  double weight_;
  BilinearResampler resampler_;
  GaussianFilter filter_;
};

LossWithGradient dense_crf_loss(const SoftSeg& s, const ImageBuffer& img, const LossConfig& cfg, bool exact);

struct CombinedResult {
  LossReport report;
  FieldGradient grad;  // with respect to the logits
};

/// pCE + lambda_crf * denseCRF on S = softmax(logits). The CRF gradient is
/// pulled back through the softmax Jacobian. The CRF term is skipped (and
/// reported as 0) when lambda_crf is 0.
class CombinedObjective {
 public:
  CombinedObjective(const ImageBuffer& img, const LabelMask& scribbles, int classes, const LossConfig& cfg);

  CombinedResult evaluate(const UnaryField& logits) const;

 private:
  int height_, width_, classes_;
  LabelMask scribbles_;
  LossConfig cfg_;
  std::optional<DenseCrfLoss> crf_;
};

CombinedResult combined_loss(const UnaryField& logits, const ImageBuffer& img, const LabelMask& scribbles,
                             const LossConfig& cfg);

}  // namespace wsseg
