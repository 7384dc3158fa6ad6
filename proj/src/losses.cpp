#include "wsseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace wsseg {

void LossConfig::validate() const {
  if (!(sigma_rgb > 0.0 && sigma_xy > 0.0)) throw std::invalid_argument("loss bandwidths must be positive");
  if (!(scale > 0.0 && scale <= 1.0)) throw std::invalid_argument("loss scale must lie in (0, 1]");
  if (!(w >= 0.0)) throw std::invalid_argument("CRF loss weight must be non-negative");
  if (!(lambda_crf >= 0.0)) throw std::invalid_argument("lambda_crf must be non-negative");
}

LossWithGradient partial_cross_entropy(const SoftSeg& s, const LabelMask& scribbles, bool mean_reduction) {
  if (s.height() != scribbles.height() || s.width() != scribbles.width())
    throw std::invalid_argument("scribbles do not match the segmentation dimensions");
  scribbles.validate(s.classes());

  LossWithGradient out{0.0, FieldGradient(s.height(), s.width(), s.classes(), 0.0)};
  const std::size_t count = scribbles.labeled_count();
  if (count == 0) return out;
  const double norm = mean_reduction ? 1.0 / static_cast<double>(count) : 1.0;
  for (std::size_t i = 0; i < s.pixels(); ++i) {
    if (scribbles.is_ignore(i)) continue;
    const int label = scribbles[i];
    auto prob = s.pixel(i);
    auto g = out.grad.pixel(i);
    out.loss -= std::log(std::max(prob[label], std::numeric_limits<double>::min()));
    for (int c = 0; c < s.classes(); ++c) g[c] = norm * (prob[c] - (c == label ? 1.0 : 0.0));
  }
  out.loss *= norm;
  return out;
}

// ---------------------------------------------------------------------------

std::vector<BilinearResampler::Tap> BilinearResampler::taps(int src, int dst) {
  std::vector<Tap> out(dst);
  const double ratio = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double pos = (i + 0.5) * ratio - 0.5;
    const double base = std::floor(pos);
    const double frac = pos - base;
    const int i0 = static_cast<int>(base);
    out[i].index[0] = std::clamp(i0, 0, src - 1);
    out[i].index[1] = std::clamp(i0 + 1, 0, src - 1);
    out[i].weight[0] = 1.0 - frac;
    out[i].weight[1] = frac;
  }
  return out;
}

BilinearResampler::BilinearResampler(int height, int width, double scale)
    : src_h_(height),
      src_w_(width),
      dst_h_(std::max(1, static_cast<int>(std::lround(height * scale)))),
      dst_w_(std::max(1, static_cast<int>(std::lround(width * scale)))),
      identity_(dst_h_ == height && dst_w_ == width) {
  if (!(scale > 0.0 && scale <= 1.0)) throw std::invalid_argument("resampling scale must lie in (0, 1]");
  rows_ = taps(src_h_, dst_h_);
  cols_ = taps(src_w_, dst_w_);
}

std::vector<double> BilinearResampler::apply(std::span<const double> src, int channels) const {
  if (src.size() != static_cast<std::size_t>(src_h_) * src_w_ * channels)
    throw std::invalid_argument("resampler input has the wrong size");
  if (identity_) return {src.begin(), src.end()};
  std::vector<double> dst(static_cast<std::size_t>(dst_h_) * dst_w_ * channels, 0.0);
  for (int i = 0; i < dst_h_; ++i)
    for (int j = 0; j < dst_w_; ++j) {
      double* out = dst.data() + (static_cast<std::size_t>(i) * dst_w_ + j) * channels;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double wgt = rows_[i].weight[a] * cols_[j].weight[b];
          const double* in =
              src.data() + (static_cast<std::size_t>(rows_[i].index[a]) * src_w_ + cols_[j].index[b]) * channels;
          for (int c = 0; c < channels; ++c) out[c] += wgt * in[c];
        }
    }
  return dst;
}

std::vector<double> BilinearResampler::adjoint(std::span<const double> dst, int channels) const {
  if (dst.size() != static_cast<std::size_t>(dst_h_) * dst_w_ * channels)
    throw std::invalid_argument("resampler adjoint input has the wrong size");
  if (identity_) return {dst.begin(), dst.end()};
  std::vector<double> src(static_cast<std::size_t>(src_h_) * src_w_ * channels, 0.0);
  for (int i = 0; i < dst_h_; ++i)
    for (int j = 0; j < dst_w_; ++j) {
      const double* in = dst.data() + (static_cast<std::size_t>(i) * dst_w_ + j) * channels;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double wgt = rows_[i].weight[a] * cols_[j].weight[b];
          double* out =
              src.data() + (static_cast<std::size_t>(rows_[i].index[a]) * src_w_ + cols_[j].index[b]) * channels;
          for (int c = 0; c < channels; ++c) out[c] += wgt * in[c];
        }
    }
  return src;
}

// ---------------------------------------------------------------------------

namespace {

ImageBuffer resample_image(const ImageBuffer& img, const BilinearResampler& r) {
  auto rgb = r.apply(img.data(), 3);
  for (double& v : rgb) v = std::clamp(v, 0.0, 255.0);
  return ImageBuffer(r.dst_height(), r.dst_width(), std::move(rgb));
}

FeatureField loss_features(const ImageBuffer& img, const LossConfig& cfg, const BilinearResampler& r) {
  cfg.validate();
  const double bandwidths[] = {cfg.sigma_xy * r.dst_width() / r.src_width(),
                               cfg.sigma_xy * r.dst_height() / r.src_height(), cfg.sigma_rgb, cfg.sigma_rgb,
                               cfg.sigma_rgb};
  return build_features(resample_image(img, r), FeatureKind::bilateral, bandwidths);
}

}  // namespace

DenseCrfLoss::DenseCrfLoss(const ImageBuffer& img, const LossConfig& cfg, bool exact)
    : height_(img.height()),
      width_(img.width()),
      weight_(cfg.w),
      resampler_(img.height(), img.width(), cfg.scale),
      filter_(loss_features(img, cfg, resampler_), exact ? FilterMethod::exact : FilterMethod::lattice) {}

LossWithGradient DenseCrfLoss::evaluate(const SoftSeg& s) const {
  if (s.height() != height_ || s.width() != width_)
    throw std::invalid_argument("segmentation does not match the loss image dimensions");
  const int classes = s.classes();
  const std::vector<double> small = resampler_.apply(s.data(), classes);
  const std::size_t n = filter_.points();

  // the extra all-ones channel yields the degrees in the same pass
  ValueField values(n, classes + 1);
  for (std::size_t p = 0; p < n; ++p) {
    auto dst = values.point(p);
    std::copy_n(small.begin() + p * classes, classes, dst.begin());
    dst[classes] = 1.0;
  }
  const ValueField filtered = filter_.apply(values, false);

  double loss = 0.0;
  std::vector<double> grad_small(n * classes);
  for (std::size_t p = 0; p < n; ++p) {
    const auto f = filtered.point(p);
    const double deg = f[classes];
    for (int l = 0; l < classes; ++l) {
      const double sl = small[p * classes + l];
      loss += sl * (deg - f[l]);
      grad_small[p * classes + l] = weight_ * (deg - 2.0 * f[l]);
    }
  }

  LossWithGradient out{weight_ * loss, FieldGradient(height_, width_, classes,
                                                     resampler_.adjoint(grad_small, classes))};
  return out;
}

LossWithGradient dense_crf_loss(const SoftSeg& s, const ImageBuffer& img, const LossConfig& cfg, bool exact) {
  if (s.height() != img.height() || s.width() != img.width())
    throw std::invalid_argument("segmentation does not match image dimensions");
  return DenseCrfLoss(img, cfg, exact).evaluate(s);
}

// ---------------------------------------------------------------------------

CombinedObjective::CombinedObjective(const ImageBuffer& img, const LabelMask& scribbles, int classes,
                                     const LossConfig& cfg)
    : height_(img.height()), width_(img.width()), classes_(classes), scribbles_(scribbles), cfg_(cfg) {
  cfg_.validate();
  if (scribbles.height() != img.height() || scribbles.width() != img.width())
    throw std::invalid_argument("scribbles do not match image dimensions");
  scribbles.validate(classes);
  if (cfg_.lambda_crf > 0.0) crf_.emplace(img, cfg_, cfg_.exact);
}

CombinedResult CombinedObjective::evaluate(const UnaryField& logits) const {
  if (logits.height() != height_ || logits.width() != width_ || logits.classes() != classes_)
    throw std::invalid_argument("logit field does not match the objective shape");
  const SoftSeg s = softmax_over_classes(logits);

  CombinedResult out{{}, FieldGradient(height_, width_, classes_, 0.0)};
  const std::size_t count = scribbles_.labeled_count();
  out.report.labeled_pixel_count = count;
  const double norm = cfg_.mean_reduction && count > 0 ? 1.0 / static_cast<double>(count) : 1.0;

  // pCE from the logits directly: log-sum-exp avoids log(0) on confident pixels
  double pce = 0.0;
  for (std::size_t i = 0; i < s.pixels(); ++i) {
    if (scribbles_.is_ignore(i)) continue;
    const int label = scribbles_[i];
    auto z = logits.pixel(i);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    pce += m + std::log(sum) - z[label];
    auto prob = s.pixel(i);
    auto g = out.grad.pixel(i);
    for (int c = 0; c < classes_; ++c) g[c] = norm * (prob[c] - (c == label ? 1.0 : 0.0));
  }
  out.report.pce = norm * pce;

  if (crf_) {
    const LossWithGradient crf = crf_->evaluate(s);
    out.report.crf = crf.loss;
    const double lambda = cfg_.lambda_crf;
    for (std::size_t i = 0; i < s.pixels(); ++i) {
      auto prob = s.pixel(i);
      auto gs = crf.grad.pixel(i);
      double inner = 0.0;
      for (int c = 0; c < classes_; ++c) inner += prob[c] * gs[c];
      auto g = out.grad.pixel(i);
      for (int c = 0; c < classes_; ++c) g[c] += lambda * prob[c] * (gs[c] - inner);
    }
  }
  out.report.combined = out.report.pce + cfg_.lambda_crf * out.report.crf;
  return out;
}

CombinedResult combined_loss(const UnaryField& logits, const ImageBuffer& img, const LabelMask& scribbles,
                             const LossConfig& cfg) {
  return CombinedObjective(img, scribbles, logits.classes(), cfg).evaluate(logits);
}

}  // namespace wsseg
