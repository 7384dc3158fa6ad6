#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wsseg/core.hpp"

namespace wsseg {

/// Whitened per-point features (raw coordinate divided by its bandwidth),
/// stored point-major.
class FeatureField {
 public:
  FeatureField() = default;
  FeatureField(std::size_t points, int dims, std::vector<double> values);

  std::size_t points() const { return points_; }
  int dims() const { return dims_; }
  std::span<const double> point(std::size_t p) const {
    return {values_.data() + p * dims_, static_cast<std::size_t>(dims_)};
  }
  std::span<const double> data() const { return values_; }

 private:
  std::size_t points_ = 0;
  int dims_ = 0;
  std::vector<double> values_;
};

/// Per-point vectors to be filtered, stored point-major.
class ValueField {
 public:
  ValueField() = default;
  ValueField(std::size_t points, int channels, double fill = 0.0);
  ValueField(std::size_t points, int channels, std::vector<double> values);

  std::size_t points() const { return points_; }
  int channels() const { return channels_; }
  std::span<const double> point(std::size_t p) const {
    return {values_.data() + p * channels_, static_cast<std::size_t>(channels_)};
  }
  std::span<double> point(std::size_t p) {
    return {values_.data() + p * channels_, static_cast<std::size_t>(channels_)};
  }
  double at(std::size_t p, int c) const { return values_[p * channels_ + c]; }
  std::span<const double> data() const { return values_; }
  std::span<double> data() { return values_; }

 private:
  std::size_t points_ = 0;
  int channels_ = 0;
  std::vector<double> values_;
};

namespace detail {
class LatticeHash;
}

enum class FeatureKind { bilateral, spatial };

/// Bilateral features are (x, y, r, g, b) and spatial features are (x, y),
/// each divided by its bandwidth. `bandwidths` is either one value per
/// feature dimension or the compact form: {spatial, color} for bilateral,
/// {spatial} for spatial.
FeatureField build_features(const ImageBuffer& img, FeatureKind kind, std::span<const double> bandwidths);
FeatureField bilateral_features(const ImageBuffer& img, double sigma_xy, double sigma_rgb);
FeatureField spatial_features(const ImageBuffer& img, double sigma_xy);

/// Exact O(N^2) Gaussian filter: out_p = sum_q exp(-|f_p - f_q|^2 / 2) v_q.
ValueField brute_force_filter(const ValueField& v, const FeatureField& f, bool include_self);

/// Permutohedral-lattice approximation of brute_force_filter (splat, blur
/// along the d+1 lattice axes, slice). The lattice is built once per feature
/// field and can filter any number of value fields.
///
/// The lattice is closed under the blur: every vertex on a blur path between
/// occupied vertices is materialised, so the sparse blur equals the blur on
/// the infinite lattice at every sliced vertex.
///
/// Each point's own contribution is replaced by the exact k(p, p) = 1, and
/// the remaining response is divided by the mean lattice self-response so
/// the lattice kernel and the Gaussian agree at zero offset on average.
class PermutohedralLattice {
 public:
  explicit PermutohedralLattice(const FeatureField& f);

  std::size_t points() const { return points_; }
  int dims() const { return dims_; }
  std::size_t vertex_count() const { return vertex_count_; }
  double scale() const { return scale_; }

  /// include_self = false subtracts v_p from the calibrated response.
  ValueField filter(const ValueField& v, bool include_self) const;

 private:
  PermutohedralLattice(const FeatureField& f, bool calibrate);
  void close_lattice(detail::LatticeHash& occupied);
  static const std::vector<double>& vertex_coupling(int d);
  ValueField raw_filter(const ValueField& v) const;
  std::vector<double> compute_self_response() const;

  std::size_t points_ = 0;
  int dims_ = 0;
  std::size_t vertex_count_ = 0;
  // d+1 vertex indices and barycentric weights per point
  std::vector<std::int32_t> offsets_;
  std::vector<double> barycentric_;
  // two neighbour indices per vertex per lattice axis, -1 when absent
  std::vector<std::int32_t> neighbours_;
  std::vector<double> self_response_;
  double scale_ = 1.0;
};

ValueField lattice_filter(const ValueField& v, const FeatureField& f, bool include_self);

enum class FilterMethod { exact, lattice };

/// Builds the filter once and applies it repeatedly, by either route.
class GaussianFilter {
 public:
  GaussianFilter(FeatureField f, FilterMethod method);
  ValueField apply(const ValueField& v, bool include_self) const;
  FilterMethod method() const { return method_; }
  std::size_t points() const { return features_.points(); }

 private:
  FeatureField features_;
  FilterMethod method_;
  std::vector<PermutohedralLattice> lattice_;  // empty for the exact route
};

}  // namespace wsseg
