#include "wsseg/filtering.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <string>

#include "wsseg/parallel.hpp"
#include "wsseg/simd/kernels.hpp"

namespace wsseg {

FeatureField::FeatureField(std::size_t points, int dims, std::vector<double> values)
    : points_(points), dims_(dims), values_(std::move(values)) {
  if (dims < 1) throw std::invalid_argument("feature dimension must be positive");
  if (values_.size() != points * dims) throw std::invalid_argument("feature payload does not match N x d");
  for (double v : values_)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
}

ValueField::ValueField(std::size_t points, int channels, double fill) : points_(points), channels_(channels) {
  if (channels < 1) throw std::invalid_argument("value channel count must be positive");
  values_.assign(points * channels, fill);
}

ValueField::ValueField(std::size_t points, int channels, std::vector<double> values)
    : points_(points), channels_(channels), values_(std::move(values)) {
  if (channels < 1) throw std::invalid_argument("value channel count must be positive");
  if (values_.size() != points * channels) throw std::invalid_argument("value payload does not match N x V");
}

FeatureField build_features(const ImageBuffer& img, FeatureKind kind, std::span<const double> bandwidths) {
  const int dims = kind == FeatureKind::bilateral ? 5 : 2;
  std::vector<double> bw(dims);
  if (static_cast<int>(bandwidths.size()) == dims) {
    std::copy(bandwidths.begin(), bandwidths.end(), bw.begin());
  } else if (kind == FeatureKind::bilateral && bandwidths.size() == 2) {
    bw = {bandwidths[0], bandwidths[0], bandwidths[1], bandwidths[1], bandwidths[1]};
  } else if (kind == FeatureKind::spatial && bandwidths.size() == 1) {
    bw = {bandwidths[0], bandwidths[0]};
  } else {
    throw std::invalid_argument("expected " + std::to_string(dims) + " bandwidths, got " +
                                std::to_string(bandwidths.size()));
  }
  for (double b : bw)
    if (!(b > 0.0) || !std::isfinite(b)) throw std::invalid_argument("bandwidths must be positive");

  std::vector<double> values;
  values.reserve(img.pixels() * dims);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      values.push_back(x / bw[0]);
      values.push_back(y / bw[1]);
      if (kind == FeatureKind::bilateral)
        for (int c = 0; c < 3; ++c) values.push_back(img.at(y, x, c) / bw[2 + c]);
    }
  }
  return FeatureField(img.pixels(), dims, std::move(values));
}

FeatureField bilateral_features(const ImageBuffer& img, double sigma_xy, double sigma_rgb) {
  const double bw[] = {sigma_xy, sigma_rgb};
  return build_features(img, FeatureKind::bilateral, bw);
}

FeatureField spatial_features(const ImageBuffer& img, double sigma_xy) {
  const double bw[] = {sigma_xy};
  return build_features(img, FeatureKind::spatial, bw);
}

namespace {

void check_pair(const ValueField& v, const FeatureField& f) {
  if (v.points() != f.points())
    throw std::invalid_argument("value field has " + std::to_string(v.points()) + " points, features have " +
                                std::to_string(f.points()));
}

// dimension-major copy for the row kernel
std::vector<double> to_soa(std::span<const double> src, std::size_t n, int width) {
  std::vector<double> out(src.size());
  for (std::size_t p = 0; p < n; ++p)
    for (int k = 0; k < width; ++k) out[k * n + p] = src[p * width + k];
  return out;
}

}  // namespace

ValueField brute_force_filter(const ValueField& v, const FeatureField& f, bool include_self) {
  check_pair(v, f);
  const std::size_t n = f.points();
  const int channels = v.channels();
  const auto feat = to_soa(f.data(), n, f.dims());
  const auto planes = to_soa(v.data(), n, channels);
  const auto& kern = simd::kernels();

  ValueField out(n, channels);
  // one row of the kernel matrix per task; rows never share accumulators
  parallel_for(n, [&](std::size_t p) {
    thread_local std::vector<double> weights;
    weights.resize(n);
    kern.gaussian_row(f.point(p).data(), feat.data(), n, f.dims(), n, weights.data());
    weights[p] = include_self ? 1.0 : 0.0;
    auto row = out.point(p);
    for (int c = 0; c < channels; ++c) row[c] = kern.dot(weights.data(), planes.data() + c * n, n);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Permutohedral lattice

namespace detail {

// Open-addressing table from integer lattice keys (d coordinates) to dense
// vertex indices assigned in insertion order.
class LatticeHash {
 public:
  LatticeHash(int key_size, std::size_t expected) : key_size_(key_size) {
    std::size_t cap = 64;
    while (cap < 2 * expected) cap <<= 1;
    slots_.assign(cap, -1);
  }

  std::int32_t find_or_insert(const std::int32_t* key) { return lookup(key, true); }
  std::int32_t find(const std::int32_t* key) const { return const_cast<LatticeHash*>(this)->lookup(key, false); }
  std::size_t size() const { return keys_.size() / key_size_; }
  const std::int32_t* key(std::size_t i) const { return keys_.data() + i * key_size_; }

 private:
  std::size_t hash(const std::int32_t* key) const {
    std::uint64_t h = 0x9E3779B97F4A7C15ull;
    for (int i = 0; i < key_size_; ++i) h = (h ^ static_cast<std::uint32_t>(key[i])) * 0xff51afd7ed558ccdull;
    return static_cast<std::size_t>(h ^ (h >> 29));
  }

  std::int32_t lookup(const std::int32_t* key, bool insert) {
    if (insert && 2 * (size() + 1) > slots_.size()) grow();
    const std::size_t mask = slots_.size() - 1;
    for (std::size_t h = hash(key) & mask;; h = (h + 1) & mask) {
      const std::int32_t idx = slots_[h];
      if (idx < 0) {
        if (!insert) return -1;
        slots_[h] = static_cast<std::int32_t>(size());
        keys_.insert(keys_.end(), key, key + key_size_);
        return slots_[h];
      }
      if (std::equal(key, key + key_size_, keys_.data() + static_cast<std::size_t>(idx) * key_size_)) return idx;
    }
  }

  void grow() {
    slots_.assign(slots_.size() * 2, -1);
    const std::size_t mask = slots_.size() - 1;
    for (std::size_t i = 0; i < size(); ++i) {
      std::size_t h = hash(key(i)) & mask;
      while (slots_[h] >= 0) h = (h + 1) & mask;
      slots_[h] = static_cast<std::int32_t>(i);
    }
  }

  int key_size_;
  std::vector<std::int32_t> slots_;
  std::vector<std::int32_t> keys_;
};

}  // namespace detail

namespace {
// The closed lattice's kernel is slightly wider than a unit Gaussian;
// shrinking the lattice spacing by this factor matches the two over the
// first two standard deviations in both 2-D and 5-D.
constexpr double kBandwidthCorrection = 1.06;
}  // namespace

PermutohedralLattice::PermutohedralLattice(const FeatureField& f) : PermutohedralLattice(f, true) {}

PermutohedralLattice::PermutohedralLattice(const FeatureField& f, bool calibrate)
    : points_(f.points()), dims_(f.dims()) {
  const int d = dims_;
  const int d1 = d + 1;
  offsets_.resize(points_ * d1);
  barycentric_.resize(points_ * d1);
  detail::LatticeHash table(d, points_ * d1);

  // Scaling that makes the [1 2 1] blur along each axis approximate a unit
  // Gaussian in feature space.
  const double inv_std = std::sqrt(2.0 / 3.0) * d1 * kBandwidthCorrection;
  std::vector<double> scale_factor(d);
  for (int i = 0; i < d; ++i) scale_factor[i] = inv_std / std::sqrt(static_cast<double>((i + 1) * (i + 2)));

  std::vector<double> elevated(d1), bary(d1 + 1);
  std::vector<std::int32_t> rem0(d1), rank(d1), key(d);
  const double down = 1.0 / d1;

  for (std::size_t p = 0; p < points_; ++p) {
    const auto feat = f.point(p);
    // project onto the hyperplane sum(x) = 0 in d+1 dimensions
    double sm = 0.0;
    for (int j = d; j > 0; --j) {
      const double cf = feat[j - 1] * scale_factor[j - 1];
      elevated[j] = sm - j * cf;
      sm += cf;
    }
    elevated[0] = sm;

    // nearest remainder-0 lattice point
    int sum = 0;
    for (int i = 0; i <= d; ++i) {
      const double v = down * elevated[i];
      const double up = std::ceil(v) * d1;
      const double dn = std::floor(v) * d1;
      rem0[i] = static_cast<std::int32_t>(up - elevated[i] < elevated[i] - dn ? up : dn);
      sum += rem0[i];
    }
    sum /= d1;

    std::fill(rank.begin(), rank.end(), 0);
    for (int i = 0; i < d; ++i) {
      const double di = elevated[i] - rem0[i];
      for (int j = i + 1; j <= d; ++j) {
        if (di < elevated[j] - rem0[j])
          ++rank[i];
        else
          ++rank[j];
      }
    }
    if (sum > 0) {
      for (int i = 0; i <= d; ++i) {
        if (rank[i] >= d1 - sum) {
          rank[i] -= d1 - sum;
          rem0[i] -= d1;
        } else {
          rank[i] += sum;
        }
      }
    } else if (sum < 0) {
      for (int i = 0; i <= d; ++i) {
        if (rank[i] < -sum) {
          rank[i] += d1 + sum;
          rem0[i] += d1;
        } else {
          rank[i] += sum;
        }
      }
    }

    std::fill(bary.begin(), bary.end(), 0.0);
    for (int i = 0; i <= d; ++i) {
      const double v = (elevated[i] - rem0[i]) * down;
      bary[d - rank[i]] += v;
      bary[d1 - rank[i]] -= v;
    }
    bary[0] += 1.0 + bary[d1];

    for (int r = 0; r <= d; ++r) {
      // canonical simplex vertex r: coordinate i gets r, or r - (d+1) once rank exceeds d - r
      for (int i = 0; i < d; ++i) key[i] = rem0[i] + (rank[i] <= d - r ? r : r - d1);
      offsets_[p * d1 + r] = table.find_or_insert(key.data());
      barycentric_[p * d1 + r] = bary[r];
    }
  }

  close_lattice(table);
  if (!calibrate) return;
  self_response_ = compute_self_response();
  double alpha_sum = 0.0;
  for (double a : self_response_) alpha_sum += a;
  scale_ = alpha_sum > 0.0 ? static_cast<double>(points_) / alpha_sum : 1.0;
}

void PermutohedralLattice::close_lattice(detail::LatticeHash& occupied) {
  // Blurring axis by axis moves mass onto vertices no point occupies. Keep
  // every vertex that lies on a blur path from an occupied vertex back to an
  // occupied vertex, so the sparse blur equals the blur on the full lattice
  // wherever it is sliced. Paths are enumerated from both ends and joined at
  // the middle pass.
  const int d = dims_;
  const int d1 = d + 1;
  const int mid = d1 / 2;
  const std::size_t occupied_count = occupied.size();
  std::vector<std::int32_t> nb(d), key(d);
  auto neighbour = [&](const std::int32_t* k, int axis, int sign) {
    for (int i = 0; i < d; ++i) nb[i] = k[i] - sign;
    if (axis < d) nb[axis] = k[axis] + sign * d;
    return nb.data();
  };
  auto expand = [&](detail::LatticeHash& table, std::vector<int>& stage, int axis, int new_stage) {
    const std::size_t count = table.size();
    for (std::size_t v = 0; v < count; ++v) {
      for (int sign : {-1, 1}) {
        std::copy(table.key(v), table.key(v) + d, key.begin());
        const std::size_t before = table.size();
        table.find_or_insert(neighbour(key.data(), axis, sign));
        if (table.size() > before) stage.push_back(new_stage);
      }
    }
  };

  // forward half: vertices holding mass before pass `mid`, tagged with the
  // first pass boundary at which they can
  detail::LatticeHash& fwd = occupied;
  std::vector<int> fwd_stage(occupied_count, 0);
  for (int axis = 0; axis < mid; ++axis) expand(fwd, fwd_stage, axis, axis + 1);

  // backward half: vertices that can still reach an occupied vertex using
  // passes axis..d, tagged with the smallest such boundary
  detail::LatticeHash bwd(d, occupied_count);
  for (std::size_t v = 0; v < occupied_count; ++v) bwd.find_or_insert(occupied.key(v));
  std::vector<int> bwd_stage(occupied_count, d1);
  for (int axis = d; axis >= mid; --axis) expand(bwd, bwd_stage, axis, axis);

  // bit j set: vertex is needed at pass boundary j
  std::vector<std::uint32_t> fwd_need(fwd.size(), 0), bwd_need(bwd.size(), 0);
  for (std::size_t v = 0; v < fwd.size(); ++v) {
    const std::int32_t b = bwd.find(fwd.key(v));
    if (b >= 0) {
      fwd_need[v] |= 1u << mid;
      bwd_need[b] |= 1u << mid;
    }
  }
  for (int axis = mid - 1; axis >= 0; --axis) {
    const std::uint32_t next = 1u << (axis + 1);
    for (std::size_t v = 0; v < fwd.size(); ++v) {
      if (fwd_stage[v] > axis) continue;
      bool need = fwd_need[v] & next;
      for (int sign : {-1, 1}) {
        if (need) break;
        const std::int32_t u = fwd.find(neighbour(fwd.key(v), axis, sign));
        need = u >= 0 && (fwd_need[u] & next);
      }
      if (need) fwd_need[v] |= 1u << axis;
    }
  }
  for (int axis = mid; axis < d1; ++axis) {
    const std::uint32_t prev = 1u << axis;
    for (std::size_t v = 0; v < bwd.size(); ++v) {
      if (bwd_stage[v] < axis + 1) continue;
      bool need = bwd_need[v] & prev;
      for (int sign : {-1, 1}) {
        if (need) break;
        const std::int32_t u = bwd.find(neighbour(bwd.key(v), axis, sign));
        need = u >= 0 && (bwd_need[u] & prev);
      }
      if (need) bwd_need[v] |= 1u << (axis + 1);
    }
  }

  // occupied vertices keep their indices
  detail::LatticeHash kept(d, occupied_count * 2);
  for (std::size_t v = 0; v < occupied_count; ++v) kept.find_or_insert(fwd.key(v));
  for (std::size_t v = occupied_count; v < fwd.size(); ++v)
    if (fwd_need[v]) kept.find_or_insert(fwd.key(v));
  for (std::size_t v = occupied_count; v < bwd.size(); ++v)
    if (bwd_need[v]) kept.find_or_insert(bwd.key(v));

  vertex_count_ = kept.size();
  neighbours_.assign(vertex_count_ * d1 * 2, -1);
  for (std::size_t v = 0; v < vertex_count_; ++v) {
    for (int axis = 0; axis < d1; ++axis) {
      neighbours_[(v * d1 + axis) * 2 + 0] = kept.find(neighbour(kept.key(v), axis, -1));
      neighbours_[(v * d1 + axis) * 2 + 1] = kept.find(neighbour(kept.key(v), axis, 1));
    }
  }
}

const std::vector<double>& PermutohedralLattice::vertex_coupling(int d) {
  // B[v_r, v_s] between the vertices of one simplex. The full-lattice blur is
  // a convolution symmetric under axis permutations, so this table does not
  // depend on which simplex a point falls in.
  static std::mutex mutex;
  static std::vector<std::vector<double>> cache;
  std::lock_guard lock(mutex);
  if (cache.size() <= static_cast<std::size_t>(d)) cache.resize(d + 1);
  auto& table = cache[d];
  if (!table.empty()) return table;

  const int d1 = d + 1;
  const PermutohedralLattice origin(FeatureField(1, d, std::vector<double>(d, 0.0)), false);
  table.assign(static_cast<std::size_t>(d1) * d1, 0.0);
  for (int s = 0; s < d1; ++s) {
    std::vector<double> grid(origin.vertex_count_, 0.0), next(origin.vertex_count_);
    grid[origin.offsets_[s]] = 1.0;
    for (int axis = 0; axis < d1; ++axis) {
      for (std::size_t v = 0; v < origin.vertex_count_; ++v) {
        const std::int32_t a = origin.neighbours_[(v * d1 + axis) * 2 + 0];
        const std::int32_t b = origin.neighbours_[(v * d1 + axis) * 2 + 1];
        next[v] = grid[v] + 0.5 * ((a >= 0 ? grid[a] : 0.0) + (b >= 0 ? grid[b] : 0.0));
      }
      grid.swap(next);
    }
    for (int r = 0; r < d1; ++r) table[r * d1 + s] = grid[origin.offsets_[r]];
  }
  return table;
}

std::vector<double> PermutohedralLattice::compute_self_response() const {
  // Response of the lattice at p to a unit impulse at p: b_p^T B b_p.
  const int d1 = dims_ + 1;
  const auto& coupling = vertex_coupling(dims_);
  std::vector<double> alpha(points_);
  for (std::size_t p = 0; p < points_; ++p) {
    const double* b = barycentric_.data() + p * d1;
    double a = 0.0;
    for (int r = 0; r < d1; ++r)
      for (int s = 0; s < d1; ++s) a += b[r] * b[s] * coupling[r * d1 + s];
    alpha[p] = a;
  }
  return alpha;
}

ValueField PermutohedralLattice::raw_filter(const ValueField& v) const {
  const int d1 = dims_ + 1;
  const std::size_t channels = static_cast<std::size_t>(v.channels());
  const auto& kern = simd::kernels();

  // splat in point order so vertex sums are reproducible
  std::vector<double> grid(vertex_count_ * channels, 0.0);
  for (std::size_t p = 0; p < points_; ++p) {
    const double* val = v.point(p).data();
    for (int r = 0; r < d1; ++r)
      kern.axpy(barycentric_[p * d1 + r], val, channels,
                grid.data() + static_cast<std::size_t>(offsets_[p * d1 + r]) * channels);
  }

  std::vector<double> next(grid.size());
  const std::vector<double> zeros(channels, 0.0);
  for (int axis = 0; axis < d1; ++axis) {
    parallel_for(vertex_count_, [&](std::size_t vtx) {
      const std::int32_t a = neighbours_[(vtx * d1 + axis) * 2 + 0];
      const std::int32_t b = neighbours_[(vtx * d1 + axis) * 2 + 1];
      const double* lo = a >= 0 ? grid.data() + static_cast<std::size_t>(a) * channels : zeros.data();
      const double* hi = b >= 0 ? grid.data() + static_cast<std::size_t>(b) * channels : zeros.data();
      kern.blur_tap(grid.data() + vtx * channels, lo, hi, channels, next.data() + vtx * channels);
    });
    grid.swap(next);
  }

  ValueField out(points_, static_cast<int>(channels));
  parallel_for(points_, [&](std::size_t p) {
    double* dst = out.point(p).data();
    for (int r = 0; r < d1; ++r)
      kern.axpy(barycentric_[p * d1 + r], grid.data() + static_cast<std::size_t>(offsets_[p * d1 + r]) * channels,
                channels, dst);
  });
  return out;
}

ValueField PermutohedralLattice::filter(const ValueField& v, bool include_self) const {
  if (v.points() != points_)
    throw std::invalid_argument("value field has " + std::to_string(v.points()) + " points, lattice has " +
                                std::to_string(points_));
  ValueField out = raw_filter(v);
  auto dst = out.data();
  const auto src = v.data();
  const std::size_t channels = static_cast<std::size_t>(v.channels());
  for (std::size_t p = 0; p < points_; ++p)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = p * channels + c;
      dst[i] = scale_ * (dst[i] - self_response_[p] * src[i]) + (include_self ? src[i] : 0.0);
    }
  return out;
}

ValueField lattice_filter(const ValueField& v, const FeatureField& f, bool include_self) {
  check_pair(v, f);
  return PermutohedralLattice(f).filter(v, include_self);
}

GaussianFilter::GaussianFilter(FeatureField f, FilterMethod method) : features_(std::move(f)), method_(method) {
  if (method_ == FilterMethod::lattice) lattice_.emplace_back(features_);
}

ValueField GaussianFilter::apply(const ValueField& v, bool include_self) const {
  if (method_ == FilterMethod::exact) return brute_force_filter(v, features_, include_self);
  check_pair(v, features_);
  return lattice_.front().filter(v, include_self);
}

}  // namespace wsseg
