// Acceptance suite: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "../tools/cli.hpp"
#include "support/oracles.hpp"
#include "wsseg/crf.hpp"
#include "wsseg/filtering.hpp"
#include "wsseg/io.hpp"
#include "wsseg/losses.hpp"
#include "wsseg/metrics.hpp"
#include "wsseg/optim.hpp"
#include "wsseg/parallel.hpp"

using namespace wsseg;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kFilterTol = 0.15;
constexpr double kBruteTol = 1e-9;
constexpr double kFilterSeconds = 10.0;
constexpr double kEnergyTol = 1e-9;
constexpr double kExhaustiveSeconds = 5.0;
constexpr double kGradTol = 1e-4;
constexpr double kGradFloor = 1e-6;
constexpr double kStep = 1e-3;
constexpr double kGradSeconds = 30.0;
constexpr double kIdentityTol = 1e-9;
constexpr double kFitMiou = 0.95;
constexpr double kFitSeconds = 60.0;
constexpr double kRefineSlack = 0.01;
constexpr int kRefineWins = 9;
constexpr double kMiouTol = 1e-12;

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double score(const LabelMask& pred, const LabelMask& truth, int classes) {
  return miou(accumulate(ConfusionMatrix(classes), pred, truth)).miou;
}

double color_gap(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return std::sqrt(oracle::sq(a[0] - b[0]) + oracle::sq(a[1] - b[1]) + oracle::sq(a[2] - b[2]));
}

std::vector<std::array<double, 3>> distinct_colors(oracle::Rng& rng, int n, double min_gap) {
  std::vector<std::array<double, 3>> colors;
  while (static_cast<int>(colors.size()) < n) {
    const std::array<double, 3> c{oracle::uniform(rng, 30, 225), oracle::uniform(rng, 30, 225),
                                  oracle::uniform(rng, 30, 225)};
    if (std::all_of(colors.begin(), colors.end(), [&](const auto& o) { return color_gap(c, o) >= min_gap; }))
      colors.push_back(c);
  }
  return colors;
}

struct Instance {
  ImageBuffer img;
  LabelMask truth, scribbles;
  int classes = 0;
};

// Voronoi regions with one flat, lightly noisy color each and a short
// horizontal stroke through every region seed.
Instance multi_region(std::uint64_t seed) {
  oracle::Rng rng(seed);
  const int n = 32;
  Instance in;
  in.classes = oracle::uniform_int(rng, 3, 4);
  std::vector<std::array<int, 2>> centres;
  while (static_cast<int>(centres.size()) < in.classes) {
    const std::array<int, 2> c{oracle::uniform_int(rng, 4, n - 5), oracle::uniform_int(rng, 4, n - 5)};
    if (std::all_of(centres.begin(), centres.end(),
                    [&](const auto& o) { return std::abs(c[0] - o[0]) + std::abs(c[1] - o[1]) >= 10; }))
      centres.push_back(c);
  }
  const auto colors = distinct_colors(rng, in.classes, 60.0);
  std::normal_distribution<double> noise(0.0, 4.0);
  in.img = ImageBuffer(n, n);
  in.truth = LabelMask(n, n, 0);
  in.scribbles = LabelMask(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      int best = 0;
      for (int k = 1; k < in.classes; ++k)
        if (oracle::sq(y - centres[k][0]) + oracle::sq(x - centres[k][1]) <
            oracle::sq(y - centres[best][0]) + oracle::sq(x - centres[best][1]))
          best = k;
      in.truth.set(y, x, best);
      std::array<double, 3> c = colors[best];
      for (double& v : c) v = std::clamp(v + noise(rng), 0.0, 255.0);
      in.img.set(y, x, c);
    }
  for (int k = 0; k < in.classes; ++k)
    for (int dx = -2; dx <= 2; ++dx) {
      const int y = centres[k][0], x = centres[k][1] + dx;
      if (in.truth.at(y, x) == k) in.scribbles.set(y, x, k);
    }
  return in;
}

struct NoisyInstance {
  ImageBuffer img;
  LabelMask truth;
  UnaryField unary;
};

// Left half color A, right half color B; each pixel's unary favours its true
// label, or the other one with probability 0.1.
NoisyInstance noisy_two_region(std::uint64_t seed) {
  oracle::Rng rng(seed);
  const int n = 32;
  const auto colors = distinct_colors(rng, 2, 60.0);
  NoisyInstance in{ImageBuffer(n, n), LabelMask(n, n, 0), UnaryField(n, n, 2)};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int label = x < n / 2 ? 0 : 1;
      in.truth.set(y, x, label);
      in.img.set(y, x, colors[label]);
      const int noisy = oracle::uniform(rng, 0, 1) < 0.1 ? 1 - label : label;
      in.unary.pixel(static_cast<std::size_t>(y) * n + x)[noisy] = 2.0;
    }
  return in;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

Outcome filter_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0, worst_sym = 0.0, worst_lin = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    oracle::Rng rng(1000 + seed);
    const int h = oracle::uniform_int(rng, 2, 16), w = oracle::uniform_int(rng, 2, 16);
    const ImageBuffer img = oracle::random_image(rng, h, w);
    const FeatureField f = bilateral_features(img, 67.0, 3.0);
    ValueField u(f.points(), 4), v(f.points(), 4);
    for (double& x : u.data()) x = oracle::uniform(rng, 0, 1);
    for (double& x : v.data()) x = oracle::uniform(rng, 0, 1);

    const ValueField exact = brute_force_filter(v, f, true);
    const ValueField approx = lattice_filter(v, f, true);
    const double scale = max_abs(exact.data());
    for (std::size_t i = 0; i < exact.data().size(); ++i)
      worst = std::max(worst, std::abs(approx.data()[i] - exact.data()[i]) / scale);

    const FeatureField wide = bilateral_features(img, 4.0, 30.0);
    for (bool self : {true, false}) {
      double lhs = 0.0, rhs = 0.0;
      const ValueField fv = brute_force_filter(v, wide, self), fu = brute_force_filter(u, wide, self);
      for (std::size_t i = 0; i < fv.data().size(); ++i) {
        lhs += u.data()[i] * fv.data()[i];
        rhs += v.data()[i] * fu.data()[i];
      }
      worst_sym = std::max(worst_sym, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
      ValueField mix(f.points(), 4);
      for (std::size_t i = 0; i < mix.data().size(); ++i) mix.data()[i] = 2.5 * u.data()[i] - 0.75 * v.data()[i];
      const ValueField fm = brute_force_filter(mix, wide, self);
      for (std::size_t i = 0; i < mix.data().size(); ++i)
        worst_lin = std::max(worst_lin, std::abs(fm.data()[i] - (2.5 * fu.data()[i] - 0.75 * fv.data()[i])));
    }
  }
  const double t = seconds_since(t0);
  return {worst <= kFilterTol && worst_sym <= kBruteTol && worst_lin <= kBruteTol && t < kFilterSeconds,
          fmt("max lattice error %.4f of max output (tol %.2f); symmetry %.2e, linearity %.2e (tol %.0e); %.2fs",
              worst, kFilterTol, worst_sym, worst_lin, kBruteTol, t)};
}

Outcome exhaustive_crf() {
  const auto t0 = std::chrono::steady_clock::now();
  const CrfConfig cfg;
  const oracle::CrfParams k{cfg.w1, cfg.w2, cfg.sigma_alpha, cfg.sigma_beta, cfg.sigma_gamma};
  double worst_energy = 0.0;
  int regressions = 0;
  std::string failed;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    oracle::Rng rng(2000 + seed);
    const ImageBuffer img = oracle::random_image(rng, 2, 2);
    const UnaryField u = oracle::random_unary(rng, 2, 2, 2);
    for (unsigned bits = 0; bits < 16; ++bits) {
      const LabelMask m(2, 2, std::vector<int>{int(bits & 1), int(bits >> 1 & 1), int(bits >> 2 & 1), int(bits >> 3 & 1)});
      worst_energy = std::max(worst_energy, std::abs(total_energy(m, u, img, cfg) - oracle::crf_energy(m, u, img, k)));
    }
    const LabelMask raw = argmax_labeling(softmax_over_classes(u));
    const LabelMask refined = refine(u, img, cfg).labels;
    const double e_refined = total_energy(refined, u, img, cfg), e_raw = total_energy(raw, u, img, cfg);
    if (e_refined > e_raw + kEnergyTol) {
      ++regressions;
      failed += fmt(" seed %d (%.4f > %.4f)", int(2000 + seed), e_refined, e_raw);
    }
  }
  const double t = seconds_since(t0);
  return {worst_energy <= kEnergyTol && regressions == 0 && t < kExhaustiveSeconds,
          fmt("max energy deviation %.2e (tol %.0e); refine above argmax energy on %d/50", worst_energy, kEnergyTol,
              regressions) +
              failed + fmt("; %.2fs", t)};
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = 8, c = 3;
  LossConfig cfg;
  cfg.scale = 1.0;
  cfg.exact = true;
  double worst_pce = 0.0, worst_crf = 0.0, worst_combined = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    oracle::Rng rng(3000 + seed);
    const ImageBuffer img = oracle::random_image(rng, n, n);
    const SoftSeg s = oracle::random_soft(rng, n, n, c);
    const LabelMask scribbles = oracle::random_mask(rng, n, n, c, 0.5);
    const UnaryField logits = oracle::random_unary(rng, n, n, c);
    const std::vector<double> xs(s.data().begin(), s.data().end());
    const std::vector<double> xl(logits.data().begin(), logits.data().end());

    // pCE is differentiated with respect to the logits
    const auto pce = oracle::central_gradient(
        [&](const std::vector<double>& v) {
          return partial_cross_entropy(softmax_over_classes(UnaryField(n, n, c, v)), scribbles).loss;
        },
        xl, kStep);
    const LossWithGradient pce_analytic = partial_cross_entropy(softmax_over_classes(logits), scribbles);
    worst_pce = std::max(worst_pce, oracle::max_relative_error(pce, pce_analytic.grad.data(), kGradFloor));

    const auto crf = oracle::central_gradient(
        [&](const std::vector<double>& v) { return dense_crf_loss(SoftSeg(n, n, c, v), img, cfg, true).loss; }, xs,
        kStep);
    worst_crf =
        std::max(worst_crf, oracle::max_relative_error(crf, dense_crf_loss(s, img, cfg, true).grad.data(), kGradFloor));

    const CombinedObjective objective(img, scribbles, c, cfg);
    const auto combined = oracle::central_gradient(
        [&](const std::vector<double>& v) { return objective.evaluate(UnaryField(n, n, c, v)).report.combined; }, xl,
        kStep);
    worst_combined = std::max(
        worst_combined, oracle::max_relative_error(combined, objective.evaluate(logits).grad.data(), kGradFloor));
  }
  const double t = seconds_since(t0);
  return {worst_pce <= kGradTol && worst_crf <= kGradTol && worst_combined <= kGradTol && t < kGradSeconds,
          fmt("max relative error pCE %.2e, dense CRF %.2e, combined %.2e (tol %.0e); %.2fs", worst_pce, worst_crf,
              worst_combined, kGradTol, t)};
}

Outcome loss_identities() {
  oracle::Rng rng(4000);
  const ImageBuffer img = oracle::random_image(rng, 12, 10);
  double constant_loss = 0.0;
  for (int label = 0; label < 3; ++label)
    for (bool exact : {true, false}) {
      LossConfig cfg;
      cfg.exact = exact;
      constant_loss = std::max(constant_loss, dense_crf_loss(one_hot(LabelMask(12, 10, label), 3), img, cfg, exact).loss);
    }

  const SoftSeg s = oracle::random_soft(rng, 12, 10, 4);
  const LabelMask full = oracle::random_mask(rng, 12, 10, 4);
  const double ce_gap = std::abs(partial_cross_entropy(s, full).loss - oracle::cross_entropy(s, full));

  const LabelMask sparse = oracle::random_mask(rng, 12, 10, 21, 0.7);
  const double per_pixel =
      partial_cross_entropy(SoftSeg(12, 10, 21, 1.0 / 21.0), sparse).loss / static_cast<double>(sparse.labeled_count());
  const double ln21_gap = std::abs(per_pixel - std::log(21.0));

  return {constant_loss == 0.0 && ce_gap <= kIdentityTol && ln21_gap <= kIdentityTol,
          fmt("constant one-hot CRF loss %.17g; full-label pCE gap %.2e; uniform pCE per pixel - ln 21 = %.2e (tol "
              "%.0e)",
              constant_loss, ce_gap, ln21_gap, kIdentityTol)};
}

Outcome scribble_fit() {
  const int n = 64;
  ImageBuffer img(n, n);
  LabelMask truth(n, n, 0), scribbles(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int inside = oracle::sq(x - 32) + oracle::sq(y - 32) < 20 * 20;
      truth.set(y, x, inside);
      img.set(y, x, inside ? std::array<double, 3>{200, 60, 40} : std::array<double, 3>{30, 90, 180});
    }
  for (int i = 0; i < 10; ++i) {
    scribbles.set(5, 5 + i, 0);
    scribbles.set(32, 27 + i, 1);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const FitResult r = fit_scribbles(img, scribbles, 2, LossConfig{}, OptimConfig{});
  const double t = seconds_since(t0);
  const double m = score(r.mask, truth, 2);
  return {m >= kFitMiou && t < kFitSeconds && r.history.size() <= 500,
          fmt("mIoU %.4f (need >= %.2f) after %zu iterations; %.2fs", m, kFitMiou, r.history.size(), t)};
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Outcome paper_trend() {
  std::vector<double> pce_only, with_crf, raw, refined;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Instance in = multi_region(6000 + seed);
    for (double lambda : {0.0, 1.0}) {
      LossConfig cfg;
      cfg.lambda_crf = lambda;
      const FitResult r = fit_scribbles(in.img, in.scribbles, in.classes, cfg, OptimConfig{});
      (lambda == 0.0 ? pce_only : with_crf).push_back(score(r.mask, in.truth, in.classes));
      raw.push_back(score(r.mask, in.truth, in.classes));
      refined.push_back(score(refine(r.logits, in.img, CrfConfig{}).labels, in.truth, in.classes));
    }
  }
  std::vector<double> noisy_raw, noisy_refined;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const NoisyInstance in = noisy_two_region(7000 + seed);
    noisy_raw.push_back(score(argmax_labeling(softmax_over_classes(in.unary)), in.truth, 2));
    noisy_refined.push_back(score(refine(in.unary, in.img, CrfConfig{}).labels, in.truth, 2));
  }
  const double gain = mean(with_crf) - mean(pce_only);
  const double post = mean(refined) - mean(raw);
  const double noisy_post = mean(noisy_refined) - mean(noisy_raw);
  return {gain > 0.0 && post >= -kRefineSlack && noisy_post > 0.0,
          fmt("mean mIoU pCE %.4f vs pCE+CRF %.4f (gain %+.4f); refine on fitted logits %+.4f (floor -%.2f); refine "
              "on noisy unaries %+.4f",
              mean(pce_only), mean(with_crf), gain, post, kRefineSlack, noisy_post)};
}

Outcome post_processing() {
  int wins = 0;
  std::string scores;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const NoisyInstance in = noisy_two_region(7000 + seed);
    CrfConfig cfg;
    cfg.w1 = 3.0;
    cfg.w2 = 4.0;
    cfg.sigma_gamma = 1.0;
    cfg.sigma_alpha = 67.0;
    cfg.sigma_beta = 3.0;
    const double before = score(argmax_labeling(softmax_over_classes(in.unary)), in.truth, 2);
    const double after = score(refine(in.unary, in.img, cfg).labels, in.truth, 2);
    wins += after > before;
    scores += fmt(" %.3f->%.3f", before, after);
  }
  return {wins >= kRefineWins, fmt("refine raised mIoU on %d/10 (need %d):", wins, kRefineWins) + scores};
}

Outcome miou_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    oracle::Rng rng(8000 + seed);
    const int classes = oracle::uniform_int(rng, 2, 8);
    const int h = oracle::uniform_int(rng, 1, 20), w = oracle::uniform_int(rng, 1, 20);
    const LabelMask gt = oracle::random_mask(rng, h, w, classes, 0.1);
    const LabelMask pred = oracle::random_mask(rng, h, w, classes);
    if (gt.labeled_count() == 0) continue;
    worst = std::max(worst, std::abs(score(pred, gt, classes) - oracle::miou(pred, gt, classes)));
  }
  const double hand =
      score(LabelMask(2, 2, 0), LabelMask(2, 2, std::vector<int>{0, 0, 1, 1}), 2);
  return {worst <= kMiouTol && hand == 0.25,
          fmt("max deviation from set oracle %.2e (tol %.0e); hand example %.17g", worst, kMiouTol, hand)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "wsseg");
  std::FILE* sink = std::tmpfile();
  const int code = cli::run_cli(args, sink, sink);
  std::fclose(sink);
  return code;
}

Outcome determinism() {
  const fs::path dir = fs::path(WSSEG_TEST_TMP) / "determinism";
  fs::create_directories(dir);
  const Instance in = multi_region(9000);
  const NoisyInstance noisy = noisy_two_region(9001);
  save_image_png(in.img, dir / "fit.png");
  save_mask(in.scribbles, ClassPalette::voc(), dir / "scribbles.png");
  save_image_png(noisy.img, dir / "refine.png");
  save_unary(noisy.unary, dir / "refine.unr");

  const int many = std::max(4, num_threads());
  std::vector<std::vector<std::string>> outputs;
  bool ok = true;
  int variant = 0;
  for (int threads : {1, 1, many}) {
    const std::string tag = std::to_string(variant++);
    ok &= run({"--threads", std::to_string(threads), "fit", "--image", (dir / "fit.png").string(), "--scribbles",
               (dir / "scribbles.png").string(), "--classes", std::to_string(in.classes), "--out",
               (dir / ("fit" + tag + ".png")).string(), "--save-logits", (dir / ("fit" + tag + ".unr")).string(),
               "--loss-csv", (dir / ("fit" + tag + ".csv")).string()}) == 0;
    ok &= run({"--threads", std::to_string(threads), "refine", "--image", (dir / "refine.png").string(), "--unary",
               (dir / "refine.unr").string(), "--out", (dir / ("refine" + tag + ".png")).string()}) == 0;
    outputs.push_back({slurp(dir / ("fit" + tag + ".png")), slurp(dir / ("fit" + tag + ".unr")),
                       slurp(dir / ("fit" + tag + ".csv")), slurp(dir / ("refine" + tag + ".png"))});
  }

  OptimConfig opt;
  opt.max_iter = 100;
  opt.init_std = 0.1;
  opt.seed = 5;
  std::vector<FitResult> fits;
  std::vector<RefineResult> refines;
  for (int threads : {1, 1, many}) {
    set_num_threads(threads);
    fits.push_back(fit_scribbles(in.img, in.scribbles, in.classes, LossConfig{}, opt));
    refines.push_back(refine(noisy.unary, noisy.img, CrfConfig{}));
  }
  set_num_threads(0);

  const auto same_bytes = [](std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
             return std::memcmp(&x, &y, sizeof x) == 0;
           });
  };
  bool files = ok && !outputs[0][0].empty() && !outputs[0][1].empty() && !outputs[0][3].empty();
  bool memory = true;
  for (int i = 1; i < 3; ++i) {
    files &= outputs[i] == outputs[0];
    memory &= same_bytes(fits[i].logits.data(), fits[0].logits.data()) && fits[i].mask == fits[0].mask &&
              same_bytes(refines[i].q.data(), refines[0].q.data()) && refines[i].labels == refines[0].labels;
  }
  return {files && memory, fmt("CLI outputs identical: %s; in-memory results identical: %s (threads 1, 1, %d)",
                               files ? "yes" : "no", memory ? "yes" : "no", many)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"filter oracle agreement", filter_oracle},
      {"exhaustive CRF oracle", exhaustive_crf},
      {"gradient correctness", gradients},
      {"loss identities", loss_identities},
      {"scribble fit end to end", scribble_fit},
      {"pCE+CRF and post-processing trend", paper_trend},
      {"post-processing on noisy unaries", post_processing},
      {"mIoU oracle", miou_oracle},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %zu %s: %s | %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
