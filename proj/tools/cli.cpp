#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "wsseg/core.hpp"
#include "wsseg/crf.hpp"
#include "wsseg/filtering.hpp"
#include "wsseg/io.hpp"
#include "wsseg/losses.hpp"
#include "wsseg/metrics.hpp"
#include "wsseg/optim.hpp"
#include "wsseg/parallel.hpp"
#include "wsseg/simd/kernels.hpp"

namespace wsseg::cli {

namespace fs = std::filesystem;

namespace {

// Raised for malformed invocations that CLI11 itself cannot see.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pixel count up to which "auto" evaluates energies with the exact filter.
constexpr std::size_t kExactEnergyLimit = 4096;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

// Pulls --config P out of args and appends "--key=value" for every key the
// command line does not already set, so explicit flags win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config requires a file argument");
      config = args[i + 1];
      args.erase(args.begin() + i, args.begin() + i + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
      args.erase(args.begin() + i);
      break;
    }
  }
  if (config.empty()) return args;

  std::ifstream in(config);
  if (!in) throw IoError(config + ": cannot open config file");
  std::vector<std::string> injected;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(config + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) != 0) key = "--" + key;
    if (key.size() <= 2) throw UsageError(config + ":" + std::to_string(line_no) + ": empty key");
    if (!has_flag(args, key)) injected.push_back(key + "=" + value);
  }
  args.insert(args.end(), injected.begin(), injected.end());
  return args;
}

FilterMethod parse_method(const std::string& name, std::size_t pixels) {
  if (name == "exact") return FilterMethod::exact;
  if (name == "lattice") return FilterMethod::lattice;
  return pixels <= kExactEnergyLimit ? FilterMethod::exact : FilterMethod::lattice;
}

const char* method_name(FilterMethod m) { return m == FilterMethod::exact ? "exact" : "lattice"; }

ClassPalette palette_for(int classes) {
  if (classes > 255) throw std::invalid_argument("at most 255 classes can be written to an indexed PNG");
  return classes == 21 ? ClassPalette::voc() : ClassPalette::voc_colormap(classes);
}

void check_same_size(const ImageBuffer& img, int h, int w, const std::string& what) {
  if (img.height() != h || img.width() != w)
    throw std::invalid_argument(what + " is " + std::to_string(h) + "x" + std::to_string(w) + " but the image is " +
                                std::to_string(img.height()) + "x" + std::to_string(img.width()));
}

void add_crf_flags(CLI::App* cmd, CrfConfig& cfg) {
  cmd->add_option("--iters", cfg.iterations, "Mean-field iterations")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--w1", cfg.w1, "Appearance kernel weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--w2", cfg.w2, "Smoothness kernel weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--sigma-alpha", cfg.sigma_alpha, "Appearance kernel spatial bandwidth")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--sigma-beta", cfg.sigma_beta, "Appearance kernel color bandwidth")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--sigma-gamma", cfg.sigma_gamma, "Smoothness kernel bandwidth")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

void print_energy(std::FILE* out, const char* prefix, const EnergyTerms& e) {
  std::fprintf(out, "%sunary\t%.10g\n", prefix, e.unary);
  std::fprintf(out, "%spairwise\t%.10g\n", prefix, e.pairwise);
  std::fprintf(out, "%stotal\t%.10g\n", prefix, e.total);
}

// ---------------------------------------------------------------------------

struct RefineArgs {
  std::string image, unary, out, energy_method = "auto", filter_method = "lattice";
  CrfConfig crf;
};

void run_refine(const RefineArgs& a, std::FILE* out) {
  const ImageBuffer img = load_image(a.image);
  const UnaryField unary = load_unary(a.unary);
  check_same_size(img, unary.height(), unary.width(), "unary field");
  const FilterMethod method = a.filter_method == "exact" ? FilterMethod::exact : FilterMethod::lattice;
  const FilterMethod energy = parse_method(a.energy_method, img.pixels());

  const LabelMask before = argmax_labeling(softmax_over_classes(unary));
  const RefineResult r = refine(unary, img, a.crf, method);
  save_mask(r.labels, palette_for(unary.classes()), a.out);

  std::fprintf(out, "energy_method\t%s\n", method_name(energy));
  std::fprintf(out, "energy_before\t%.10g\n", total_energy(before, unary, img, a.crf, energy));
  std::fprintf(out, "energy_after\t%.10g\n", total_energy(r.labels, unary, img, a.crf, energy));
}

struct FitArgs {
  std::string image, scribbles, out, loss_csv, save_logits;
  int classes = 0;
  LossConfig loss;
  OptimConfig opt;
};

void run_fit(const FitArgs& a, std::FILE* out) {
  const ImageBuffer img = load_image(a.image);
  const LabelMask scribbles = load_mask(a.scribbles, a.classes);
  check_same_size(img, scribbles.height(), scribbles.width(), "scribble mask");
  const ClassPalette palette = palette_for(a.classes);
  const FitResult r = fit_scribbles(img, scribbles, a.classes, a.loss, a.opt);

  save_mask(r.mask, palette, a.out);
  if (!a.save_logits.empty()) save_unary(r.logits, a.save_logits);
  if (!a.loss_csv.empty()) {
    std::ofstream csv(a.loss_csv, std::ios::trunc);
    if (!csv) throw IoError(a.loss_csv + ": cannot open file for writing");
    csv << "iteration,pce,crf,combined\n";
    char buf[160];
    for (std::size_t i = 0; i < r.history.size(); ++i) {
      const LossReport& h = r.history[i];
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i, h.pce, h.crf, h.combined);
      csv << buf;
    }
    if (!csv) throw IoError(a.loss_csv + ": write failed");
  }
  const LossReport& last = r.history.back();
  std::fprintf(out, "iterations\t%zu\n", r.history.size());
  std::fprintf(out, "labeled_pixels\t%zu\n", last.labeled_pixel_count);
  std::fprintf(out, "final_pce\t%.10g\n", last.pce);
  std::fprintf(out, "final_crf\t%.10g\n", last.crf);
  std::fprintf(out, "final_combined\t%.10g\n", last.combined);
}

struct EvalArgs {
  std::string manifest, pred_dir, csv;
  int classes = 21;
  int ignore = kDefaultIgnore;
  bool absent_as_zero = false;
};

void run_eval(const EvalArgs& a, std::FILE* out) {
  const auto entries = load_manifest(a.manifest);
  if (entries.empty()) throw IoError(a.manifest + ": manifest lists no samples");
  for (const auto& e : entries)
    if (!e.ground_truth) throw IoError(a.manifest + ": " + e.image.string() + " has no ground-truth mask");

  std::vector<ConfusionMatrix> parts(entries.size(), ConfusionMatrix(a.classes));
  parallel_for(entries.size(), [&](std::size_t i) {
    const fs::path pred_path = fs::path(a.pred_dir) / (entries[i].image.stem().string() + ".png");
    const LabelMask gt = load_mask(*entries[i].ground_truth, a.classes, a.ignore);
    const LabelMask pred = load_mask(pred_path, a.classes, a.ignore);
    if (pred.height() != gt.height() || pred.width() != gt.width())
      throw IoError(pred_path.string() + ": prediction size differs from its ground truth");
    parts[i].accumulate(pred, gt);
  });
  ConfusionMatrix cm(a.classes);
  for (const auto& p : parts) cm += p;
  const MiouResult m = miou(cm, a.absent_as_zero);
  const ClassPalette palette = palette_for(a.classes);

  std::fprintf(out, "class\tname\tiou\n");
  for (int c = 0; c < a.classes; ++c) {
    if (m.per_class[c])
      std::fprintf(out, "%d\t%s\t%.6f\n", c, palette.name(c).c_str(), *m.per_class[c]);
    else
      std::fprintf(out, "%d\t%s\t-\n", c, palette.name(c).c_str());
  }
  std::fprintf(out, "mIoU\t%.6f\n", m.miou);

  if (!a.csv.empty()) {
    std::ofstream csv(a.csv, std::ios::trunc);
    if (!csv) throw IoError(a.csv + ": cannot open file for writing");
    char buf[128];
    csv << "class,name,iou\n";
    for (int c = 0; c < a.classes; ++c) {
      if (m.per_class[c])
        std::snprintf(buf, sizeof buf, "%d,%s,%.17g\n", c, palette.name(c).c_str(), *m.per_class[c]);
      else
        std::snprintf(buf, sizeof buf, "%d,%s,\n", c, palette.name(c).c_str());
      csv << buf;
    }
    std::snprintf(buf, sizeof buf, "miou,,%.17g\n", m.miou);
    csv << buf;
    if (!csv) throw IoError(a.csv + ": write failed");
  }
}

struct EnergyArgs {
  std::string image, labeling, unary, method = "auto";
  CrfConfig crf;
};

void run_energy(const EnergyArgs& a, std::FILE* out) {
  const ImageBuffer img = load_image(a.image);
  const UnaryField unary = load_unary(a.unary);
  check_same_size(img, unary.height(), unary.width(), "unary field");
  const LabelMask labels = load_mask(a.labeling, unary.classes());
  check_same_size(img, labels.height(), labels.width(), "labeling");
  const FilterMethod method = parse_method(a.method, img.pixels());
  std::fprintf(out, "method\t%s\n", method_name(method));
  print_energy(out, "", energy_terms(labels, unary, img, a.crf, method));
}

struct BenchArgs {
  int height = 0, width = 0, channels = 21;
  bool oracle = false, spatial = false;
  std::uint64_t seed = 0;
  double sigma_xy = 67.0, sigma_rgb = 3.0;
};

void run_bench(const BenchArgs& a, std::FILE* out) {
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<double> color(0.0, 255.0), unit(0.0, 1.0);
  ImageBuffer img(a.height, a.width);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) img.set(y, x, {color(rng), color(rng), color(rng)});
  ValueField values(img.pixels(), a.channels);
  for (double& v : values.data()) v = unit(rng);
  const FeatureField f =
      a.spatial ? spatial_features(img, a.sigma_xy) : bilateral_features(img, a.sigma_xy, a.sigma_rgb);

  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  const ValueField approx = lattice_filter(values, f, true);
  const double lattice_s = std::chrono::duration<double>(clock::now() - t0).count();

  std::fprintf(out, "points\t%zu\n", f.points());
  std::fprintf(out, "dims\t%d\n", f.dims());
  std::fprintf(out, "channels\t%d\n", a.channels);
  std::fprintf(out, "isa\t%s\n", std::string(simd::isa_name(simd::active_isa())).c_str());
  std::fprintf(out, "threads\t%d\n", num_threads());
  std::fprintf(out, "lattice_seconds\t%.6f\n", lattice_s);
  if (!a.oracle) return;

  t0 = clock::now();
  const ValueField exact = brute_force_filter(values, f, true);
  const double exact_s = std::chrono::duration<double>(clock::now() - t0).count();
  double max_err = 0.0, max_mag = 0.0;
  for (std::size_t i = 0; i < exact.data().size(); ++i) {
    max_err = std::max(max_err, std::abs(approx.data()[i] - exact.data()[i]));
    max_mag = std::max(max_mag, std::abs(exact.data()[i]));
  }
  std::fprintf(out, "exact_seconds\t%.6f\n", exact_s);
  std::fprintf(out, "max_abs_error\t%.6g\n", max_err);
  std::fprintf(out, "max_rel_error\t%.6g\n", max_mag > 0.0 ? max_err / max_mag : 0.0);
}

struct OverlayArgs {
  std::string image, mask, out;
  double alpha = 0.5;
  int classes = 21;
};

void run_overlay(const OverlayArgs& a) {
  const ImageBuffer img = load_image(a.image);
  const LabelMask mask = load_mask(a.mask, a.classes);
  check_same_size(img, mask.height(), mask.width(), "mask");
  const ClassPalette palette = palette_for(a.classes);
  ImageBuffer blended(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const int l = mask.at(y, x);
      if (l == mask.ignore_value()) {
        blended.set(y, x, {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
        continue;
      }
      const Rgb8 c = palette.color(l);
      const double mix[3] = {double(c.r), double(c.g), double(c.b)};
      std::array<double, 3> px{};
      for (int k = 0; k < 3; ++k) px[k] = (1.0 - a.alpha) * img.at(y, x, k) + a.alpha * mix[k];
      blended.set(y, x, px);
    }
  save_image_png(blended, a.out);
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::FILE* out, std::FILE* err) {
  CLI::App app{"Weakly supervised segmentation toolkit: dense CRF refinement, scribble fitting, evaluation."};
  app.name(raw_args.empty() ? "wsseg" : fs::path(raw_args[0]).filename().string());
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: WSSEG_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  app.add_option("--config", "key = value file supplying flag defaults; command-line flags win");

  RefineArgs refine_args;
  auto* refine_cmd = app.add_subcommand("refine", "Mean-field CRF refinement of a unary field");
  refine_cmd->add_option("--image", refine_args.image, "Input image (PNG or PPM)")->required();
  refine_cmd->add_option("--unary", refine_args.unary, "UNR1 logit field")->required();
  refine_cmd->add_option("--out", refine_args.out, "Refined mask (indexed PNG)")->required();
  add_crf_flags(refine_cmd, refine_args.crf);
  refine_cmd->add_option("--filter", refine_args.filter_method, "Mean-field filter")
      ->capture_default_str()
      ->check(CLI::IsMember({"exact", "lattice"}));
  refine_cmd->add_option("--energy-method", refine_args.energy_method, "Filter used for the reported energies")
      ->capture_default_str()
      ->check(CLI::IsMember({"auto", "exact", "lattice"}));

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a segmentation to scribbles under pCE + dense CRF loss");
  fit_cmd->add_option("--image", fit_args.image, "Input image (PNG or PPM)")->required();
  fit_cmd->add_option("--scribbles", fit_args.scribbles, "Scribble mask (indexed PNG, 255 = unlabeled)")->required();
  fit_cmd->add_option("--classes", fit_args.classes, "Number of classes")->required()->check(CLI::Range(1, 255));
  fit_cmd->add_option("--out", fit_args.out, "Output mask (indexed PNG)")->required();
  fit_cmd->add_option("--lambda", fit_args.loss.lambda_crf, "Weight of the CRF loss")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--w", fit_args.loss.w, "CRF loss kernel weight")->capture_default_str();
  fit_cmd->add_option("--sigma-rgb", fit_args.loss.sigma_rgb, "CRF loss color bandwidth")->capture_default_str();
  fit_cmd->add_option("--sigma-xy", fit_args.loss.sigma_xy, "CRF loss spatial bandwidth")->capture_default_str();
  fit_cmd->add_option("--scale", fit_args.loss.scale, "Resampling factor for the CRF loss")->capture_default_str();
  fit_cmd->add_flag("--exact", fit_args.loss.exact, "Brute-force filtering in the CRF loss");
  fit_cmd->add_flag("--mean-reduction", fit_args.loss.mean_reduction, "Average pCE over labeled pixels");
  fit_cmd->add_option("--iters", fit_args.opt.max_iter, "Iterations")->capture_default_str()->check(CLI::PositiveNumber);
  fit_cmd->add_option("--lr", fit_args.opt.lr0, "Initial learning rate")->capture_default_str();
  fit_cmd->add_option("--momentum", fit_args.opt.momentum, "SGD momentum")->capture_default_str();
  fit_cmd->add_option("--power", fit_args.opt.power, "Poly schedule power")->capture_default_str();
  fit_cmd->add_option("--weight-decay", fit_args.opt.weight_decay, "Weight decay")->capture_default_str();
  fit_cmd->add_option("--seed", fit_args.opt.seed, "Seed for the logit initialization")->capture_default_str();
  fit_cmd->add_option("--init-std", fit_args.opt.init_std, "Std of the Gaussian logit initialization")
      ->capture_default_str();
  fit_cmd->add_option("--loss-csv", fit_args.loss_csv, "Write iteration,pce,crf,combined per iteration");
  fit_cmd->add_option("--save-logits", fit_args.save_logits, "Write the final logits as UNR1");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "mIoU of predicted masks against a manifest's ground truth");
  eval_cmd->add_option("--manifest", eval_args.manifest, "Tab-separated manifest")->required();
  eval_cmd->add_option("--pred-dir", eval_args.pred_dir, "Directory holding <image stem>.png predictions")
      ->required();
  eval_cmd->add_option("--classes", eval_args.classes, "Number of classes")
      ->capture_default_str()
      ->check(CLI::Range(1, 255));
  eval_cmd->add_option("--ignore", eval_args.ignore, "Ignore label")->capture_default_str();
  eval_cmd->add_flag("--absent-as-zero", eval_args.absent_as_zero, "Score absent classes as 0 instead of skipping");
  eval_cmd->add_option("--csv", eval_args.csv, "Also write the table as CSV");

  EnergyArgs energy_args;
  auto* energy_cmd = app.add_subcommand("energy", "Dense CRF energy of a labeling");
  energy_cmd->add_option("--image", energy_args.image, "Input image (PNG or PPM)")->required();
  energy_cmd->add_option("--labeling", energy_args.labeling, "Complete labeling (indexed PNG)")->required();
  energy_cmd->add_option("--unary", energy_args.unary, "UNR1 logit field")->required();
  add_crf_flags(energy_cmd, energy_args.crf);
  energy_cmd->add_option("--method", energy_args.method, "Pairwise filter")
      ->capture_default_str()
      ->check(CLI::IsMember({"auto", "exact", "lattice"}));

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench-filter", "Time the lattice filter on a random image");
  bench_cmd->add_option("--height", bench_args.height, "Image height")->required()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--width", bench_args.width, "Image width")->required()->check(CLI::PositiveNumber);
  bench_cmd->add_flag("--oracle", bench_args.oracle, "Also run the brute-force filter and report the error");
  bench_cmd->add_option("--seed", bench_args.seed, "Random seed")->capture_default_str();
  bench_cmd->add_option("--channels", bench_args.channels, "Value channels")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--sigma-xy", bench_args.sigma_xy, "Spatial bandwidth")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--sigma-rgb", bench_args.sigma_rgb, "Color bandwidth")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bench_cmd->add_flag("--spatial", bench_args.spatial, "Spatial-only features instead of bilateral");

  OverlayArgs overlay_args;
  auto* overlay_cmd = app.add_subcommand("overlay", "Alpha-blend a mask's palette colors over an image");
  overlay_cmd->add_option("--image", overlay_args.image, "Input image (PNG or PPM)")->required();
  overlay_cmd->add_option("--mask", overlay_args.mask, "Mask (indexed PNG)")->required();
  overlay_cmd->add_option("--out", overlay_args.out, "Output RGB PNG")->required();
  overlay_cmd->add_option("--alpha", overlay_args.alpha, "Mask opacity")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  overlay_cmd->add_option("--classes", overlay_args.classes, "Number of classes")
      ->capture_default_str()
      ->check(CLI::Range(1, 255));

  std::ostringstream cli_out, cli_err;
  auto flush = [&] {
    std::fputs(cli_out.str().c_str(), out);
    std::fputs(cli_err.str().c_str(), err);
  };

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);  // CLI11 pops from the back
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, cli_out, cli_err);
    flush();
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    std::fprintf(err, "%s\nRun with --help for more information.\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(err, "error: %s\n", e.what());
    return kExitData;
  }

  try {
    if (threads > 0) set_num_threads(threads);
    if (refine_cmd->parsed()) run_refine(refine_args, out);
    if (fit_cmd->parsed()) run_fit(fit_args, out);
    if (eval_cmd->parsed()) run_eval(eval_args, out);
    if (energy_cmd->parsed()) run_energy(energy_args, out);
    if (bench_cmd->parsed()) run_bench(bench_args, out);
    if (overlay_cmd->parsed()) run_overlay(overlay_args);
  } catch (const std::exception& e) {
    std::fprintf(err, "error: %s\n", e.what());
    return kExitData;
  }
  std::fflush(out);
  return kExitOk;
}

}  // namespace wsseg::cli
