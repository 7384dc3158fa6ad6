#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cli.hpp"
#include "support/oracles.hpp"
#include "wsseg/crf.hpp"
#include "wsseg/io.hpp"

using namespace wsseg;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) {
  const fs::path dir = fs::path(WSSEG_TEST_TMP) / "cli";
  fs::create_directories(dir);
  return dir / name;
}

struct Run {
  int code;
  std::string out, err;
};

std::string drain(std::FILE* f) {
  std::rewind(f);
  std::string s;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, f)) > 0;) s.append(buf, n);
  std::fclose(f);
  return s;
}

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "wsseg");
  std::FILE* out = std::tmpfile();
  std::FILE* err = std::tmpfile();
  const int code = cli::run_cli(args, out, err);
  return {code, drain(out), drain(err)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Two-region image, scribbles, ground truth, a noisy unary and a manifest.
struct Fixture {
  fs::path image = tmp("img.png"), scribbles = tmp("scr.png"), gt = tmp("gt.png"), unary = tmp("u.unr"),
           manifest = tmp("list.tsv");
  ImageBuffer img{24, 20};
  LabelMask truth{24, 20, 0};
  UnaryField u{24, 20, 2};

  Fixture() {
    oracle::Rng rng(5);
    LabelMask scr(24, 20);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 20; ++x) {
        const int l = y < 12 ? 0 : 1;
        truth.set(y, x, l);
        img.set(y, x, l == 0 ? std::array<double, 3>{20, 140, 60} : std::array<double, 3>{230, 200, 10});
        u.pixel(static_cast<std::size_t>(y) * 20 + x)[l] = static_cast<float>(oracle::uniform(rng, -0.5, 1.5));
      }
    for (int x = 5; x < 15; ++x) {
      scr.set(4, x, 0);
      scr.set(19, x, 1);
    }
    save_image_png(img, image);
    save_mask(scr, ClassPalette::voc(), scribbles);
    save_mask(truth, ClassPalette::voc(), gt);
    save_unary(u, unary);
    std::ofstream(manifest) << "img.png\tscr.png\tgt.png\tu.unr\n";
  }
};

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  const Run missing = run({"fit", "--image", "a.png"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("--scribbles") != std::string::npos);
  CHECK(run({"refine", "--image", "a", "--unary", "b", "--out", "c", "--bogus", "1"}).code == 1);
  CHECK(run({"bench-filter", "--height", "0", "--width", "3"}).code == 1);
  CHECK(run({"refine", "--config"}).code == 1);
  const Run help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("refine") != std::string::npos);
}

TEST_CASE("data errors exit with 2") {
  const Fixture fx;
  CHECK(run({"refine", "--image", tmp("none.png").string(), "--unary", fx.unary.string(), "--out",
             tmp("o.png").string()})
            .code == 2);
  std::ofstream(tmp("bad.unr")) << "nope";
  const Run bad = run({"refine", "--image", fx.image.string(), "--unary", tmp("bad.unr").string(), "--out",
                       tmp("o.png").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("not a UNR1 file") != std::string::npos);
  CHECK(run({"fit", "--image", fx.image.string(), "--scribbles", fx.scribbles.string(), "--classes", "1", "--out",
             tmp("o.png").string()})
            .code == 2);
  CHECK(run({"refine", "--image", fx.image.string(), "--unary", fx.unary.string(), "--out", fx.unary.string(),
             "--config", tmp("no-such.cfg").string()})
            .code == 2);
}

TEST_CASE("eval on predictions equal to the ground truth") {
  const Fixture fx;
  fs::create_directories(tmp("pred"));
  fs::copy_file(fx.gt, tmp("pred") / "img.png", fs::copy_options::overwrite_existing);
  const Run r = run({"eval", "--manifest", fx.manifest.string(), "--pred-dir", tmp("pred").string(), "--classes", "2",
                     "--csv", tmp("eval.csv").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("mIoU\t1.000000\n") != std::string::npos);
  CHECK(r.out.rfind("class\tname\tiou\n", 0) == 0);
  CHECK(slurp(tmp("eval.csv")).find("miou,,1\n") != std::string::npos);

  const Run all = run({"eval", "--manifest", fx.manifest.string(), "--pred-dir", tmp("pred").string()});
  CHECK(all.code == 0);
  CHECK(all.out.find("2\tbicycle\t-\n") != std::string::npos);
}

TEST_CASE("refine without pairwise terms returns the unary argmax") {
  const Fixture fx;
  const Run r = run({"refine", "--image", fx.image.string(), "--unary", fx.unary.string(), "--out",
                     tmp("flat.png").string(), "--w1", "0", "--w2", "0"});
  REQUIRE(r.code == 0);
  CHECK(load_mask(tmp("flat.png"), 2) == argmax_labeling(softmax_over_classes(load_unary(fx.unary))));
  CHECK(r.out.find("energy_before\t") != std::string::npos);
  CHECK(r.out.find("energy_after\t") != std::string::npos);
}

TEST_CASE("refine reports energies that match the library") {
  const Fixture fx;
  const Run r = run({"refine", "--image", fx.image.string(), "--unary", fx.unary.string(), "--out",
                     tmp("ref.png").string(), "--energy-method", "exact"});
  REQUIRE(r.code == 0);
  const UnaryField u = load_unary(fx.unary);
  const LabelMask refined = load_mask(tmp("ref.png"), 2);
  char line[128];
  std::snprintf(line, sizeof line, "energy_after\t%.10g\n", total_energy(refined, u, fx.img, CrfConfig{}));
  CHECK(r.out.find(line) != std::string::npos);
}

TEST_CASE("energy subcommand") {
  const Fixture fx;
  const Run r = run({"energy", "--image", fx.image.string(), "--labeling", fx.gt.string(), "--unary",
                     fx.unary.string(), "--method", "exact"});
  REQUIRE(r.code == 0);
  const EnergyTerms t = energy_terms(fx.truth, load_unary(fx.unary), fx.img, CrfConfig{});
  char line[128];
  std::snprintf(line, sizeof line, "total\t%.10g\n", t.total);
  CHECK(r.out.find(line) != std::string::npos);
  CHECK(r.out.find("method\texact\n") != std::string::npos);
  CHECK(run({"energy", "--image", fx.image.string(), "--labeling", fx.scribbles.string(), "--unary",
             fx.unary.string()})
            .code == 2);
}

TEST_CASE("fit is byte-identical across runs and thread counts") {
  const Fixture fx;
  auto fit = [&](const std::string& tag, const std::string& threads) {
    return run({"--threads", threads, "fit", "--image", fx.image.string(), "--scribbles", fx.scribbles.string(),
                "--classes", "2", "--iters", "60", "--init-std", "0.1", "--seed", "3", "--out",
                tmp(tag + ".png").string(), "--loss-csv", tmp(tag + ".csv").string(), "--save-logits",
                tmp(tag + ".unr").string()});
  };
  REQUIRE(fit("a", "1").code == 0);
  REQUIRE(fit("b", "1").code == 0);
  REQUIRE(fit("c", "4").code == 0);
  for (const char* ext : {".png", ".csv", ".unr"}) {
    CHECK(slurp(tmp(std::string("a") + ext)) == slurp(tmp(std::string("b") + ext)));
    CHECK(slurp(tmp(std::string("a") + ext)) == slurp(tmp(std::string("c") + ext)));
  }
  const std::string csv = slurp(tmp("a.csv"));
  CHECK(csv.rfind("iteration,pce,crf,combined\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 61);
}

TEST_CASE("config files supply defaults and flags override them") {
  const Fixture fx;
  std::ofstream(tmp("fit.cfg")) << "# fit settings\niters = 25\nlambda=0.5\n  seed = 2\ninit-std = 0.2\n";
  const std::vector<std::string> base = {"fit", "--image", fx.image.string(), "--scribbles", fx.scribbles.string(),
                                         "--classes", "2"};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };
  REQUIRE(with({"--config", tmp("fit.cfg").string(), "--out", tmp("cfg.png").string(), "--save-logits",
                tmp("cfg.unr").string()})
              .code == 0);
  REQUIRE(with({"--iters", "25", "--lambda", "0.5", "--seed", "2", "--init-std", "0.2", "--out",
                tmp("flags.png").string(), "--save-logits", tmp("flags.unr").string()})
              .code == 0);
  CHECK(slurp(tmp("cfg.unr")) == slurp(tmp("flags.unr")));

  const Run over = with({"--config=" + tmp("fit.cfg").string(), "--iters", "7", "--out", tmp("over.png").string()});
  REQUIRE(over.code == 0);
  CHECK(over.out.find("iterations\t7\n") != std::string::npos);

  std::ofstream(tmp("bad.cfg")) << "iters 3\n";
  CHECK(with({"--config", tmp("bad.cfg").string(), "--out", tmp("x.png").string()}).code == 1);
  std::ofstream(tmp("unknown.cfg")) << "bogus = 3\n";
  CHECK(with({"--config", tmp("unknown.cfg").string(), "--out", tmp("x.png").string()}).code == 1);
}

TEST_CASE("bench-filter reports timings and optionally the oracle error") {
  const Run fast = run({"bench-filter", "--height", "6", "--width", "7"});
  REQUIRE(fast.code == 0);
  CHECK(fast.out.find("points\t42\n") != std::string::npos);
  CHECK(fast.out.find("lattice_seconds\t") != std::string::npos);
  CHECK(fast.out.find("max_rel_error") == std::string::npos);
  const Run checked = run({"bench-filter", "--height", "6", "--width", "7", "--oracle", "--seed", "4"});
  REQUIRE(checked.code == 0);
  const auto pos = checked.out.find("max_rel_error\t");
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(checked.out.substr(pos + 14)) <= 0.15);
}

TEST_CASE("overlay blends palette colors") {
  const Fixture fx;
  REQUIRE(run({"overlay", "--image", fx.image.string(), "--mask", fx.gt.string(), "--out", tmp("ov0.png").string(),
               "--alpha", "0"})
              .code == 0);
  const ImageBuffer same = load_image(tmp("ov0.png"));
  CHECK(std::equal(same.data().begin(), same.data().end(), fx.img.data().begin()));
  REQUIRE(run({"overlay", "--image", fx.image.string(), "--mask", fx.gt.string(), "--out", tmp("ov1.png").string(),
               "--alpha", "1"})
              .code == 0);
  const ImageBuffer painted = load_image(tmp("ov1.png"));
  CHECK(painted.at(20, 3, 0) == 128.0);
  CHECK(painted.at(20, 3, 1) == 0.0);
  REQUIRE(run({"overlay", "--image", fx.image.string(), "--mask", fx.scribbles.string(), "--out",
               tmp("ov2.png").string(), "--alpha", "1"})
              .code == 0);
  CHECK(load_image(tmp("ov2.png")).at(0, 0, 1) == 140.0);
  CHECK(run({"overlay", "--image", fx.image.string(), "--mask", fx.gt.string(), "--out", tmp("ov3.png").string(),
             "--alpha", "1.5"})
            .code == 1);
}
