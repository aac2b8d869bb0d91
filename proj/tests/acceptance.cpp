// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Thresholds are fixed here; the command line only selects which criteria run.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ecm/checkpoint.hpp"
#include "ecm/cli.hpp"
#include "ecm/data.hpp"
#include "ecm/estimator.hpp"
#include "ecm/gradcheck_suite.hpp"
#include "ecm/io/flow.hpp"
#include "ecm/metrics.hpp"
#include "ecm/ops.hpp"
#include "ecm/synthesis.hpp"
#include "ecm/synthetic.hpp"
#include "ecm/train.hpp"
#include "ecm/warp.hpp"
#include "fixtures.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace ecm;
namespace fs = std::filesystem;

namespace {

constexpr DType f64 = DType::kFloat64;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Tensor constant_flow(std::int64_t h, std::int64_t w, double dx, double dy) {
  Tensor f({1, 2, h, w}, f64);
  auto d = f.data<double>();
  for (std::int64_t i = 0; i < h * w; ++i) {
    d[static_cast<std::size_t>(i)] = dx;
    d[static_cast<std::size_t>(h * w + i)] = dy;
  }
  return f;
}

// 1. ---------------------------------------------------------------------
Outcome gradcheck_suite() {
  constexpr double kTolerance = 1e-4, kBudget = 300.0;
  constexpr int kSeeds = 20;
  SuiteOptions opt;
  opt.seeds = kSeeds;
  opt.tolerance = kTolerance;
  Stopwatch sw;
  const auto reports = run_gradcheck("all", opt);
  const double secs = sw.seconds();
  bool ok = secs < kBudget;
  double worst = 0.0;
  int fewest = std::numeric_limits<int>::max();
  std::string failed;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    fewest = std::min(fewest, r.seeds_clean);
    if (!r.passed) {
      ok = false;
      failed += " " + r.name;
    }
  }
  std::string d = fmt("%zu ops, >= %d seeds each, worst rel err %.2e (< %.0e), %.1f s (< %.0f s)", reports.size(),
                      fewest, worst, kTolerance, secs, kBudget);
  if (!failed.empty()) d += "; failing:" + failed;
  return {ok, d};
}

// 2. ---------------------------------------------------------------------
Outcome oracle_equivalence() {
  constexpr double kTolerance = 1e-12;
  constexpr int kSeeds = 100;
  double corr = 0.0, splat = 0.0;
  std::mt19937_64 rng(2024);
  auto pick = [&](std::int64_t lo, std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng); };
  for (int seed = 0; seed < kSeeds; ++seed) {
    const std::int64_t n = pick(1, 2), c = pick(1, 4), h = pick(1, 8), w = pick(1, 8);
    const int r = static_cast<int>(pick(1, 2));
    const std::uint64_t s = 1000 * static_cast<std::uint64_t>(seed);
    Tape tape;
    const Tensor a = testutil::random_tensor({n, c, h, w}, s + 1), b = testutil::random_tensor({n, c, h, w}, s + 2);
    corr = std::max(corr, testutil::max_abs_diff(local_correlation(tape.constant(a), tape.constant(b), r).value(),
                                                 oracle::local_correlation(a, b, r)));
    const Tensor flow = testutil::random_tensor({n, 2, h, w}, s + 3, -3.0, 3.0);
    const Tensor weight = testutil::random_tensor({n, 1, h, w}, s + 4, -2.0, 2.0);
    const auto got = softmax_splat(tape.constant(a), tape.constant(flow), tape.constant(weight), 1e-8);
    const auto want = oracle::softmax_splat(a, flow, weight, 1e-8);
    splat = std::max({splat, testutil::max_abs_diff(got.output.value(), want.out),
                      testutil::max_abs_diff(got.coverage, want.coverage)});
  }
  return {corr <= kTolerance && splat <= kTolerance,
          fmt("%d random instances up to 8x8, r <= 2: correlation %.1e, splat %.1e (<= %.0e)", kSeeds, corr, splat,
              kTolerance)};
}

// 3. ---------------------------------------------------------------------
Outcome warp_identities() {
  constexpr double kTolerance = 1e-6;
  bool exact = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::int64_t h = 3 + static_cast<std::int64_t>(seed % 7), w = 4 + static_cast<std::int64_t>(seed % 5);
    const Tensor src = testutil::random_tensor({2, 3, h, w}, seed);
    Tape tape;
    const Var zero_flow = tape.constant(Tensor({2, 2, h, w}, f64));
    exact = exact && backward_warp(tape.constant(src), zero_flow).value().identical(src);
    const auto s = softmax_splat(tape.constant(src), zero_flow, tape.constant(Tensor({2, 1, h, w}, f64)), 1e-8);
    exact = exact && s.output.value().identical(src);
  }
  double worst = 0.0;
  const std::int64_t h = 24, w = 28, margin = 4;
  for (auto [cx, cy] : {std::pair{1.0, 0.0}, std::pair{-2.5, 0.75}, std::pair{0.3, -1.6}, std::pair{3.0, 2.0}}) {
    Tape tape;
    const auto rev = splat_flow(tape.constant(constant_flow(h, w, cx, cy)), 1.0,
                                tape.constant(Tensor({1, 1, h, w}, f64)), 1e-8, 1e-4);
    const Tensor& f = rev.flow.value();
    for (std::int64_t y = margin; y < h - margin; ++y)
      for (std::int64_t x = margin; x < w - margin; ++x)
        worst = std::max({worst, std::abs(oracle::get(f, 0, 0, y, x) + cx), std::abs(oracle::get(f, 0, 1, y, x) + cy)});
  }
  return {exact && worst <= kTolerance,
          fmt("zero-flow warp and splat %s; constant-flow reversal max |F + c| = %.1e (<= %.0e)",
              exact ? "bit-identical" : "NOT identical", worst, kTolerance)};
}

// 4. ---------------------------------------------------------------------
Outcome search_range_law() {
  RunConfig c;
  c.levels = 6;
  c.radius = 4;
  c.initial_downsample = 4;
  c.level_downsample = 2;
  const auto r = search_range(c);
  const std::vector<std::int64_t> want{16, 36, 76, 156, 316, 636};
  std::string got;
  for (auto v : r) got += (got.empty() ? "" : " ") + std::to_string(v);
  const bool ok = r == want && r[4] < 400 && 400 <= r[5];
  return {ok, "R = " + got + (ok ? ", R5 < 400 <= R6" : ", expected 16 36 76 156 316 636")};
}

// 5. ---------------------------------------------------------------------
Outcome translation_recovery() {
  constexpr double kMaxEpe = 0.5, kCaseBudget = 30.0;
  constexpr std::int64_t kSize = 128;
  std::string d;
  bool ok = true;
  double slowest = 0.0;
  std::mt19937_64 rng(5);
  for (int levels = 1; levels <= 3; ++levels) {
    const RunConfig c = testutil::patch_encoder_config(levels);
    ParameterSet ps;
    FlowEstimator est(ps, c);
    testutil::load_patch_encoder(ps, c);
    const std::int64_t reach = search_range(c).back();
    double worst = 0.0;
    int cases = 0;
    for (std::int64_t dx = -reach; dx <= reach; ++dx) {
      const double phase = std::uniform_real_distribution<double>(0.0, 6.283185307179586)(rng);
      const Tensor a = testutil::hue_ramp(kSize, phase, c.dtype);
      Stopwatch sw;
      Tape tape;
      const auto bf = est.estimate(tape.constant(a), tape.constant(circular_shift(a, dx, 0)));
      const double secs = sw.seconds();
      const double e = std::max(testutil::interior_epe(bf.flow01.value(), static_cast<double>(dx), 0, reach),
                                testutil::interior_epe(bf.flow10.value(), static_cast<double>(-dx), 0, reach));
      worst = std::max(worst, e);
      slowest = std::max(slowest, secs);
      ok = ok && e < kMaxEpe && secs < kCaseBudget;
      ++cases;
    }
    d += fmt("L=%d (R=%lld, %d shifts) worst EPE %.3f; ", levels, static_cast<long long>(reach), cases, worst);
  }
  d += fmt("limit %.1f px, slowest case %.2f s (< %.0f s)", kMaxEpe, slowest, kCaseBudget);
  return {ok, d};
}

// 6. ---------------------------------------------------------------------
RunConfig toy_config() {
  RunConfig c;
  c.levels = 2;
  c.initial_downsample = 1;
  c.temperature = 10.0;
  c.encoder_width = c.upscale_width = c.context_width = c.unet_width = c.refine_width = 16;
  c.image_feature_width = 8;
  c.patch = 64;
  c.max_disp = 8.0;
  c.motion = "translate";
  c.steps = 500;
  c.batch_size = 4;
  c.lr = 1e-3;
  c.seed = 0;
  return c;
}

Outcome toy_training() {
  constexpr double kMaxRatio = 0.5, kMinGain = 2.0, kBudget = 1800.0;
  constexpr std::size_t kWindow = 25;
  constexpr int kHeldOut = 50;
  const RunConfig c = toy_config();
  InterpolationModel model(c);
  Stopwatch sw;
  const double cpu0 = cpu_seconds();
  const auto curve = train(model, TrainOptions{});
  const double train_secs = sw.seconds();
  std::vector<double> total;
  for (const auto& r : curve) total.push_back(r.l_total);
  const auto smooth = moving_average(total, kWindow);
  const double first = smooth[kWindow - 1], last = smooth.back();
  const double ratio = last / first;

  // Held-out stream: a different base seed from every training batch.
  double model_psnr = 0.0, base_psnr = 0.0;
  for (int i = 0; i < kHeldOut; ++i) {
    const auto s = gen_synthetic(sample_seed(c.seed + 1000003, -1, i), MotionKind::kTranslate, c.patch, c.patch,
                                 c.max_disp, c, 0.5);
    Tape tape;
    const auto out = model.interpolate(tape.constant(s.frame0), tape.constant(s.frame1), 0.5);
    const Tensor average = scale(add(tape.constant(s.frame0), tape.constant(s.frame1)), 0.5).value();
    model_psnr += psnr(out.refine.value(), s.frame_t);
    base_psnr += psnr(average, s.frame_t);
  }
  model_psnr /= kHeldOut;
  base_psnr /= kHeldOut;
  const double gain = model_psnr - base_psnr;
  const double cpu = cpu_seconds() - cpu0, wall = sw.seconds();
  const bool ok = ratio <= kMaxRatio && gain >= kMinGain && cpu < kBudget;
  return {ok, fmt("smoothed L_total %.0f -> %.0f (ratio %.3f <= %.2f); held-out PSNR %.2f vs frame average %.2f "
                  "(gain %+.2f dB >= %.0f); train %.0f s, total %.0f s wall / %.0f s CPU (< %.0f s)",
                  first, last, ratio, kMaxRatio, model_psnr, base_psnr, gain, kMinGain, train_secs, wall, cpu,
                  kBudget)};
}

// 7. ---------------------------------------------------------------------

// Photograph-like test card: 1/f colour noise with a few hard-edged textured
// objects in front, stored as 8-bit.
Tensor natural_image(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const std::int64_t h = std::uniform_int_distribution<std::int64_t>(40, 100)(rng);
  const std::int64_t w = std::uniform_int_distribution<std::int64_t>(40, 100)(rng);
  auto texture = [&](std::uint64_t s) {
    TextureOptions o;
    o.kind = TextureOptions::Kind::kNoise;
    o.period = static_cast<double>(w);
    o.period_y = static_cast<double>(h);
    o.max_frequency = 16;
    o.waves = 120;
    o.falloff = 1.0;
    o.spread = uni(1.5, 3.0);
    return Texture(o, s);
  };
  Tensor img = texture(rng()).render(h, w, 0, 0, f64);
  auto px = img.data<double>();
  const int objects = static_cast<int>(std::uniform_int_distribution<int>(1, 4)(rng));
  for (int k = 0; k < objects; ++k) {
    const Tensor fill = texture(rng()).render(h, w, 0, 0, f64);
    const double cx = uni(0, static_cast<double>(w)), cy = uni(0, static_cast<double>(h));
    const double rx = uni(5, static_cast<double>(w) / 3), ry = uni(5, static_cast<double>(h) / 3);
    const double tint = uni(-0.2, 0.2);
    const bool ellipse = rng() % 2 == 0;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double u = (static_cast<double>(x) - cx) / rx, v = (static_cast<double>(y) - cy) / ry;
        if (ellipse ? u * u + v * v > 1.0 : std::max(std::abs(u), std::abs(v)) > 1.0) continue;
        for (std::int64_t c = 0; c < 3; ++c) {
          const auto i = static_cast<std::size_t>((c * h + y) * w + x);
          px[i] = fill.data<double>()[i] + tint;
        }
      }
  }
  for (auto& v : px) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return img.cast(DType::kFloat32);
}

Outcome static_fixed_point() {
  constexpr int kImages = 20;
  constexpr double kTolerance = 1.0 / 255 + 1e-3;
  double worst = 0.0;
  for (int i = 0; i < kImages; ++i) {
    RunConfig c;  // default architecture, fresh weights per image
    c.seed = static_cast<std::uint64_t>(100 + i);
    const InterpolationModel model(c);
    const Tensor img = natural_image(static_cast<std::uint64_t>(7000 + i));
    for (double t : {0.25, 0.5, 0.75}) {
      Tape tape;
      const auto out = model.interpolate(tape.constant(img), tape.constant(img), t);
      worst = std::max(worst, testutil::max_abs_diff(out.refine.value(), img));
    }
  }
  return {worst <= kTolerance,
          fmt("%d images x t in {0.25, 0.5, 0.75}: max |out - I| = %.2e (<= %.2e)", kImages, worst, kTolerance)};
}

// 8. ---------------------------------------------------------------------
int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ecmnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

Outcome determinism(const fs::path& work) {
  const std::vector<std::string> train{"train",         "--steps",          "4",  "--batch-size",   "2",
                                       "--patch",       "32",               "--L", "2",             "--D-initial",
                                       "2",             "--encoder-width",  "8",  "--upscale-width", "8",
                                       "--context-width", "8",              "--unet-width", "8",    "--refine-width",
                                       "8",             "--image-feature-width", "4", "--max-disp", "4",
                                       "--seed",        "11"};
  bool ok = true;
  for (const char* sub : {"a", "b"}) {
    auto args = train;
    args.insert(args.end(), {"--out-dir", (work / sub).string()});
    ok = ok && cli(args) == 0;
  }
  const bool ckpt_same = ok && slurp(work / "a" / "checkpoint.ecm") == slurp(work / "b" / "checkpoint.ecm");
  const bool curve_same = ok && slurp(work / "a" / "loss.csv") == slurp(work / "b" / "loss.csv");

  // .flo: random values plus awkward ones, then a byte-level rewrite.
  FlowField f(17, 23);
  std::mt19937_64 rng(3);
  for (auto& v : f.data) v = static_cast<float>(std::uniform_real_distribution<double>(-300.0, 300.0)(rng));
  f.data[0] = -0.0f;
  f.data[1] = std::numeric_limits<float>::denorm_min();
  f.data[2] = std::numeric_limits<float>::max();
  write_flo(work / "f.flo", f);
  const FlowField g = read_flo(work / "f.flo");
  write_flo(work / "g.flo", g);
  const bool flo_same = g.width == f.width && g.height == f.height &&
                        std::memcmp(f.data.data(), g.data.data(), f.data.size() * sizeof(float)) == 0 &&
                        slurp(work / "f.flo") == slurp(work / "g.flo");

  // Checkpoint: a model saved, loaded into a differently seeded twin, saved again.
  bool ckpt_rt = true;
  for (DType dt : {DType::kFloat32, DType::kFloat64}) {
    RunConfig c;
    c.dtype = dt;
    c.seed = 1;
    const InterpolationModel src(c);
    c.seed = 2;
    InterpolationModel dst(c);
    const fs::path p1 = work / "m1.ecm", p2 = work / "m2.ecm";
    save_parameters(p1, src.parameters());
    load_parameters(p1, dst.parameters());
    save_parameters(p2, dst.parameters());
    auto s = src.parameters().begin();
    for (auto q = dst.parameters().begin(); q != dst.parameters().end(); ++q, ++s)
      ckpt_rt = ckpt_rt && q->value.identical(s->value);
    ckpt_rt = ckpt_rt && slurp(p1) == slurp(p2);
  }
  const bool pass = ckpt_same && curve_same && flo_same && ckpt_rt;
  return {pass, fmt("two train runs: checkpoint %s, loss curve %s; .flo round-trip %s; checkpoint round-trip %s",
                    ckpt_same ? "identical" : "DIFFERS", curve_same ? "identical" : "DIFFERS",
                    flo_same ? "bit-exact" : "NOT exact", ckpt_rt ? "bit-exact" : "NOT exact")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runs the acceptance criteria and prints one PASS/FAIL line each."};
  std::vector<int> only;
  std::string work_dir = (fs::temp_directory_path() / "ecm_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 8));
  app.add_option("--work-dir", work_dir, "Scratch directory for files written by the run");
  CLI11_PARSE(app, argc, argv);

  const fs::path work(work_dir);
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradcheck suite", gradcheck_suite},
      {"oracle equivalence", oracle_equivalence},
      {"warp identities", warp_identities},
      {"search-range law", search_range_law},
      {"untrained translation recovery", translation_recovery},
      {"toy training progress", toy_training},
      {"static-scene fixed point", static_fixed_point},
      {"determinism", [&] { return determinism(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << "criterion " << id << " [" << (o.pass ? "PASS" : "FAIL") << "] " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
