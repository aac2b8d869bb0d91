#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "ecm/estimator.hpp"
#include "ecm/gradcheck.hpp"
#include "ecm/ops.hpp"
#include "ecm/synthetic.hpp"
#include "ecm/warp.hpp"
#include "fixtures.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace ecm;
using testutil::max_abs_diff;
using testutil::interior_epe;
using testutil::random_tensor;

namespace {

constexpr DType f64 = DType::kFloat64;

Tensor constant_flow(std::int64_t h, std::int64_t w, double dx, double dy) {
  Tensor f({1, 2, h, w}, f64);
  auto d = f.data<double>();
  for (std::int64_t i = 0; i < h * w; ++i) {
    d[static_cast<std::size_t>(i)] = dx;
    d[static_cast<std::size_t>(h * w + i)] = dy;
  }
  return f;
}

RunConfig small_config() {
  RunConfig c;
  c.levels = 2;
  c.initial_downsample = 2;
  c.radius = 1;
  c.encoder_width = 4;
  c.upscale_width = 4;
  c.dtype = f64;
  c.seed = 7;
  return c;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (std::int64_t i = 0; i < t.numel(); ++i) m = std::max(m, std::abs(t.at(i)));
  return m;
}

}  // namespace

TEST_CASE("correlation of constant fields is sqrt(C) with masked borders") {
  Tape tape;
  auto ones = tape.constant(Tensor::full({1, 4, 5, 5}, 1.0, f64));
  const Tensor c = local_correlation(ones, ones, 2).value();
  REQUIRE(c.shape() == Shape{1, 25, 5, 5});
  for (std::int64_t k = 0; k < 25; ++k) CHECK(oracle::get(c, 0, k, 2, 2) == 2.0);
  // Pixel (0, 0) cannot look left or up.
  CHECK(oracle::get(c, 0, 0, 0, 0) == kMaskedCorrelation);
  CHECK(oracle::get(c, 0, 12, 0, 0) == 2.0);
  CHECK(oracle::get(c, 0, 24, 0, 0) == 2.0);
}

TEST_CASE("orthogonal one-hot patterns correlate only when aligned") {
  // Channel (y % 3) * 3 + x % 3 is hot, so any displacement in [-1, 1]^2 other
  // than zero lands on a different channel.
  Tensor t({1, 9, 6, 6}, f64);
  for (std::int64_t y = 0; y < 6; ++y)
    for (std::int64_t x = 0; x < 6; ++x) oracle::put(t, 0, (y % 3) * 3 + x % 3, y, x, 1.0);
  Tape tape;
  auto v = tape.constant(t);
  const Tensor c = local_correlation(v, v, 1).value();
  for (std::int64_t y = 1; y < 5; ++y)
    for (std::int64_t x = 1; x < 5; ++x)
      for (std::int64_t k = 0; k < 9; ++k) CHECK(oracle::get(c, 0, k, y, x) == (k == 4 ? 1.0 / 3.0 : 0.0));
}

TEST_CASE("correlation matches the brute-force oracle") {
  SUBCASE("5x5 single channel, r = 1") {
    Tape tape;
    const Tensor a = random_tensor({1, 1, 5, 5}, 3), b = random_tensor({1, 1, 5, 5}, 4);
    CHECK(max_abs_diff(local_correlation(tape.constant(a), tape.constant(b), 1).value(),
                       oracle::local_correlation(a, b, 1)) <= 1e-12);
  }
  SUBCASE("random shapes up to 8x8, r <= 2") {
    std::mt19937_64 rng(11);
    double worst = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
      const auto n = std::uniform_int_distribution<std::int64_t>(1, 2)(rng);
      const auto c = std::uniform_int_distribution<std::int64_t>(1, 5)(rng);
      const auto h = std::uniform_int_distribution<std::int64_t>(1, 8)(rng);
      const auto w = std::uniform_int_distribution<std::int64_t>(1, 8)(rng);
      const int r = std::uniform_int_distribution<int>(1, 2)(rng);
      const Tensor a = random_tensor({n, c, h, w}, 100 + seed), b = random_tensor({n, c, h, w}, 200 + seed);
      Tape tape;
      worst = std::max(worst, max_abs_diff(local_correlation(tape.constant(a), tape.constant(b), r).value(),
                                           oracle::local_correlation(a, b, r)));
    }
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("correlation rejects bad inputs") {
  Tape tape;
  auto a = tape.constant(Tensor({1, 2, 4, 4}, f64));
  CHECK_THROWS_AS(local_correlation(a, tape.constant(Tensor({1, 2, 4, 5}, f64)), 1), ShapeError);
  CHECK_THROWS_AS(local_correlation(a, a, 0), Error);
}

TEST_CASE("soft-argmax examples") {
  Tape tape;
  const Tensor prev = random_tensor({1, 2, 3, 4}, 5);
  SUBCASE("uniform cost leaves the flow unchanged") {
    const Tensor out = soft_argmax_update(tape.constant(Tensor::full({1, 25, 3, 4}, 0.7, f64)), tape.constant(prev), 2,
                                          10.0).value();
    CHECK(max_abs_diff(out, prev) <= 1e-15);
  }
  SUBCASE("a dominant candidate saturates the softmax") {
    const double tau = 10.0;
    Tensor cost = random_tensor({1, 25, 3, 4}, 6, 0.0, 0.1);
    // (dx, dy) = (2, -1) sits at row dy + 2 = 1, column dx + 2 = 4.
    for (std::int64_t i = 0; i < 12; ++i) cost.data<double>()[static_cast<std::size_t>((1 * 5 + 4) * 12 + i)] = 0.1 + 20.0 / tau;
    const Tensor out = soft_argmax_update(tape.constant(cost), tape.constant(prev), 2, tau).value();
    for (std::int64_t i = 0; i < 12; ++i) {
      CHECK(std::abs(out.at(12 + i) - prev.at(12 + i) + 1.0) < 1e-3);
      CHECK(std::abs(out.at(i) - prev.at(i) - 2.0) < 1e-3);
    }
  }
  SUBCASE("hand-computed r = 1 row") {
    Tensor cost({1, 9, 1, 1}, f64);
    cost.data<double>()[1] = 1.0;  // (dx, dy) = (0, -1)
    const Tensor out =
        soft_argmax_update(tape.constant(cost), tape.constant(Tensor({1, 2, 1, 1}, f64)), 1, 1.0).value();
    const double e = std::numbers::e;
    // Rows dy = -1, 0, 1 carry weights e + 2, 3, 3; every row is symmetric in dx.
    CHECK(std::abs(out.at(0)) < 1e-15);
    CHECK(out.at(1) == doctest::Approx((3.0 - (e + 2.0)) / (e + 8.0)).epsilon(1e-14));
    CHECK(max_abs_diff(out, oracle::soft_argmax_update(cost, Tensor({1, 2, 1, 1}, f64), 1, 1.0)) <= 1e-15);
  }
}

TEST_CASE("soft-argmax matches the oracle and stays inside the grid") {
  for (int seed = 0; seed < 20; ++seed) {
    const int r = 1 + seed % 3;
    const std::int64_t side = 2 * r + 1;
    const Tensor cost = random_tensor({2, side * side, 3, 5}, 300 + seed, -3.0, 3.0);
    const Tensor prev = random_tensor({2, 2, 3, 5}, 400 + seed);
    Tape tape;
    const Tensor out = soft_argmax_update(tape.constant(cost), tape.constant(prev), r, 4.0).value();
    CHECK(max_abs_diff(out, oracle::soft_argmax_update(cost, prev, r, 4.0)) <= 1e-12);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out.at(i) - prev.at(i)) <= r);
  }
}

TEST_CASE("soft-argmax rejects a cost volume of the wrong size") {
  Tape tape;
  CHECK_THROWS_AS(soft_argmax_update(tape.constant(Tensor({1, 8, 2, 2}, f64)), tape.constant(Tensor({1, 2, 2, 2}, f64)),
                                     1, 1.0),
                  ShapeError);
}

TEST_CASE("rewarp examples") {
  Tape tape;
  auto no_weight = [&](std::int64_t h, std::int64_t w) { return tape.constant(Tensor({1, 1, h, w}, f64)); };
  SUBCASE("zero carrier is the identity") {
    const Tensor updated = random_tensor({1, 2, 4, 5}, 8);
    const Tensor out =
        rewarp_flow_to_source(tape.constant(updated), tape.constant(Tensor({1, 2, 4, 5}, f64)), no_weight(4, 5), 1e-4)
            .value();
    CHECK(out.identical(updated));
  }
  SUBCASE("constant fields") {
    const Tensor out = rewarp_flow_to_source(tape.constant(constant_flow(6, 6, 3.5, -2.0)),
                                             tape.constant(constant_flow(6, 6, 1.0, 0.0)), no_weight(6, 6), 1e-4)
                           .value();
    for (std::int64_t y = 0; y < 6; ++y)
      for (std::int64_t x = 0; x < 5; ++x) {
        CHECK(oracle::get(out, 0, 0, y, x) == 3.5);
        CHECK(oracle::get(out, 0, 1, y, x) == -2.0);
      }
    // The last column lands off-frame and keeps the carrier.
    CHECK(oracle::get(out, 0, 0, 2, 5) == 1.0);
    CHECK(oracle::get(out, 0, 1, 2, 5) == 0.0);
  }
  SUBCASE("two pixels") {
    const Tensor updated = Tensor::from_values({1, 2, 1, 2}, {0.25, 1.75, -0.5, 0.75}, f64);
    const Tensor out = rewarp_flow_to_source(tape.constant(updated), tape.constant(constant_flow(1, 2, 1.0, 0.0)),
                                             no_weight(1, 2), 1e-4)
                           .value();
    // Pixel 0 reads the updated flow at x = 1; pixel 1 would read x = 2.
    CHECK(out.to_vector() == std::vector<double>{1.75, 1.0, 0.75, 0.0});
  }
  SUBCASE("targets without splat mass fall back to the carrier") {
    // Pixels 0 and 1 both land on pixel 1 with negligible importance, so the
    // sampled coverage there is far below eps.
    const Tensor carrier = Tensor::from_values({1, 2, 1, 4}, {1, 0, 0, 0, 0, 0, 0, 0}, f64);
    const Tensor updated = Tensor::from_values({1, 2, 1, 4}, {9, 9, 5, 6, 9, 9, 7, 8}, f64);
    const Tensor weight = Tensor::from_values({1, 1, 1, 4}, {-30, -30, 0, 0}, f64);
    const Tensor out =
        rewarp_flow_to_source(tape.constant(updated), tape.constant(carrier), tape.constant(weight), 1e-4).value();
    CHECK(out.to_vector() == std::vector<double>{1, 0, 5, 6, 0, 0, 7, 8});
  }
}

TEST_CASE("search range recurrence") {
  RunConfig c;
  c.radius = 4;
  c.initial_downsample = 4;
  c.level_downsample = 2;
  c.levels = 1;
  CHECK(search_range(c) == std::vector<std::int64_t>{16});
  c.levels = 6;
  const auto r = search_range(c);
  CHECK(r == std::vector<std::int64_t>{16, 36, 76, 156, 316, 636});
  CHECK(r[4] < 400);
  CHECK(r[5] >= 400);
  c.initial_downsample = 1;
  c.levels = 3;
  CHECK(search_range(c) == std::vector<std::int64_t>{4, 12, 28});
  c.radius = 0;
  CHECK_THROWS_AS(search_range(c), ConfigError);
}

TEST_CASE("encoder is pure and translation-equivariant at stride 1") {
  RunConfig c = small_config();
  c.initial_downsample = 1;
  ParameterSet ps;
  FlowEstimator est(ps, c);
  const Tensor img = random_tensor({1, 3, 10, 12}, 9, 0.0, 1.0);
  Tape tape;
  const Tensor f = est.encode(tape.constant(img)).value();
  CHECK(f.shape() == Shape{1, 4, 10, 12});
  CHECK(est.encode(tape.constant(img)).value().identical(f));
  const Tensor g = est.encode(tape.constant(circular_shift(img, 1, 0))).value();
  // Two 3x3 convolutions see two pixels of zero padding.
  double worst = 0.0;
  for (std::int64_t ch = 0; ch < 4; ++ch)
    for (std::int64_t y = 2; y < 8; ++y)
      for (std::int64_t x = 2; x < 9; ++x)
        worst = std::max(worst, std::abs(oracle::get(g, 0, ch, y, x + 1) - oracle::get(f, 0, ch, y, x)));
  CHECK(worst <= 1e-12);
  CHECK_THROWS_AS(FlowEstimator(ps, small_config()), Error);  // names already taken
}

TEST_CASE("encoder rejects images below its stride") {
  ParameterSet ps;
  RunConfig c = small_config();
  c.initial_downsample = 4;
  FlowEstimator est(ps, c);
  Tape tape;
  CHECK_THROWS_AS(est.encode(tape.constant(Tensor({1, 3, 3, 8}, f64))), ShapeError);
  CHECK_THROWS_AS(est.encode(tape.constant(Tensor({1, 2, 8, 8}, f64))), ShapeError);
}

TEST_CASE("feature downsampling") {
  ParameterSet ps;
  RunConfig c = small_config();
  FlowEstimator est(ps, c);
  Tape tape;
  const Tensor x = random_tensor({2, 4, 8, 8}, 10);
  const Tensor y = est.downsample_feature(tape.constant(x)).value();
  CHECK(y.shape() == Shape{2, 4, 4, 4});

  // Direct strided correlation with zero padding.
  const Tensor& w = ps.at("flow.down.weight").value;
  const Tensor& b = ps.at("flow.down.bias").value;
  const std::int64_t k = w.dim(2), pad = k / 2;
  double worst = 0.0;
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t o = 0; o < 4; ++o)
      for (std::int64_t oy = 0; oy < 4; ++oy)
        for (std::int64_t ox = 0; ox < 4; ++ox) {
          double acc = b.at(o);
          for (std::int64_t i = 0; i < 4; ++i)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const std::int64_t iy = 2 * oy + ky - pad, ix = 2 * ox + kx - pad;
                if (iy < 0 || iy >= 8 || ix < 0 || ix >= 8) continue;
                acc += w.at(((o * 4 + i) * k + ky) * k + kx) * oracle::get(x, n, i, iy, ix);
              }
          worst = std::max(worst, std::abs(acc - oracle::get(y, n, o, oy, ox)));
        }
  CHECK(worst <= 1e-12);

  // A per-channel box filter keeps a constant field flat away from the padding.
  Tensor& wd = ps.at("flow.down.weight").value;
  wd = Tensor(wd.shape(), f64);
  for (std::int64_t ch = 0; ch < 4; ++ch)
    for (std::int64_t t = 0; t < k * k; ++t) wd.data<double>()[static_cast<std::size_t>((ch * 4 + ch) * k * k + t)] = 1.0;
  Tape fresh;  // a tape binds each parameter once
  const Tensor flat = est.downsample_feature(fresh.constant(Tensor::full({1, 4, 8, 8}, 0.5, f64))).value();
  for (std::int64_t ch = 0; ch < 4; ++ch)
    for (std::int64_t yy = 1; yy < 4; ++yy)
      for (std::int64_t xx = 1; xx < 4; ++xx) CHECK(oracle::get(flat, 0, ch, yy, xx) == 0.5 * static_cast<double>(k * k));

  CHECK_THROWS_AS(est.downsample_feature(tape.constant(Tensor({1, 4, 1, 8}, f64))), ShapeError);
}

TEST_CASE("upscaling starts as scaled bilinear interpolation") {
  ParameterSet ps;
  FlowEstimator est(ps, small_config());
  Tape tape;
  const Tensor flow = random_tensor({1, 2, 4, 4}, 12, -2.0, 2.0);
  const Tensor weight = random_tensor({1, 1, 4, 4}, 13);
  auto fa = tape.constant(random_tensor({1, 4, 8, 8}, 14));
  auto fb = tape.constant(random_tensor({1, 4, 8, 8}, 15));
  const auto up = est.upscale_flow(tape.constant(flow), tape.constant(weight), fa, fb);
  const Tensor expected = scale(resize_bilinear(tape.constant(flow), 8, 8), 2.0).value();
  CHECK(up.flow.value().identical(expected));
  CHECK(up.weight.value().shape() == Shape{1, 1, 8, 8});

  const auto flat = est.upscale_flow(tape.constant(constant_flow(4, 4, 1.25, -0.5)), tape.constant(weight), fa, fb);
  CHECK(max_abs_diff(flat.flow.value(), constant_flow(8, 8, 2.5, -1.0)) == 0.0);

  CHECK_THROWS_AS(est.upscale_flow(tape.constant(flow), tape.constant(weight), tape.constant(Tensor({1, 4, 8, 6}, f64)),
                                   tape.constant(Tensor({1, 4, 8, 6}, f64))),
                  ShapeError);
}

TEST_CASE("identical frames give zero flow at every level") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    RunConfig c;
    c.levels = 3;
    c.seed = seed;
    ParameterSet ps;
    FlowEstimator est(ps, c);
    const Tensor img = random_tensor({1, 3, 48, 40}, 20 + seed, 0.0, 1.0, c.dtype);
    Tape tape;
    const auto bf = est.estimate(tape.constant(img), tape.constant(img), true);
    REQUIRE(bf.trace.size() == 3);
    for (const auto& tr : bf.trace) {
      CHECK(max_abs(tr.flow01) < 0.1);
      CHECK(max_abs(tr.flow10) < 0.1);
    }
    CHECK(bf.flow01.value().shape() == Shape{1, 2, 48, 40});
    CHECK(max_abs(bf.flow01.value()) < 0.1);
    CHECK(max_abs(bf.flow10.value()) < 0.1);
  }
}

TEST_CASE("swapping the frames swaps the flows") {
  RunConfig c;
  c.levels = 2;
  ParameterSet ps;
  FlowEstimator est(ps, c);
  const Texture tex(testutil::wheel_options(64), 4);
  const Tensor a = tex.render(64, 64, 0, 0, c.dtype), b = tex.render(64, 64, 3, -2, c.dtype);
  Tape tape;
  const auto fwd = est.estimate(tape.constant(a), tape.constant(b));
  const auto rev = est.estimate(tape.constant(b), tape.constant(a));
  CHECK(max_abs_diff(rev.flow01.value(), fwd.flow10.value()) <= 1e-3);
  CHECK(max_abs_diff(rev.flow10.value(), fwd.flow01.value()) <= 1e-3);
}

TEST_CASE("pyramid depth does not change the parameter set") {
  RunConfig shallow;
  shallow.levels = 3;
  RunConfig deep = shallow;
  deep.levels = 6;
  ParameterSet ps3, ps6;
  FlowEstimator e3(ps3, shallow), e6(ps6, deep);
  REQUIRE(ps3.size() == ps6.size());
  auto p3 = ps3.begin();
  for (auto p6 = ps6.begin(); p6 != ps6.end(); ++p6, ++p3) {
    CHECK(p3->name == p6->name);
    CHECK(p3->value.identical(p6->value));
  }
  const Tensor img = random_tensor({1, 3, 128, 128}, 30, 0.0, 1.0, shallow.dtype);
  auto used = [&](const FlowEstimator& est) {
    Tape tape;
    est.estimate(tape.constant(img), tape.constant(circular_shift(img, 2, 1)));
    std::set<std::string> names;
    for (const auto* p : tape.parameters_used()) names.insert(p->name);
    return names;
  };
  const auto u3 = used(e3);
  CHECK(u3.size() == ps3.size());
  CHECK(u3 == used(e6));
}

TEST_CASE("inputs are padded to the pyramid multiple and cropped back") {
  RunConfig c = small_config();
  ParameterSet ps;
  FlowEstimator est(ps, c);
  CHECK(est.size_multiple() == 4);
  Tape tape;
  const Tensor a = random_tensor({1, 3, 9, 11}, 31, 0.0, 1.0), b = random_tensor({1, 3, 9, 11}, 32, 0.0, 1.0);
  const auto bf = est.estimate(tape.constant(a), tape.constant(b));
  CHECK(bf.padded_height == 12);
  CHECK(bf.padded_width == 12);
  CHECK(bf.flow01.value().shape() == Shape{1, 2, 9, 11});
  CHECK(bf.flow10.value().shape() == Shape{1, 2, 9, 11});
  CHECK_THROWS_AS(est.estimate(tape.constant(a), tape.constant(Tensor({1, 3, 9, 10}, f64))), ShapeError);
}

TEST_CASE("single-level patch matching recovers integer translations") {
  const RunConfig c = testutil::patch_encoder_config(1);
  ParameterSet ps;
  FlowEstimator est(ps, c);
  testutil::load_patch_encoder(ps, c);
  const Texture tex(testutil::wheel_options(128), 5);
  const Tensor a = tex.render(128, 128, 0, 0, c.dtype);
  for (auto [dx, dy] : {std::pair{4, 0}, std::pair{-3, 2}, std::pair{1, -4}}) {
    Tape tape;
    const auto bf = est.estimate(tape.constant(a), tape.constant(circular_shift(a, dx, dy)));
    CHECK(interior_epe(bf.flow01.value(), dx, dy, 8) < 0.5);
    CHECK(interior_epe(bf.flow10.value(), -dx, -dy, 8) < 0.5);
  }
}

TEST_CASE("two-level pyramid reaches its full search range") {
  const RunConfig c = testutil::patch_encoder_config(2);
  ParameterSet ps;
  FlowEstimator est(ps, c);
  testutil::load_patch_encoder(ps, c);
  const std::int64_t reach = search_range(c).back();
  REQUIRE(reach == 12);
  const Tensor a = testutil::hue_ramp(128, 0.7, c.dtype);
  // Both window edges plus shifts that land between coarse pixels.
  for (std::int64_t dx : {reach, -reach, std::int64_t{7}, std::int64_t{-5}}) {
    Tape tape;
    const auto bf = est.estimate(tape.constant(a), tape.constant(circular_shift(a, dx, 0)));
    CHECK(interior_epe(bf.flow01.value(), static_cast<double>(dx), 0, reach) < 0.5);
    CHECK(interior_epe(bf.flow10.value(), static_cast<double>(-dx), 0, reach) < 0.5);
  }
}

// Runs `check(seed)` on successive seeds until `wanted` of them keep the
// unperturbed pass at least `clearance` away from every non-differentiable
// point. Returns the worst error over those seeds and how many were found.
template <typename Check>
std::pair<double, int> over_clean_seeds(Check check, int wanted, double clearance, int max_tries) {
  double worst = 0.0;
  int clean = 0;
  for (int seed = 0; seed < max_tries && clean < wanted; ++seed) {
    const GradcheckResult res = check(static_cast<std::uint64_t>(seed));
    if (res.nearest_kink < clearance) continue;
    worst = std::max(worst, res.max_rel_error);
    ++clean;
  }
  return {worst, clean};
}

TEST_CASE("estimator gradients match finite differences") {
  GradcheckOptions opt;
  SUBCASE("local correlation") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      opt.seed = seed;
      // Zero the masked candidates; their -1e9 would drown the differences.
      Tape probe;
      const Tensor valid = local_correlation(probe.constant(Tensor::full({1, 3, 5, 4}, 1.0, f64)),
                                             probe.constant(Tensor::full({1, 3, 5, 4}, 1.0, f64)), 2)
                               .value();
      Tensor mask(valid.shape(), f64);
      for (std::int64_t i = 0; i < mask.numel(); ++i) mask.data<double>()[static_cast<std::size_t>(i)] = valid.at(i) > 0 ? 1.0 : 0.0;
      const auto res = check_input_gradients(
          [&mask](Tape& t, const std::vector<Var>& v) { return mul(local_correlation(v[0], v[1], 2), t.constant(mask)); },
          {random_tensor({1, 3, 5, 4}, 500 + seed), random_tensor({1, 3, 5, 4}, 600 + seed)}, opt);
      CHECK(res.max_rel_error < 1e-4);
    }
  }
  SUBCASE("soft-argmax update") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      opt.seed = seed;
      const auto res = check_input_gradients(
          [](Tape&, const std::vector<Var>& v) { return soft_argmax_update(v[0], v[1], 1, 3.0); },
          {random_tensor({2, 9, 3, 3}, 700 + seed), random_tensor({2, 2, 3, 3}, 800 + seed)}, opt);
      CHECK(res.max_rel_error < 1e-4);
    }
  }
  SUBCASE("rewarp") {
    const auto [worst, clean] = over_clean_seeds(
        [&](std::uint64_t seed) {
          opt.seed = seed;
          // Carrier offsets with fractional parts in [0.2, 0.8] stay clear of the
          // bilinear corners; the updated flow is unconstrained.
          std::mt19937_64 rng(900 + seed);
          std::uniform_int_distribution<int> whole(-1, 1);
          std::uniform_real_distribution<double> frac(0.2, 0.8);
          Tensor carrier({1, 2, 5, 5}, f64);
          for (auto& v : carrier.data<double>()) v = whole(rng) + frac(rng);
          return check_input_gradients(
              [](Tape& t, const std::vector<Var>& v) {
                return rewarp_flow_to_source(v[0], v[1], t.constant(Tensor({1, 1, 5, 5}, f64)), 1e-4);
              },
              {random_tensor({1, 2, 5, 5}, 1000 + seed, -2.0, 2.0), carrier}, opt);
        },
        20, 1e-2, 20);
    CHECK(clean == 20);
    CHECK(worst < 1e-4);
  }
  SUBCASE("upscale network") {
    auto run = [&](std::uint64_t seed, bool parameters) {
      RunConfig c = small_config();
      c.seed = seed;
      ParameterSet ps;
      FlowEstimator est(ps, c);
      // Give the zero-initialised residual head something to differentiate.
      for (auto& p : ps) {
        if (p.name.rfind("flow.up.residual", 0) == 0) p.value = random_tensor(p.value.shape(), 1100 + seed, -0.3, 0.3);
      }
      opt.seed = seed;
      auto graph = [&est](Tape&, const std::vector<Var>& v) {
        const auto up = est.upscale_flow(v[0], v[1], v[2], v[3]);
        return concat({up.flow, up.weight}, 1);
      };
      const std::vector<Tensor> inputs{random_tensor({1, 2, 3, 3}, 1200 + seed), random_tensor({1, 1, 3, 3}, 1300 + seed),
                                       random_tensor({1, 4, 6, 6}, 1400 + seed), random_tensor({1, 4, 6, 6}, 1500 + seed)};
      return parameters ? check_parameter_gradients(graph, inputs, ps, opt) : check_input_gradients(graph, inputs, opt);
    };
    for (bool parameters : {false, true}) {
      const auto [worst, clean] = over_clean_seeds([&](std::uint64_t s) { return run(s, parameters); }, 20, 1e-3, 40);
      CHECK(clean == 20);
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("end-to-end gradient with respect to encoder parameters") {
  GradcheckOptions opt;
  opt.step = 1e-6;
  opt.max_coords = 40;
  opt.parameter_prefix = "flow.enc.";
  const auto [worst, clean] = over_clean_seeds(
      [&](std::uint64_t seed) {
        RunConfig c = small_config();
        c.seed = seed;
        c.temperature = 2.0;
        ParameterSet ps;
        FlowEstimator est(ps, c);
        opt.seed = seed;
        return check_parameter_gradients(
            [&est](Tape&, const std::vector<Var>& v) {
              const auto bf = est.estimate(v[0], v[1]);
              return concat({bf.flow01, bf.flow10}, 1);
            },
            {random_tensor({1, 3, 8, 8}, 1600 + seed, 0.0, 1.0), random_tensor({1, 3, 8, 8}, 1700 + seed, 0.0, 1.0)},
            ps, opt);
      },
      20, 1e-4, 60);
  CHECK(clean == 20);
  CHECK(worst < 1e-4);
}
