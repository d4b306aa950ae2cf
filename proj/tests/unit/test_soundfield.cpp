#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "egodir/error.hpp"
#include "egodir/soundfield.hpp"
#include "oracles.hpp"

using namespace egodir;
using std::numbers::pi;

namespace {

std::vector<Eigen::Vector3d> sphere_mics(int count, double radius, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<Eigen::Vector3d> out;
  for (int i = 0; i < count; ++i) {
    Eigen::Vector3d v(n(rng), n(rng), n(rng));
    out.push_back(radius * v.normalized());
  }
  return out;
}

Eigen::VectorXcd random_coeffs(int order, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Eigen::VectorXcd b(sh_count(order));
  for (auto& v : b) v = {n(rng), n(rng)};
  return b;
}

Complex outgoing_field(const Eigen::VectorXcd& beta, int order, double k, const Eigen::Vector3d& x) {
  return (field_row(x, WaveNumber(k), order) * beta)(0);
}

}  // namespace

TEST_CASE("translation matrix: monopole term and brute-force oracle") {
  const auto mics = sphere_mics(5, 1.3, 11);
  const double k = 7.0;
  const auto s = translation_matrix(mics, WaveNumber(k), 4, 2);
  CHECK(s.rows() == 5 * 9);
  CHECK(s.cols() == 25);
  for (size_t q = 0; q < mics.size(); ++q)
    CHECK(std::abs(s(static_cast<Eigen::Index>(q) * 9, 0) - sph_hankel(0, k * mics[q].norm())) < 1e-13);
  const auto ref = oracle::translation_bruteforce(mics, k, 4, 2);
  CHECK((s - ref).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(translation_matrix(std::vector<Eigen::Vector3d>{Eigen::Vector3d::Zero()}, WaveNumber(1.0), 1, 1), Error);
}

TEST_CASE("translated coefficients reproduce the outgoing field around each mic") {
  const int order = 5, mic_order = 14;
  const double k = 9.0;
  const auto beta = random_coeffs(order, 5);
  const auto mics = sphere_mics(3, 1.4, 21);
  const auto s = translation_matrix(mics, WaveNumber(k), order, mic_order);
  const Eigen::VectorXcd alpha = s * beta;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (size_t q = 0; q < mics.size(); ++q)
    for (int t = 0; t < 5; ++t) {
      Eigen::Vector3d d(n(rng), n(rng), n(rng));
      d = 0.08 * d.normalized();
      const auto p = SphericalPoint::from_cartesian(d);
      const auto j = sph_bessel_j_all(mic_order, k * p.r);
      const auto y = complex_sh_all(mic_order, p.colatitude(), p.azimuth);
      Complex local = 0.0;
      for (int nu = 0; nu <= mic_order; ++nu)
        for (int mu = -nu; mu <= nu; ++mu)
          local += alpha(static_cast<Eigen::Index>(q) * sh_count(mic_order) + acn_index(nu, mu)) * j[nu] * y[acn_index(nu, mu)];
      const Complex direct = outgoing_field(beta, order, k, mics[q] + d);
      CHECK(std::abs(local - direct) < 1e-10 * std::abs(direct));
    }
}

TEST_CASE("translation cache") {
  TranslationCache cache;
  const auto mics = sphere_mics(4, 1.0, 1);
  const auto a = cache.get(mics, WaveNumber(2.0), 2, 1);
  const auto b = cache.get(mics, WaveNumber(2.0), 2, 1);
  CHECK(a.get() == b.get());
  cache.get(mics, WaveNumber(3.0), 2, 1);
  CHECK(cache.size() == 2);
}

TEST_CASE("estimator inverts the forward model") {
  const auto mics = sphere_mics(32, 1.6, 3);
  StftConfig cfg{512, 512, 128, 8000.0};
  EstimatorOptions opt;
  opt.radius = 0.25;
  GlobalEstimator est(mics, 1, cfg, opt);
  CHECK(est.solvable_order() == 10);
  CHECK(est.order_for_bin(1) == -1);  // 15.6 Hz < 50 Hz
  int bin = 1;
  while (est.order_for_bin(bin) < 3) ++bin;
  CHECK(est.order_for_bin(bin) == 3);
  Eigen::VectorXcd beta = random_coeffs(3, 4);
  const Eigen::VectorXcd alpha = est.translation(bin) * beta;
  const Eigen::VectorXcd rec = est.solve_bin(bin, alpha);
  MESSAGE("condition number at bin " << bin << ": " << est.condition_number(bin));
  CHECK((rec - beta).norm() / beta.norm() < 1e-6);
  CHECK(est.solve_bin(bin, Eigen::VectorXcd::Zero(alpha.size())).norm() == 0.0);

  // the per-bin order never exceeds the solvable order
  for (int b = 0; b < est.bins(); ++b) CHECK(est.order_for_bin(b) <= est.solvable_order());

  // too few equations
  CHECK_THROWS_AS(GlobalEstimator(std::vector<Eigen::Vector3d>{Eigen::Vector3d(2, 0, 0)}, 0, cfg, opt), Error);
  opt.cap_order = false;
  opt.radius = 1.2;
  try {
    GlobalEstimator(mics, 1, cfg, opt);
    FAIL("expected underdetermined error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("128 equations") != std::string::npos);
  }
}

TEST_CASE("estimate handles whole frames and persists") {
  const auto mics = sphere_mics(20, 1.6, 8);
  StftConfig cfg{64, 64, 16, 8000.0};
  EstimatorOptions opt;
  opt.radius = 0.3;
  LocalCoeffSequence local;
  local.stft = cfg;
  local.mic_order = 1;
  local.mics = mics;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int f = 0; f < 3; ++f) {
    Eigen::MatrixXcd a(80, cfg.bins());
    for (auto& v : a.reshaped()) v = {n(rng), n(rng)};
    local.frames.push_back({f, a});
  }
  const auto g = estimate_global_coeffs(local, opt);
  REQUIRE(g.frames.size() == 3);
  CHECK(g.frames[0].beta[0].size() == 0);
  const auto dir = std::filesystem::temp_directory_path();
  local.save(dir / "egodir_local.bin");
  g.save(dir / "egodir_global.bin");
  const auto l2 = LocalCoeffSequence::load(dir / "egodir_local.bin");
  const auto g2 = GlobalCoeffSequence::load(dir / "egodir_global.bin");
  CHECK(l2.frames.size() == 3);
  CHECK((l2.frames[1].alpha - local.frames[1].alpha).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(g2.frames[2].orders == g.frames[2].orders);
  for (size_t b = 0; b < g.frames[2].beta.size(); ++b)
    if (g.frames[2].beta[b].size() > 0) CHECK((g2.frames[2].beta[b] - g.frames[2].beta[b]).cwiseAbs().maxCoeff() <= 1e-6 * (1 + g.frames[2].beta[b].cwiseAbs().maxCoeff()));
}

namespace {
// Monopole whose coefficients follow the STFT of white noise, so the rendered signals are
// consistent spectrograms.
GlobalCoeffSequence monopole_sequence(const StftConfig& cfg, int frames, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Signal x(static_cast<size_t>(cfg.hop * (frames - 3)));
  for (size_t i = 0; i < x.size(); ++i) x[i] = n(rng);
  const auto spec = stft(x, cfg);
  GlobalCoeffSequence g;
  g.stft = cfg;
  for (int f = 0; f < frames; ++f) {
    GlobalCoeffFrame fr;
    fr.frame = f;
    fr.radius = 0.2;
    for (int b = 0; b < cfg.bins(); ++b) {
      const int order = b == 0 ? -1 : 2;
      fr.orders.push_back(order);
      Eigen::VectorXcd beta = Eigen::VectorXcd::Zero(order < 0 ? 0 : sh_count(order));
      if (order >= 0) beta(0) = spec(f, b);
      fr.beta.push_back(beta);
      fr.residual.push_back(0.0);
    }
    g.frames.push_back(fr);
  }
  return g;
}
}  // namespace

TEST_CASE("rendering: symmetry, linearity, 1/r decay") {
  StftConfig cfg{512, 512, 128, 8000.0};
  const int frames = 80;
  const auto g = monopole_sequence(cfg, frames, 1);
  const std::vector<Pose> poses(frames);
  const size_t len = 128 * (frames - 3);
  std::vector<std::vector<SphericalPoint>> trajs;
  for (auto p : {SphericalPoint::from_degrees(1.0, 0, 0), SphericalPoint::from_degrees(1.0, 120, 40),
                 SphericalPoint::from_degrees(2.0, 0, 0)})
    trajs.emplace_back(frames, p);
  const auto out = render_virtual_mics(g, trajs, poses, len);
  double e0 = 0, diff = 0;
  for (size_t i = 0; i < len; ++i) {
    e0 += out[0][i] * out[0][i];
    diff += std::pow(out[0][i] - out[1][i], 2);
  }
  CHECK(diff / e0 < 1e-20);

  // 1/r decay of the rendered per-bin magnitude over 1.0 .. 2.0 m
  for (int b = 1; b < cfg.bins(); b += 17) {
    const WaveNumber k = WaveNumber::from_frequency(cfg.bin_frequency(b));
    const auto& beta = g.frames[10].beta[static_cast<size_t>(b)];
    const double ref = std::abs((field_row(SphericalPoint::from_degrees(1.0, 30, 10).cartesian(), k, 2) * beta)(0));
    for (double r : {1.25, 1.5, 1.75, 2.0}) {
      const double mag = std::abs((field_row(SphericalPoint::from_degrees(r, 30, 10).cartesian(), k, 2) * beta)(0));
      CHECK(ref / mag == doctest::Approx(r).epsilon(0.01));
    }
  }

  // static trajectory equals the dynamic path with constant pose
  std::vector<SphericalPoint> traj(frames, SphericalPoint::from_degrees(1.0, 0, 0));
  const auto single = render_virtual_mic(g, traj, poses, len);
  CHECK(single == out[0]);

  // linearity
  auto g2 = monopole_sequence(cfg, frames, 2);
  auto sum = g;
  for (int f = 0; f < frames; ++f)
    for (size_t b = 0; b < sum.frames[f].beta.size(); ++b) sum.frames[f].beta[b] += g2.frames[f].beta[b];
  const auto a = render_virtual_mic(g, traj, poses, len), b = render_virtual_mic(g2, traj, poses, len),
             c = render_virtual_mic(sum, traj, poses, len);
  double worst = 0;
  for (size_t i = 0; i < len; ++i) worst = std::max(worst, std::abs(c[i] - a[i] - b[i]));
  CHECK(worst < 1e-9);

  std::vector<SphericalPoint> inside(frames, SphericalPoint::from_degrees(0.1, 0, 0));
  CHECK_THROWS_AS(render_virtual_mic(g, inside, poses, len), Error);
}

TEST_CASE("muting gains and crossfades") {
  const double sr = 48000.0;
  const size_t len = 1104 * 10;
  MultiSignal sig(1, Signal(len));
  for (size_t i = 0; i < len; ++i) sig[0][i] = std::sin(2 * pi * 440 * i / sr);
  MaskTimeline keep, mute, alt;
  for (int f = 0; f < 10; ++f) {
    keep.masks.push_back({true});
    mute.masks.push_back({false});
    alt.masks.push_back({f % 2 == 0});
  }
  CHECK(apply_muting(sig, keep, sr)[0] == sig[0]);
  const auto m = apply_muting(sig, mute, sr)[0];
  double pin = 0, pout = 0;
  for (size_t i = 0; i < len; ++i) {
    pin += sig[0][i] * sig[0][i];
    pout += m[i] * m[i];
  }
  CHECK(10 * std::log10(pout / pin) == doctest::Approx(-60.0).epsilon(1e-9));

  const auto a = apply_muting(sig, alt, sr)[0];
  double max_step = 0.0, max_out_step = 0.0;
  for (size_t i = 1; i < len; ++i) {
    max_step = std::max(max_step, std::abs(sig[0][i] - sig[0][i - 1]));
    max_out_step = std::max(max_out_step, std::abs(a[i] - a[i - 1]));
  }
  CHECK(max_out_step <= max_step * 1.5);
  // fully muted after the 5 ms ramp inside the second mask frame
  CHECK(std::abs(a[1104 + 300] - 0.001 * sig[0][1104 + 300]) < 1e-15);
  CHECK(std::abs(a[1104 + 100] - 0.001 * sig[0][1104 + 100]) > 1e-6);
}

TEST_CASE("mask timeline follows poses") {
  std::vector<Eigen::Vector3d> mics;
  for (int i = 0; i < 8; ++i)
    for (double el : {-30.0, 30.0}) mics.push_back(SphericalPoint::from_degrees(2.74, 45.0 * i, el).cartesian());
  const Grid g = custom_grid({SphericalPoint::from_degrees(1.5, 0, 20)}, false);
  std::vector<Pose> poses{Pose(0.0, Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity()),
                          Pose(1.0, Eigen::Vector3d::Zero(), Eigen::Quaterniond(Eigen::AngleAxisd(-20 * pi / 180, Eigen::Vector3d::UnitY())))};
  const auto tl = mask_timeline(mics, poses, g, 48000.0, 48000);
  CHECK(tl.frame_samples == 1104);
  CHECK(tl.masks.size() == 44);
  CHECK(tl.masks.front()[0]);
  CHECK_FALSE(tl.masks.back()[0]);
}
