#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "egodir/error.hpp"
#include "egodir/synth.hpp"

using namespace egodir;
using std::numbers::pi;

namespace {

Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Vector3d v(n(rng), n(rng), n(rng));
  return v.normalized();
}

double rms(std::span<const double> x, size_t skip = 0) {
  double s = 0.0;
  for (size_t i = skip; i + skip < x.size(); ++i) s += x[i] * x[i];
  return std::sqrt(s / static_cast<double>(x.size() - 2 * skip));
}

// h_0(x) = -i e^{ix} / x
std::complex<double> hankel0(double x) { return std::complex<double>(0.0, -1.0) * std::exp(std::complex<double>(0.0, x)) / x; }

}  // namespace

TEST_CASE("real to complex SH conversion") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  const int order = 6;
  Eigen::VectorXd b(sh_count(order));
  for (auto& v : b) v = n(rng);
  const Eigen::VectorXcd c = real_to_complex_sh(order) * b;
  for (int t = 0; t < 20; ++t) {
    const auto p = SphericalPoint::from_cartesian(random_unit(rng));
    const auto yr = real_sh_all(order, p.colatitude(), p.azimuth);
    const auto yc = complex_sh_all(order, p.colatitude(), p.azimuth);
    double fr = 0.0;
    Complex fc = 0.0;
    for (int i = 0; i < sh_count(order); ++i) {
      fr += b(i) * yr[i];
      fc += c(i) * yc[i];
    }
    CHECK(std::abs(fc - fr) < 1e-12);
  }
}

TEST_CASE("product quadrature is exact to its degree") {
  for (int order : {0, 3, 9}) {
    const auto q = product_quadrature(2 * order);
    double total = 0.0;
    for (double w : q.weights) total += w;
    CHECK(total == doctest::Approx(4 * pi).epsilon(1e-13));
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(sh_count(order), sh_count(order));
    for (size_t i = 0; i < q.points.size(); ++i) {
      const auto y = real_sh_all(order, q.points[i].colatitude(), q.points[i].azimuth);
      const Eigen::Map<const Eigen::VectorXd> v(y.data(), sh_count(order));
      gram += q.weights[i] * v * v.transpose();
    }
    CHECK((gram - Eigen::MatrixXd::Identity(sh_count(order), sh_count(order))).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("patterns and rotation") {
  std::mt19937_64 rng(2);
  const auto card = DirectivityPattern::cardioid(3);
  CHECK(card.order == 3);
  for (int t = 0; t < 20; ++t) {
    const Eigen::Vector3d u = random_unit(rng);
    CHECK(card.amplitude(SphericalPoint::from_cartesian(u)) == doctest::Approx(std::pow(0.5 * (1 + u.x()), 3)).epsilon(1e-12));
  }
  CHECK(card.directivity(SphericalPoint{}) == doctest::Approx(1.0));
  CHECK(card.directivity(SphericalPoint::from_degrees(1, 90, 0)) == doctest::Approx(1.0 / 64.0).epsilon(1e-12));
  const auto rear = DirectivityPattern::rear_lobe(-20.0);
  CHECK(10 * std::log10(rear.directivity(SphericalPoint::from_degrees(1, 180, 0))) == doctest::Approx(-20.0).epsilon(1e-10));
  CHECK(DirectivityPattern::omni().amplitude(SphericalPoint::from_degrees(1, 33, -12)) == doctest::Approx(1.0));

  // rotated pattern equals the original evaluated at the inversely rotated direction
  const Eigen::Quaterniond q(Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, -0.5).normalized()));
  DirectivityPattern rot = card;
  rot.coeffs = rotate_real_sh(card.coeffs, 3, q);
  for (int t = 0; t < 20; ++t) {
    const Eigen::Vector3d u = random_unit(rng);
    CHECK(rot.amplitude(SphericalPoint::from_cartesian(u)) ==
          doctest::Approx(card.amplitude(SphericalPoint::from_cartesian(q.conjugate() * u))).epsilon(1e-11));
  }
  const Eigen::Quaterniond yaw(Eigen::AngleAxisd(pi / 2, Eigen::Vector3d::UnitZ()));
  rot.coeffs = rotate_real_sh(card.coeffs, 3, yaw);
  CHECK(rot.amplitude(SphericalPoint::from_degrees(1, 90, 0)) == doctest::Approx(1.0).epsilon(1e-12));

  DirectivityPattern bad;
  bad.order = 10;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = DirectivityPattern::from_function(1, [](const Eigen::Vector3d& x) { return 1.0 - x.x(); });
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("excitations") {
  ExcitationSpec s;
  s.seconds = 1.0;
  const auto pink = make_excitation(s, 8000.0);
  CHECK(pink.size() == 8000);
  CHECK(rms(pink) == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(make_excitation(s, 8000.0) == pink);
  s.seed = 2;
  CHECK(make_excitation(s, 8000.0) != pink);
  s.kind = ExcitationKind::Tone;
  CHECK(rms(make_excitation(s, 8000.0)) == doctest::Approx(0.1).epsilon(1e-6));
  s.kind = ExcitationKind::Wav;
  s.wav = "/nonexistent/speech.wav";
  try {
    make_excitation(s, 8000.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingInput);
    CHECK(std::string(e.what()).find("/nonexistent/speech.wav") != std::string::npos);
  }
}

TEST_CASE("simulated local coefficients of a monopole") {
  const StftConfig cfg{512, 512, 128, 8000.0};
  SyntheticSource src;
  ExcitationSpec ex;
  ex.seconds = 0.2;
  ex.kind = ExcitationKind::WhiteNoise;
  src.excitation = make_excitation(ex, cfg.sample_rate);
  ChamberSpec ch = ChamberSpec::full_sphere(16, 2.0, 1);
  ch.validate();
  const auto seq = simulate_local_coeffs(src, ch, cfg);
  const Eigen::MatrixXcd x = stft(src.excitation, cfg);
  REQUIRE(seq.frames.size() == static_cast<size_t>(x.rows()));

  // field of the prescribed monopole: h_0(k r) / h_0(k R_m)
  const int tau = 5;
  for (int b : {10, 64, 200}) {
    const double k = WaveNumber::from_frequency(cfg.bin_frequency(b)).value;
    for (size_t q = 0; q < ch.mics.size(); ++q) {
      auto field = [&](const Eigen::Vector3d& p) { return hankel0(k * p.norm()) / hankel0(k * 1.5); };
      const Complex a00 = seq.frames[tau].alpha(static_cast<Eigen::Index>(q) * 4, b) / x(tau, b);
      CHECK(std::abs(a00 - std::sqrt(4 * pi) * field(ch.mics[q])) < 1e-10 * std::abs(a00));
      // first-order terms reproduce the field next to the mic
      std::mt19937_64 rng(q);
      const Eigen::Vector3d dy = 1e-4 * random_unit(rng);
      const auto sp = SphericalPoint::from_cartesian(dy);
      const auto y = complex_sh_all(1, sp.colatitude(), sp.azimuth);
      Complex local = a00 * sph_bessel_j(0, k * sp.r) * y[0];
      for (int i = 1; i < 4; ++i) local += seq.frames[tau].alpha(static_cast<Eigen::Index>(q) * 4 + i, b) / x(tau, b) * sph_bessel_j(1, k * sp.r) * y[i];
      // second-order remainder ~ (k dy)^2, first-order terms ~ k dy / 3
      CHECK(std::abs(local - field(ch.mics[q] + dy)) < std::pow(k * 1e-4, 2) * std::abs(field(ch.mics[q])));
    }
  }
  CHECK(seq.frames[tau].alpha.col(0).norm() == 0.0);

  // linearity in the excitation
  SyntheticSource twice = src;
  for (auto& v : twice.excitation) v *= 2.0;
  const auto seq2 = simulate_local_coeffs(twice, ch, cfg);
  CHECK((seq2.frames[tau].alpha - 2.0 * seq.frames[tau].alpha).norm() < 1e-12 * seq.frames[tau].alpha.norm());

  // point reflection of a mic pair about a monopole flips odd orders; mirroring y -> -y
  // maps alpha_{nu,mu} to (-1)^mu alpha_{nu,-mu} for a pattern symmetric in y
  ChamberSpec pair;
  const Eigen::Vector3d m(1.2, 0.7, -0.4);
  pair.mics = {m, -m, Eigen::Vector3d(m.x(), -m.y(), m.z()), Eigen::Vector3d(0, 0, m.norm())};
  SyntheticSource card = src;
  card.patterns = {DirectivityPattern::cardioid(2)};
  const auto sp = simulate_local_coeffs(src, pair, cfg);
  const auto sc = simulate_local_coeffs(card, pair, cfg);
  for (int b : {30, 150}) {
    const auto& a = sp.frames[tau].alpha;
    CHECK(std::abs(a(4, b) - a(0, b)) < 1e-12 * std::abs(a(0, b)));
    for (int i = 1; i < 4; ++i) CHECK(std::abs(a(4 + i, b) + a(i, b)) < 1e-12 * std::abs(a(0, b)));
    const auto& c = sc.frames[tau].alpha;
    CHECK(std::abs(c(8, b) - c(0, b)) < 1e-10 * std::abs(c(0, b)));
    CHECK(std::abs(c(8 + 2, b) - c(2, b)) < 1e-10 * std::abs(c(0, b)));
    CHECK(std::abs(c(8 + 1, b) + c(3, b)) < 1e-10 * std::abs(c(0, b)));
    CHECK(std::abs(c(8 + 3, b) + c(1, b)) < 1e-10 * std::abs(c(0, b)));
  }

  SyntheticSource far = src;
  far.trajectory = {Pose(0.0, Eigen::Vector3d(1.95, 0, 0), Eigen::Quaterniond::Identity())};
  CHECK_THROWS_AS(simulate_local_coeffs(far, ch, cfg), Error);
}

TEST_CASE("ground truth field") {
  const StftConfig cfg{4096, 4096, 1024, 8000.0};
  SyntheticSource src;
  ExcitationSpec ex;
  ex.seconds = 4.0;
  src.excitation = make_excitation(ex, cfg.sample_rate);

  const auto a = ground_truth_signal(src, Eigen::Vector3d(1.5, 0, 0), cfg);
  const auto b = ground_truth_signal(src, Eigen::Vector3d(0, 0, -1.5), cfg);
  double diff = 0.0;
  for (size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  CHECK(diff < 1e-12);
  // 1/r decay; the window is long against the extra propagation delay
  const auto c = ground_truth_signal(src, Eigen::Vector3d(0, 3.0, 0), cfg);
  CHECK(20 * std::log10(rms(a, 8000) / rms(c, 8000)) == doctest::Approx(20 * std::log10(2.0)).epsilon(0.01));
  CHECK_THROWS_AS(ground_truth_signal(src, Eigen::Vector3d(0.1, 0, 0), cfg), Error);

  // prescribed front/back and front/side levels at the prescription radius
  SyntheticSource rear = src;
  rear.patterns = {DirectivityPattern::rear_lobe(-20.0)};
  const auto f = ground_truth_signal(rear, Eigen::Vector3d(1.5, 0, 0), cfg);
  const auto r = ground_truth_signal(rear, Eigen::Vector3d(-1.5, 0, 0), cfg);
  CHECK(std::abs(20 * std::log10(rms(r) / rms(f)) + 20.0) < 0.1);
  SyntheticSource card = src;
  card.patterns = {DirectivityPattern::cardioid(3)};
  const auto cf = ground_truth_signal(card, Eigen::Vector3d(1.5, 0, 0), cfg);
  const auto cs = ground_truth_signal(card, Eigen::Vector3d(0, 1.5, 0), cfg);
  CHECK(std::abs(20 * std::log10(rms(cs) / rms(cf)) - 20 * std::log10(0.125)) < 0.1);

  // a source turned to +y presents its front there
  SyntheticSource turned = card;
  turned.trajectory = {Pose(0.0, Eigen::Vector3d::Zero(), Eigen::Quaterniond(Eigen::AngleAxisd(pi / 2, Eigen::Vector3d::UnitZ())))};
  const auto tf = ground_truth_signal(turned, Eigen::Vector3d(0, 1.5, 0), cfg);
  diff = 0.0;
  for (size_t i = 0; i < tf.size(); ++i) diff = std::max(diff, std::abs(tf[i] - cf[i]));
  CHECK(diff < 1e-10);

  // egocentric evaluation follows the pose
  const std::vector<SphericalPoint> pts{SphericalPoint::from_degrees(1.5, 0, 0)};
  const auto ego = ground_truth_egocentric(turned, pts, cfg);
  diff = 0.0;
  for (size_t i = 0; i < tf.size(); ++i) diff = std::max(diff, std::abs(ego[0][i] - cf[i]));
  CHECK(diff < 1e-10);
}

TEST_CASE("learnable dataset") {
  CHECK_THROWS_AS(make_learnable_dataset(100, 1), Error);
  const auto a = make_learnable_dataset(500, 7);
  const auto b = make_learnable_dataset(500, 7);
  CHECK(a.features.rows() == 500);
  CHECK(a.features.cols() == 8 * a.stft.bins());
  CHECK(a.targets.rows() == 500);
  CHECK(a.targets.cols() == a.bands.size() * sh_count(9));
  CHECK(a.voiced.size() == 500);
  CHECK(a.features == b.features);
  CHECK(a.targets == b.targets);
  CHECK(a.voiced == b.voiced);
  CHECK(a.features.allFinite());
  CHECK(a.targets.allFinite());
  const auto c = make_learnable_dataset(500, 8);
  CHECK(a.targets != c.targets);

  int voiced = 0;
  for (bool v : a.voiced) voiced += v;
  CHECK(voiced > 350);
  CHECK(voiced < 480);
  // targets vary, so a constant predictor has a positive error
  const Eigen::RowVectorXd mean = a.targets.colwise().mean();
  CHECK((a.targets.rowwise() - mean).cwiseAbs().mean() > 1e-3);
}

TEST_CASE("scene files") {
  const auto dir = std::filesystem::temp_directory_path() / "egodir_scene_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "scene.json");
    out << R"({"seed": 3, "stft": {"fft_size": 512, "hop": 128, "sample_rate": 8000},
              "source": {"pattern": {"kind": "cardioid", "order": 2}},
              "chamber": {"layout": "band", "count": 40},
              "excitation": {"kind": "white", "seconds": 0.5}})";
  }
  const auto s = load_scene(dir / "scene.json");
  CHECK(s.seed == 3);
  CHECK(s.chamber.mics.size() == 40);
  CHECK(s.source.order() == 2);
  CHECK(s.source.excitation.size() == 4000);
  CHECK(load_scene(dir / "scene.json", 9).seed == 9);
  {
    std::ofstream out(dir / "bad.json");
    out << R"({"excitation": {"kind": "wav", "path": "missing.wav"}})";
  }
  try {
    load_scene(dir / "bad.json");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingInput);
    CHECK(std::string(e.what()).find("missing.wav") != std::string::npos);
  }
  CHECK_THROWS_AS(load_scene(dir / "absent.json"), Error);
  std::filesystem::remove_all(dir);
}
