#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>

#include "egodir/error.hpp"
#include "egodir/geometry.hpp"

using namespace egodir;
using std::numbers::pi;

namespace {
double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

Eigen::Quaterniond random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}
}  // namespace

TEST_CASE("regular grid counts and weights") {
  const Grid g = regular_grid(1.5, 10.0);
  CHECK(g.size() == 614);
  CHECK(sum(g.weights) == doctest::Approx(4 * pi).epsilon(1e-9));
  CHECK(regular_grid(1.0, 90.0).size() == 6);
  CHECK_THROWS_AS(regular_grid(1.0, 7.0), Error);
  // pole cells (first/last) smaller than equatorial cells
  const size_t eq = 1 + 8 * 36;  // first point of the 0 deg ring
  CHECK(std::abs(g.points[eq].elevation) < 1e-12);
  CHECK(g.weights.front() < g.weights[eq]);
}

TEST_CASE("Voronoi weights agree with Monte-Carlo nearest-neighbour areas") {
  const Grid g = regular_grid(1.0, 10.0);
  Eigen::MatrixXd dirs(3, static_cast<Eigen::Index>(g.size()));
  for (size_t i = 0; i < g.size(); ++i) dirs.col(static_cast<Eigen::Index>(i)) = g.points[i].unit();
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n;
  std::vector<long> hits(g.size(), 0);
  const long samples = 1'000'000;
  for (long s = 0; s < samples; ++s) {
    Eigen::Vector3d v(n(rng), n(rng), n(rng));
    v.normalize();
    Eigen::Index best;
    (dirs.transpose() * v).maxCoeff(&best);
    ++hits[static_cast<size_t>(best)];
  }
  // Every cell within 5 sigma of its binomial count; latitude rings with enough samples
  // for a 1% test (sigma < 0.4%) agree to 1%.
  for (size_t i = 0; i < g.size(); ++i) {
    const double p = g.weights[i] / (4 * pi);
    const double sigma = std::sqrt(samples * p * (1 - p));
    CHECK(std::abs(hits[i] - samples * p) < 5 * sigma);
  }
  CHECK(hits.front() < hits[1 + 8 * 36]);
  int rings_checked = 0;
  for (int ring = 0; ring < 17; ++ring) {
    double mc = 0.0, w = 0.0;
    for (size_t i = 1 + 36 * static_cast<size_t>(ring); i < 1 + 36 * static_cast<size_t>(ring + 1); ++i) {
      mc += 4 * pi * static_cast<double>(hits[i]) / samples;
      w += g.weights[i];
    }
    if (w / (4 * pi) * samples < 62500) continue;
    ++rings_checked;
    CHECK(std::abs(mc - w) / w < 0.01);
  }
  CHECK(rings_checked >= 9);
}

TEST_CASE("Voronoi weights of an octahedron and degenerate input") {
  std::vector<SphericalPoint> pts;
  for (auto v : {Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(-1, 0, 0), Eigen::Vector3d(0, 1, 0), Eigen::Vector3d(0, -1, 0),
                 Eigen::Vector3d(0, 0, 1), Eigen::Vector3d(0, 0, -1)})
    pts.push_back(SphericalPoint::from_cartesian(v));
  for (double w : voronoi_weights(pts)) CHECK(w == doctest::Approx(4 * pi / 6).epsilon(1e-12));
  pts.push_back(pts.front());
  CHECK_THROWS_AS(voronoi_weights(pts), Error);
  std::vector<SphericalPoint> ring;
  for (int i = 0; i < 8; ++i) ring.push_back(SphericalPoint::from_degrees(1.0, 45.0 * i, 0.0));
  CHECK_THROWS_AS(voronoi_weights(ring), Error);
}

TEST_CASE("t-design and proxy array") {
  const Grid t = t_design_grid(1.5);
  CHECK(t.size() == 144);
  CHECK(sum(t.weights) == doctest::Approx(4 * pi).epsilon(1e-12));
  for (double w : t.weights) CHECK(w == t.weights.front());
  CHECK_THROWS_AS(t_design_grid(1.0, "/nonexistent/tdesign.csv"), Error);

  const Grid p = proxy_array(0.6);
  CHECK(p.size() == 8);
  CHECK(p.weights.empty());
  for (const auto& pt : p.points) {
    CHECK(pt.r == 0.6);
    const double el = pt.elevation * 180 / pi;
    CHECK((std::abs(el) < 1e-9 || std::abs(el - 5) < 1e-9 || std::abs(el - 10) < 1e-9));
    double az = pt.azimuth * 180 / pi;
    if (az > 180) az -= 360;
    CHECK(std::abs(az) <= 60 + 1e-9);
  }
}

TEST_CASE("egocentric transforms") {
  const auto p = SphericalPoint::from_degrees(1.3, 40.0, 20.0);
  CHECK((egocentric_to_world(Pose::identity(), p) - p.cartesian()).norm() < 1e-15);
  const Pose yaw(0.0, Eigen::Vector3d::Zero(), Eigen::Quaterniond(Eigen::AngleAxisd(pi / 2, Eigen::Vector3d::UnitZ())));
  const auto w = SphericalPoint::from_cartesian(egocentric_to_world(yaw, p));
  CHECK(w.azimuth * 180 / pi == doctest::Approx(130.0).epsilon(1e-12));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Pose pose(0.0, Eigen::Vector3d(u(rng), u(rng), u(rng)), random_rotation(rng));
    const Eigen::Vector3d x(u(rng), u(rng), u(rng));
    worst = std::max(worst, (egocentric_to_world(pose, world_to_egocentric(pose, x)) - x).norm());
  }
  CHECK(worst < 1e-9);
  CHECK_THROWS_AS(Pose(0.0, Eigen::Vector3d::Zero(), Eigen::Quaterniond(1.01, 0, 0, 0)), Error);
}

TEST_CASE("valid zone mask") {
  std::vector<Eigen::Vector3d> mics;
  for (int i = 0; i < 12; ++i)
    for (double el : {-30.0, 0.0, 30.0}) mics.push_back(SphericalPoint::from_degrees(2.74, 30.0 * i, el).cartesian());
  const Grid g = custom_grid({SphericalPoint::from_degrees(1.5, 0, 45), SphericalPoint::from_degrees(1.5, 0, 25),
                              SphericalPoint::from_degrees(1.5, 0, -25), SphericalPoint::from_degrees(1.5, 90, 0)},
                             false);
  auto m = valid_zone_mask(mics, Pose::identity(), g);
  CHECK(m == std::vector<bool>{false, true, true, true});

  // head tilted up 20 deg: a point at +25 ego elevation sits at +45 world elevation
  const Pose tilt(0.0, Eigen::Vector3d::Zero(), Eigen::Quaterniond(Eigen::AngleAxisd(-20 * pi / 180, Eigen::Vector3d::UnitY())));
  const Grid probe = custom_grid({SphericalPoint::from_degrees(1.5, 0, 9), SphericalPoint::from_degrees(1.5, 0, 11),
                                  SphericalPoint::from_degrees(1.5, 0, -49), SphericalPoint::from_degrees(1.5, 0, -51)},
                                 false);
  m = valid_zone_mask(mics, tilt, probe);
  CHECK(m == std::vector<bool>{true, false, true, false});

  // full-sphere coverage masks nothing
  const Grid cover = t_design_grid(2.74);
  std::vector<Eigen::Vector3d> full;
  for (const auto& p : cover.points) full.push_back(p.cartesian());
  const Grid t = t_design_grid(1.5);
  const auto all = valid_zone_mask(full, tilt, t);
  CHECK(std::count(all.begin(), all.end(), true) == 144);

  // monotone in the mic elevation span
  for (double span = 5; span < 85; span += 5) {
    std::vector<Eigen::Vector3d> a, b;
    for (int i = 0; i < 8; ++i) {
      a.push_back(SphericalPoint::from_degrees(2.74, 45.0 * i, span).cartesian());
      a.push_back(SphericalPoint::from_degrees(2.74, 45.0 * i, -span).cartesian());
      b.push_back(SphericalPoint::from_degrees(2.74, 45.0 * i, span + 5).cartesian());
      b.push_back(SphericalPoint::from_degrees(2.74, 45.0 * i, -span - 5).cartesian());
    }
    const auto ma = valid_zone_mask(a, tilt, t), mb = valid_zone_mask(b, tilt, t);
    for (size_t i = 0; i < ma.size(); ++i) CHECK((!ma[i] || mb[i]));
  }
}

TEST_CASE("pose csv round trip and interpolation") {
  const auto path = std::filesystem::temp_directory_path() / "egodir_pose_test.csv";
  std::vector<Pose> poses{Pose(0.0, Eigen::Vector3d(0, 0, 0), Eigen::Quaterniond::Identity()),
                          Pose(1.0, Eigen::Vector3d(1, 2, 0), Eigen::Quaterniond(Eigen::AngleAxisd(pi / 2, Eigen::Vector3d::UnitZ())))};
  write_pose_csv(path, poses);
  const auto back = read_pose_csv(path);
  REQUIRE(back.size() == 2);
  CHECK((back[1].origin - poses[1].origin).norm() < 1e-12);
  const Pose mid = interpolate_pose(back, 0.5);
  CHECK((mid.origin - Eigen::Vector3d(0.5, 1, 0)).norm() < 1e-12);
  CHECK(mid.orientation.angularDistance(Eigen::Quaterniond(Eigen::AngleAxisd(pi / 4, Eigen::Vector3d::UnitZ()))) < 1e-12);
  CHECK((interpolate_pose(back, 7.0).origin - poses[1].origin).norm() < 1e-12);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_pose_csv(path), Error);
}
