#include "egodir/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "egodir/error.hpp"

namespace egodir {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

double wrap_azimuth(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  if (a >= 2.0 * kPi) a = 0.0;
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Points and poses

SphericalPoint SphericalPoint::from_degrees(double r, double azimuth_deg, double elevation_deg) {
  return {r, wrap_azimuth(azimuth_deg * kDeg), elevation_deg * kDeg};
}

SphericalPoint SphericalPoint::from_cartesian(const Eigen::Vector3d& v) {
  const double r = v.norm();
  if (r == 0.0) return {0.0, 0.0, 0.0};
  return {r, wrap_azimuth(std::atan2(v.y(), v.x())), std::asin(std::clamp(v.z() / r, -1.0, 1.0))};
}

double SphericalPoint::colatitude() const { return kPi / 2.0 - elevation; }

Eigen::Vector3d SphericalPoint::unit() const {
  const double ce = std::cos(elevation);
  return {ce * std::cos(azimuth), ce * std::sin(azimuth), std::sin(elevation)};
}

Eigen::Vector3d SphericalPoint::cartesian() const { return r * unit(); }

Pose::Pose(double t, const Eigen::Vector3d& o, const Eigen::Quaterniond& q) : time(t), origin(o), orientation(q) {
  require(std::abs(q.norm() - 1.0) <= 1e-9, ErrorKind::Domain, "pose orientation must be a unit quaternion");
}

std::string to_string(GridKind kind) {
  switch (kind) {
    case GridKind::Regular: return "regular";
    case GridKind::TDesign: return "t-design";
    case GridKind::Proxy: return "proxy";
    case GridKind::Custom: return "custom";
  }
  return "custom";
}

// ---------------------------------------------------------------------------
// Spherical Voronoi via the convex hull of the directions

namespace {

struct Face {
  std::array<int, 3> v;
  Eigen::Vector3d normal;  // unnormalized outward normal of the perturbed hull
  bool alive = true;
};

// Incremental convex hull. Input points are tiny deterministic perturbations of the
// directions so that co-circular configurations (common on ring grids) resolve into a
// consistent triangulation; geometry is later evaluated on the unperturbed directions.
std::vector<std::array<int, 3>> hull_triangles(const std::vector<Eigen::Vector3d>& pts) {
  const int n = static_cast<int>(pts.size());
  auto orient = [&](int a, int b, int c, const Eigen::Vector3d& p) {
    return ((pts[b] - pts[a]).cross(pts[c] - pts[a])).dot(p - pts[a]);
  };

  // Initial tetrahedron.
  int i0 = 0, i1 = -1, i2 = -1, i3 = -1;
  double best = 0.0;
  for (int i = 1; i < n; ++i)
    if (double d = (pts[i] - pts[i0]).squaredNorm(); d > best) best = d, i1 = i;
  best = 0.0;
  for (int i = 1; i < n; ++i)
    if (double d = (pts[i1] - pts[i0]).cross(pts[i] - pts[i0]).squaredNorm(); d > best) best = d, i2 = i;
  best = 0.0;
  for (int i = 1; i < n; ++i)
    if (double d = std::abs(orient(i0, i1, i2, pts[i])); d > best) best = d, i3 = i;
  require(i1 >= 0 && i2 >= 0 && i3 >= 0 && best > 1e-12, ErrorKind::Domain,
          "voronoi_weights: points are coplanar or degenerate");

  const Eigen::Vector3d interior = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
  std::vector<Face> faces;
  auto add_face = [&](int a, int b, int c) {
    Eigen::Vector3d nrm = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    if (nrm.dot(pts[a] - interior) < 0.0) {
      std::swap(b, c);
      nrm = -nrm;
    }
    faces.push_back({{a, b, c}, nrm, true});
  };
  add_face(i0, i1, i2);
  add_face(i0, i1, i3);
  add_face(i0, i2, i3);
  add_face(i1, i2, i3);

  for (int p = 0; p < n; ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    std::vector<size_t> visible;
    for (size_t f = 0; f < faces.size(); ++f) {
      if (!faces[f].alive) continue;
      const double d = faces[f].normal.dot(pts[p] - pts[faces[f].v[0]]);
      if (d > 1e-15) visible.push_back(f);
    }
    require(!visible.empty(), ErrorKind::Domain, "voronoi_weights: coincident or interior point");
    std::map<std::pair<int, int>, int> edges;
    for (size_t f : visible) {
      const auto& v = faces[f].v;
      for (int e = 0; e < 3; ++e) edges[{v[e], v[(e + 1) % 3]}] += 1;
      faces[f].alive = false;
    }
    for (const auto& [edge, count] : edges) {
      if (edges.count({edge.second, edge.first}) != 0) continue;  // interior to the visible patch
      const int a = edge.first, b = edge.second;
      faces.push_back({{a, b, p}, (pts[b] - pts[a]).cross(pts[p] - pts[a]), true});
    }
    if (faces.size() > 8 * static_cast<size_t>(n)) {
      faces.erase(std::remove_if(faces.begin(), faces.end(), [](const Face& f) { return !f.alive; }), faces.end());
    }
  }
  std::vector<std::array<int, 3>> out;
  for (const auto& f : faces)
    if (f.alive) out.push_back(f.v);
  return out;
}

double solid_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const double num = a.dot(b.cross(c));
  const double den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
  return 2.0 * std::atan2(num, den);
}

}  // namespace

std::vector<double> voronoi_weights(std::span<const SphericalPoint> points) {
  const int n = static_cast<int>(points.size());
  require(n >= 4, ErrorKind::Domain, "voronoi_weights needs at least 4 points");
  std::vector<Eigen::Vector3d> dirs(points.size());
  for (size_t i = 0; i < points.size(); ++i) dirs[i] = points[i].unit();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      require((dirs[static_cast<size_t>(i)] - dirs[static_cast<size_t>(j)]).norm() > 1e-10, ErrorKind::Domain,
              "voronoi_weights: coincident points " + std::to_string(i) + " and " + std::to_string(j));

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& d : dirs) centroid += d / n;
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& d : dirs) scatter += (d - centroid) * (d - centroid).transpose();
  require(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(scatter).eigenvalues()(0) > 1e-14 * scatter.trace(), ErrorKind::Domain,
          "voronoi_weights: points are coplanar or degenerate");

  std::vector<Eigen::Vector3d> jittered(dirs.size());
  for (size_t i = 0; i < dirs.size(); ++i) {
    // Deterministic low-discrepancy offsets; magnitude 1e-7.
    const double u = std::fmod(0.6180339887498949 * static_cast<double>(i + 1), 1.0);
    const double v = std::fmod(0.7548776662466927 * static_cast<double>(i + 1), 1.0);
    const double w = std::fmod(0.5698402909980532 * static_cast<double>(i + 1), 1.0);
    jittered[i] = (dirs[i] + 1e-7 * Eigen::Vector3d(u - 0.5, v - 0.5, w - 0.5)).normalized();
  }
  const auto tris = hull_triangles(jittered);

  // Circumcenters from the exact directions, oriented like the perturbed hull.
  std::vector<std::vector<Eigen::Vector3d>> around(points.size());
  for (const auto& t : tris) {
    const auto& a = dirs[static_cast<size_t>(t[0])];
    const auto& b = dirs[static_cast<size_t>(t[1])];
    const auto& c = dirs[static_cast<size_t>(t[2])];
    Eigen::Vector3d center = (b - a).cross(c - a).normalized();
    const auto& ja = jittered[static_cast<size_t>(t[0])];
    const Eigen::Vector3d jn = (jittered[static_cast<size_t>(t[1])] - ja).cross(jittered[static_cast<size_t>(t[2])] - ja);
    if (center.dot(jn) < 0.0) center = -center;
    for (int k : t) around[static_cast<size_t>(k)].push_back(center);
  }

  std::vector<double> weights(points.size(), 0.0);
  for (size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d& p = dirs[i];
    const Eigen::Vector3d ref = std::abs(p.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
    const Eigen::Vector3d u = p.cross(ref).normalized();
    const Eigen::Vector3d v = p.cross(u);
    auto& cs = around[i];
    std::sort(cs.begin(), cs.end(), [&](const Eigen::Vector3d& x, const Eigen::Vector3d& y) {
      return std::atan2(x.dot(v), x.dot(u)) < std::atan2(y.dot(v), y.dot(u));
    });
    double area = 0.0;
    for (size_t k = 0; k < cs.size(); ++k) area += solid_angle(p, cs[k], cs[(k + 1) % cs.size()]);
    weights[i] = area;
  }
  return weights;
}

// ---------------------------------------------------------------------------
// Grids

Grid regular_grid(double radius, double step_deg) {
  require(radius > 0.0, ErrorKind::Config, "regular_grid: radius must be positive");
  const double az_steps = 360.0 / step_deg;
  const double el_steps = 180.0 / step_deg;
  require(step_deg > 0.0 && std::abs(az_steps - std::round(az_steps)) < 1e-9 &&
              std::abs(el_steps - std::round(el_steps)) < 1e-9,
          ErrorKind::Config, "regular_grid: step must divide both 360 and 180 degrees");
  Grid g;
  g.kind = GridKind::Regular;
  g.radius = radius;
  const int n_az = static_cast<int>(std::lround(az_steps));
  const int n_el = static_cast<int>(std::lround(el_steps));
  g.points.push_back(SphericalPoint::from_degrees(radius, 0.0, -90.0));
  for (int e = 1; e < n_el; ++e) {
    const double el = -90.0 + e * step_deg;
    for (int a = 0; a < n_az; ++a) g.points.push_back(SphericalPoint::from_degrees(radius, a * step_deg, el));
  }
  g.points.push_back(SphericalPoint::from_degrees(radius, 0.0, 90.0));
  g.weights = voronoi_weights(g.points);
  return g;
}

std::filesystem::path default_tdesign_path() {
  if (const char* env = std::getenv("EGODIR_DATA_DIR")) return std::filesystem::path(env) / "tdesign_144.csv";
#ifdef EGODIR_DATA_DIR
  return std::filesystem::path(EGODIR_DATA_DIR) / "tdesign_144.csv";
#else
  return std::filesystem::path("data") / "tdesign_144.csv";
#endif
}

Grid t_design_grid(double radius, const std::filesystem::path& asset) {
  require(radius > 0.0, ErrorKind::Config, "t_design_grid: radius must be positive");
  std::ifstream in(asset, std::ios::binary);
  if (!in) fail(ErrorKind::MissingInput, "t-design asset not found: " + asset.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned long long h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  require(h == kTDesignChecksum, ErrorKind::Config, "t-design asset checksum mismatch: " + asset.string());

  Grid g;
  g.kind = GridKind::TDesign;
  g.radius = radius;
  std::istringstream lines(bytes);
  std::string line;
  std::getline(lines, line);
  require(line.rfind("azimuth_deg,elevation_deg", 0) == 0, ErrorKind::Config, "t-design asset: bad header");
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, ErrorKind::Config, "t-design asset: malformed row");
    g.points.push_back(SphericalPoint::from_degrees(radius, std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))));
  }
  require(g.points.size() == 144, ErrorKind::Config, "t-design asset must contain 144 rows");
  g.weights.assign(g.points.size(), 4.0 * kPi / static_cast<double>(g.points.size()));
  return g;
}

Grid proxy_array(double rho) {
  require(rho > 0.0, ErrorKind::Config, "proxy_array: radius must be positive");
  static constexpr std::array<std::array<double, 2>, 8> kCoords{{
      {60.0, 0.0}, {300.0, 0.0}, {30.0, 5.0}, {330.0, 5.0}, {10.0, 10.0}, {0.0, 10.0}, {0.0, 5.0}, {350.0, 10.0},
  }};
  Grid g;
  g.kind = GridKind::Proxy;
  g.radius = rho;
  for (const auto& [az, el] : kCoords) g.points.push_back(SphericalPoint::from_degrees(rho, az, el));
  return g;
}

Grid custom_grid(std::vector<SphericalPoint> points, bool with_weights) {
  require(!points.empty(), ErrorKind::Config, "custom_grid: no points");
  Grid g;
  g.kind = GridKind::Custom;
  g.radius = points.front().r;
  for (const auto& p : points)
    require(std::abs(p.r - g.radius) <= 1e-9 * std::max(1.0, g.radius), ErrorKind::Config, "custom_grid: radii differ");
  g.points = std::move(points);
  if (with_weights) g.weights = voronoi_weights(g.points);
  return g;
}

// ---------------------------------------------------------------------------
// Frames

Eigen::Vector3d egocentric_to_world(const Pose& pose, const SphericalPoint& p) {
  return pose.origin + pose.orientation * p.cartesian();
}

SphericalPoint world_to_egocentric(const Pose& pose, const Eigen::Vector3d& world) {
  return SphericalPoint::from_cartesian(pose.orientation.conjugate() * (world - pose.origin));
}

std::vector<bool> valid_zone_mask(std::span<const Eigen::Vector3d> real_mics, const Pose& pose, const Grid& grid) {
  require(!real_mics.empty(), ErrorKind::Config, "valid_zone_mask needs at least one real microphone");
  auto elevation_of = [&](const Eigen::Vector3d& d) {
    const double r = d.norm();
    return r == 0.0 ? 0.0 : std::asin(std::clamp(d.z() / r, -1.0, 1.0));
  };
  double lo = kPi, hi = -kPi;
  for (const auto& m : real_mics) {
    const double el = elevation_of(m - pose.origin);
    lo = std::min(lo, el);
    hi = std::max(hi, el);
  }
  constexpr double kTol = 1e-12;
  std::vector<bool> mask(grid.size());
  for (size_t g = 0; g < grid.size(); ++g) {
    const double el = elevation_of(pose.orientation * grid.points[g].unit());
    mask[g] = el >= lo - kTol && el <= hi + kTol;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Pose files

std::vector<Pose> read_pose_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingInput, "pose file not found: " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "t_sec,x,y,z,qw,qx,qy,qz", ErrorKind::Config, "pose file header must be t_sec,x,y,z,qw,qx,qy,qz");
  std::vector<Pose> poses;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::array<double, 8> v{};
    std::istringstream row(line);
    std::string cell;
    for (double& x : v) {
      require(static_cast<bool>(std::getline(row, cell, ',')), ErrorKind::Config, "pose file: short row: " + line);
      x = std::stod(cell);
    }
    Eigen::Quaterniond q(v[4], v[5], v[6], v[7]);
    require(std::abs(q.norm() - 1.0) < 1e-3, ErrorKind::Config, "pose file: quaternion far from unit norm");
    q.normalize();
    poses.emplace_back(v[0], Eigen::Vector3d(v[1], v[2], v[3]), q);
  }
  require(!poses.empty(), ErrorKind::Config, "pose file has no rows: " + path.string());
  for (size_t i = 1; i < poses.size(); ++i)
    require(poses[i].time > poses[i - 1].time, ErrorKind::Config, "pose file times must increase");
  return poses;
}

void write_pose_csv(const std::filesystem::path& path, std::span<const Pose> poses) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::MissingInput, "cannot write pose file: " + path.string());
  out.precision(17);
  out << "t_sec,x,y,z,qw,qx,qy,qz\n";
  for (const auto& p : poses) {
    const auto& q = p.orientation;
    out << p.time << ',' << p.origin.x() << ',' << p.origin.y() << ',' << p.origin.z() << ',' << q.w() << ','
        << q.x() << ',' << q.y() << ',' << q.z() << '\n';
  }
}

Pose interpolate_pose(std::span<const Pose> poses, double t) {
  require(!poses.empty(), ErrorKind::Config, "interpolate_pose: empty pose series");
  if (t <= poses.front().time) return poses.front();
  if (t >= poses.back().time) return poses.back();
  const auto it = std::upper_bound(poses.begin(), poses.end(), t, [](double v, const Pose& p) { return v < p.time; });
  const Pose& b = *it;
  const Pose& a = *(it - 1);
  const double u = (t - a.time) / (b.time - a.time);
  Eigen::Quaterniond q = a.orientation.slerp(u, b.orientation);
  q.normalize();
  return Pose(t, (1.0 - u) * a.origin + u * b.origin, q);
}

std::vector<Pose> poses_at(std::span<const Pose> poses, std::span<const double> times) {
  std::vector<Pose> out;
  out.reserve(times.size());
  for (double t : times) out.push_back(interpolate_pose(poses, t));
  return out;
}

}  // namespace egodir
