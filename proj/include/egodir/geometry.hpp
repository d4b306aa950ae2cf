#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace egodir {

/// Point in (radius, azimuth, elevation). Azimuth is measured from +x towards +y,
/// elevation from the xy-plane towards +z. The egocentric facing direction is +x.
struct SphericalPoint {
  double r = 1.0;
  double azimuth = 0.0;    // [0, 2pi)
  double elevation = 0.0;  // [-pi/2, pi/2]

  static SphericalPoint from_degrees(double r, double azimuth_deg, double elevation_deg);
  static SphericalPoint from_cartesian(const Eigen::Vector3d& v);

  double colatitude() const;
  Eigen::Vector3d cartesian() const;
  Eigen::Vector3d unit() const;
};

/// Mouth pose at a given time. The orientation rotates egocentric vectors into the world frame.
struct Pose {
  double time = 0.0;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  Pose() = default;
  /// Throws Error(Domain) if the quaternion norm differs from 1 by more than 1e-9.
  Pose(double t, const Eigen::Vector3d& o, const Eigen::Quaterniond& q);

  static Pose identity() { return {}; }
};

enum class GridKind { Regular, TDesign, Proxy, Custom };

std::string to_string(GridKind kind);

/// Points at a common radius with quadrature weights in steradians. Weights are empty
/// for grids that are not quadratures of the full sphere (the proxy array).
struct Grid {
  GridKind kind = GridKind::Custom;
  double radius = 1.0;
  std::vector<SphericalPoint> points;
  std::vector<double> weights;

  size_t size() const { return points.size(); }
};

/// Rings every `step_deg` degrees in azimuth at elevations -(90-step)..(90-step), plus both
/// poles (stored once, azimuth 0). Weights are spherical Voronoi areas.
Grid regular_grid(double radius, double step_deg);

/// Location of the bundled 144-point design table (azimuth_deg,elevation_deg).
std::filesystem::path default_tdesign_path();

/// 64-bit FNV-1a of the pinned asset bytes.
inline constexpr unsigned long long kTDesignChecksum = 0x214d2a958b43136bULL;

/// 144-point spherical design with uniform weights 4pi/144. Throws Error(MissingInput)
/// when the asset is absent and Error(Config) when its checksum does not match.
Grid t_design_grid(double radius, const std::filesystem::path& asset = default_tdesign_path());

/// The eight near-mouth proxy positions at radius rho.
Grid proxy_array(double rho);

/// Custom grid from explicit points (common radius taken from the first point); weights
/// from voronoi_weights() when `with_weights` is set.
Grid custom_grid(std::vector<SphericalPoint> points, bool with_weights);

/// Spherical Voronoi cell areas of the point directions (radii ignored). Needs at least
/// four non-coplanar, pairwise distinct directions.
std::vector<double> voronoi_weights(std::span<const SphericalPoint> points);

Eigen::Vector3d egocentric_to_world(const Pose& pose, const SphericalPoint& p);
SphericalPoint world_to_egocentric(const Pose& pose, const Eigen::Vector3d& world);

/// True where a grid point, seen from the pose origin in world coordinates, lies within the
/// elevation span of the real microphones seen from the same origin.
std::vector<bool> valid_zone_mask(std::span<const Eigen::Vector3d> real_mics, const Pose& pose, const Grid& grid);

/// Pose time series, CSV header `t_sec,x,y,z,qw,qx,qy,qz`. Quaternions within 1e-3 of unit
/// norm are renormalized; anything further off is rejected.
std::vector<Pose> read_pose_csv(const std::filesystem::path& path);
void write_pose_csv(const std::filesystem::path& path, std::span<const Pose> poses);

/// Linear position / slerp orientation interpolation, clamped at both ends. Poses must be
/// sorted by time.
Pose interpolate_pose(std::span<const Pose> poses, double t);
std::vector<Pose> poses_at(std::span<const Pose> poses, std::span<const double> times);

}  // namespace egodir
