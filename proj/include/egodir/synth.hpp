#pragma once
// Free-field synthetic scenes with prescribed directivity: analytic forward model of the
// capture, direct ground-truth field evaluation, and the learnable stage-2 fixture.

#include <cstdint>
#include <filesystem>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "egodir/directivity.hpp"
#include "egodir/geometry.hpp"
#include "egodir/sh_kernel.hpp"
#include "egodir/soundfield.hpp"
#include "egodir/stft.hpp"

namespace egodir {

/// Matrix M with c = M b mapping real SH coefficients (ACN) to complex SH coefficients of
/// the same function.
Eigen::MatrixXcd real_to_complex_sh(int order);

/// Gauss-Legendre x uniform-azimuth product rule integrating spherical polynomials of
/// degree <= `degree` exactly. Points are unit directions; weights sum to 4 pi.
struct ProductQuadrature {
  std::vector<SphericalPoint> points;
  std::vector<double> weights;
};
ProductQuadrature product_quadrature(int degree);

/// Real SH coefficients of g(R^-1 x), i.e. the pattern rotated by `rotation`.
Eigen::VectorXd rotate_real_sh(const Eigen::VectorXd& coeffs, int order, const Eigen::Quaterniond& rotation);

/// Real-valued amplitude pattern g(direction) in the egocentric frame, as real SH
/// coefficients. The prescribed directivity factor is D = (g / g(front))^2.
struct DirectivityPattern {
  int order = 0;
  Eigen::VectorXd coeffs = Eigen::VectorXd::Constant(1, 2.0 * std::sqrt(std::numbers::pi));

  static DirectivityPattern omni();
  /// ((1 + cos angle-to-front) / 2)^order.
  static DirectivityPattern cardioid(int order);
  /// a + (1 - a)(1 + cos)/2 with a = 10^(rear_db / 20): rear D equals rear_db.
  static DirectivityPattern rear_lobe(double rear_db);
  /// Exact projection of a degree-`order` polynomial pattern.
  static DirectivityPattern from_function(int order, const std::function<double(const Eigen::Vector3d&)>& g);

  double amplitude(const SphericalPoint& direction) const;
  /// Prescribed D at an egocentric direction relative to the front (0, 0).
  double directivity(const SphericalPoint& direction) const;
  /// Throws Error(Config) if order > 9, coefficient count is wrong, or the front amplitude is ~0.
  void validate() const;
};

enum class ExcitationKind { PinkNoise, WhiteNoise, Tone, Wav };

struct ExcitationSpec {
  ExcitationKind kind = ExcitationKind::PinkNoise;
  double seconds = 10.0;
  double rms = 0.1;
  double tone_hz = 1000.0;
  std::filesystem::path wav;
  std::uint64_t seed = 1;
};

/// Throws Error(MissingInput) for an absent WAV and Error(Config) on a sample-rate mismatch.
Signal make_excitation(const ExcitationSpec& spec, double sample_rate);

struct SyntheticSource {
  std::vector<Pose> trajectory{Pose{}};
  /// Frequency-dependent patterns: patterns[i] applies below pattern_upper_hz[i]; the
  /// last pattern covers everything above. A single pattern is frequency independent.
  std::vector<DirectivityPattern> patterns{DirectivityPattern::omni()};
  std::vector<double> pattern_upper_hz;
  /// Radius at which the amplitude pattern is prescribed exactly.
  double measurement_radius = 1.5;
  /// Radius of the region around the mouth that ground-truth evaluation refuses to enter.
  double region_radius = 0.2;
  Signal excitation;

  const DirectivityPattern& pattern_for(double hz) const;
  int order() const;
};

struct ChamberSpec {
  std::vector<Eigen::Vector3d> mics;
  int mic_order = 1;

  /// Equal-area band of `count` mics over 360 deg azimuth and +-max_elevation_deg at
  /// `radius`, endpoints included.
  static ChamberSpec band(int count = 281, double radius = 2.74, double max_elevation_deg = 30.0, int mic_order = 1);
  /// Spherical Fibonacci lattice.
  static ChamberSpec full_sphere(int count, double radius, int mic_order = 1);
  /// Throws Error(Config) unless Q >= 4 and all radii are equal.
  void validate() const;
};

/// Outgoing-field coefficients c_nm(k) (complex, world frame) of the source for one pose
/// and bin frequency: the world-rotated pattern divided by h_n(k R_m).
Eigen::VectorXcd source_coeffs(const SyntheticSource& source, const Pose& pose, double hz, double speed_of_sound = 343.0);

/// Local coefficients seen by the chamber for every STFT frame of the excitation.
/// Throws Error(Domain) if the source leaves the chamber.
LocalCoeffSequence simulate_local_coeffs(const SyntheticSource& source, const ChamberSpec& chamber, const StftConfig& stft,
                                         double speed_of_sound = 343.0);

/// Direct evaluation of the source field at a fixed world point, frame by frame.
/// Throws Error(Domain) inside the source region.
Signal ground_truth_signal(const SyntheticSource& source, const Eigen::Vector3d& point, const StftConfig& stft,
                           double speed_of_sound = 343.0);

/// Same for egocentric points that follow the source pose.
MultiSignal ground_truth_egocentric(const SyntheticSource& source, std::span<const SphericalPoint> points,
                                    const StftConfig& stft, double speed_of_sound = 343.0);

/// Stage-2 fixture: a static source whose pattern is a smoothly varying mixture of basis
/// patterns, with mixture weights that also set the spectral tilt of the excitation.
struct LearnableOptions {
  StftConfig stft{512, 512, 128, 8000.0};
  int sh_order = 9;              // target order N
  double silence_fraction = 0.12;
  int chamber_mics = 32;         // full sphere, radius 2.74, V = 1
  double source_radius = 0.5;    // estimator region R
  double proxy_radius = 0.6;
  double grid_radius = 1.5;
};

struct LearnableDataset {
  StftConfig stft;
  BandTable bands;
  int sh_order = 0;
  Grid grid;                           // measurement t-design
  Eigen::MatrixXd decode;              // T on the grid
  Eigen::MatrixXd features;            // frames x (8 * bins) aggregate log PSD of the proxy array
  Eigen::MatrixXd targets;             // frames x C(N+1)^2, index j * C + c
  std::vector<bool> voiced;
  std::vector<double> frame_times;
  Eigen::MatrixXd mixture;             // frames x basis weights (latent state)
  Signal reference;                    // rendered signal at (0, 0)
  MultiSignal proxy;                   // rendered proxy-array signals
};

LearnableDataset make_learnable_dataset(int n_frames, std::uint64_t seed, const LearnableOptions& options = {});

/// Scene file (JSON): trajectory CSV reference, pattern spec, chamber, excitation, seed.
struct Scene {
  SyntheticSource source;
  ChamberSpec chamber;
  StftConfig stft;
  ExcitationSpec excitation;
  EstimatorOptions estimator;
  std::uint64_t seed = 1;
};

/// Throws Error(MissingInput) for absent referenced files and Error(Config) for invalid content.
Scene load_scene(const std::filesystem::path& path, std::uint64_t seed_override = 0);

}  // namespace egodir
