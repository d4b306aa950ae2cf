#pragma once
// Global soundfield estimation from local (ambisonic) microphone coefficients and
// virtual-microphone rendering along egocentric trajectories.
//
// The field outside a source region of radius R about the world origin is
//   p(x, k) = sum_{n<=N} sum_m beta_nm(k) h_n(k|x|) Y_n^m(x/|x|),
// and a V-th order microphone at x_q observes its local regular expansion
//   alpha_{nu mu} = sum_{n,m} beta_nm S_{n nu}^{m mu}(x_q, k).
// Coefficient vectors use complex harmonics in ACN order.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "egodir/geometry.hpp"
#include "egodir/sh_kernel.hpp"
#include "egodir/stft.hpp"

namespace egodir {

/// Stacked translation matrix, rows (q, nu, mu) mic-major with ACN inside each mic,
/// columns (n, m) in ACN order: Q(V+1)^2 x (N+1)^2. Mic positions are relative to the
/// expansion origin of the outgoing field.
Eigen::MatrixXcd translation_matrix(std::span<const Eigen::Vector3d> mics, WaveNumber k, int order, int mic_order);

/// Thread-safe memo of translation matrices keyed on (geometry, k, N, V).
class TranslationCache {
 public:
  std::shared_ptr<const Eigen::MatrixXcd> get(std::span<const Eigen::Vector3d> mics, WaveNumber k, int order, int mic_order);
  size_t size() const;

 private:
  using Key = std::tuple<std::vector<double>, double, int, int>;
  mutable std::mutex mutex_;
  std::map<Key, std::shared_ptr<const Eigen::MatrixXcd>> entries_;
};

/// Local coefficients of all real microphones for one STFT frame.
struct LocalCoeffFrame {
  int frame = 0;
  Eigen::MatrixXcd alpha;  // Q(V+1)^2 x bins
};

struct LocalCoeffSequence {
  StftConfig stft;
  int mic_order = 1;
  std::vector<Eigen::Vector3d> mics;
  std::vector<LocalCoeffFrame> frames;

  void save(const std::filesystem::path& path) const;
  static LocalCoeffSequence load(const std::filesystem::path& path);
};

/// Estimated global coefficients for one frame. Bins below the minimum frequency carry
/// order -1 and no coefficients.
struct GlobalCoeffFrame {
  int frame = 0;
  double radius = 0.0;
  std::vector<int> orders;              // per bin
  std::vector<Eigen::VectorXcd> beta;   // per bin, (orders[b]+1)^2 entries
  std::vector<double> residual;         // per bin, ||S beta - alpha|| / ||alpha||
};

struct GlobalCoeffSequence {
  StftConfig stft;
  double speed_of_sound = 343.0;
  std::vector<GlobalCoeffFrame> frames;

  void save(const std::filesystem::path& path) const;
  static GlobalCoeffSequence load(const std::filesystem::path& path);
};

struct EstimatorOptions {
  double radius = 0.5;           // source region radius R
  double speed_of_sound = 343.0;
  double min_frequency = 50.0;   // bins below are zero
  double tikhonov = 1e-4;        // lambda relative to the largest singular value
  bool cap_order = true;         // cap N(k) at the largest solvable order
};

/// Per-bin regularized inverse of the stacked addition-theorem system.
class GlobalEstimator {
 public:
  GlobalEstimator(std::vector<Eigen::Vector3d> mics, int mic_order, StftConfig stft, EstimatorOptions options,
                  TranslationCache* cache = nullptr);

  int bins() const { return stft_.bins(); }
  int order_for_bin(int bin) const { return orders_[static_cast<size_t>(bin)]; }
  /// Largest N with (N+1)^2 <= Q(V+1)^2.
  int solvable_order() const { return solvable_; }
  /// Untruncated N(k) = ceil(k e R / 2) for a bin (0 for bins below min_frequency).
  int truncation_order_for_bin(int bin) const;
  /// Condition number of the translation matrix for a bin (1 for empty bins).
  double condition_number(int bin) const { return conditions_[static_cast<size_t>(bin)]; }

  GlobalCoeffFrame estimate(const LocalCoeffFrame& local) const;
  /// Regularized solve for a single bin.
  Eigen::VectorXcd solve_bin(int bin, const Eigen::VectorXcd& alpha) const;
  const Eigen::MatrixXcd& translation(int bin) const { return *forward_[static_cast<size_t>(bin)]; }
  const Eigen::MatrixXcd& inverse(int bin) const { return inverse_[static_cast<size_t>(bin)]; }
  const EstimatorOptions& options() const { return options_; }
  const StftConfig& stft() const { return stft_; }

 private:
  std::vector<Eigen::Vector3d> mics_;
  int mic_order_;
  StftConfig stft_;
  EstimatorOptions options_;
  int solvable_ = 0;
  std::vector<int> orders_;
  std::vector<double> conditions_;
  std::vector<std::shared_ptr<const Eigen::MatrixXcd>> forward_;
  std::vector<Eigen::MatrixXcd> inverse_;
};

/// Estimates every frame of a local-coefficient sequence.
GlobalCoeffSequence estimate_global_coeffs(const LocalCoeffSequence& local, const EstimatorOptions& options);

/// Row vector r with p(x) = r . beta for a field of order N at world position x.
Eigen::RowVectorXcd field_row(const Eigen::Vector3d& x, WaveNumber k, int order);

/// Renders one virtual microphone per trajectory. trajectories[i][tau] is the egocentric
/// position of mic i in frame tau; poses[tau] maps it to the world. Throws Error(Domain)
/// if a position falls inside the source region.
MultiSignal render_virtual_mics(const GlobalCoeffSequence& global, std::span<const std::vector<SphericalPoint>> trajectories,
                                std::span<const Pose> poses, size_t length);

/// Single-trajectory convenience wrapper.
Signal render_virtual_mic(const GlobalCoeffSequence& global, std::span<const SphericalPoint> trajectory,
                          std::span<const Pose> poses, size_t length);

/// Same static egocentric grid in every frame.
MultiSignal render_grid(const GlobalCoeffSequence& global, const Grid& grid, std::span<const Pose> poses, size_t length);

/// Valid-zone masks on a fixed frame grid.
struct MaskTimeline {
  int frame_samples = 1104;             // 23 ms at 48 kHz
  std::vector<std::vector<bool>> masks; // [frame][point]; true = keep
};

inline constexpr double kMuteGain = 0.001;  // -60 dB

/// Recomputes valid_zone_mask at the center of every mask frame.
MaskTimeline mask_timeline(std::span<const Eigen::Vector3d> real_mics, std::span<const Pose> poses, const Grid& grid,
                           double sample_rate, size_t length, double frame_seconds = 0.023);

/// Scales masked frames by -60 dB; gain changes ramp linearly over `crossfade_seconds`
/// starting at the mask frame boundary.
MultiSignal apply_muting(const MultiSignal& signals, const MaskTimeline& masks, double sample_rate,
                         double crossfade_seconds = 0.005);

}  // namespace egodir
