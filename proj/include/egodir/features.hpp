#pragma once
// Stage-2 inputs: voiced-frame selection, noise augmentation, aggregate PSD features,
// truncated-SVD compression and dataset partitioning.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "egodir/stft.hpp"

namespace egodir {

/// Envelope-based active level detector.
struct VoicingOptions {
  double envelope_seconds = 0.03;
  double hangover_seconds = 0.2;
  double margin_db = 15.9;       // activity threshold below the active level
  double voiced_range_db = 20.0; // frames within this range of the active level are voiced
};

/// Active level in dB (mean-square power over active samples); -inf for an all-zero signal.
/// Fixed point of: active = samples whose smoothed power (with hangover) is within
/// margin_db of the level computed over the active samples.
double active_speech_level(std::span<const double> signal, double sample_rate, const VoicingOptions& options = {});

/// One flag per STFT frame: frame RMS (samples inside the frame's window) >= active level - 20 dB.
std::vector<bool> voiced_mask(std::span<const double> signal, const StftConfig& stft, const VoicingOptions& options = {});

/// Adds white Gaussian noise scaled so the realized SNR over the full signal equals snr_db.
/// Throws Error(Domain) for a zero-power signal.
Signal awgn_augment(std::span<const double> signal, double snr_db, std::uint64_t seed);

inline constexpr double kLogFloorDb = -120.0;

/// Frames x (channels * bins): per channel 10 log10 of c_k |X_k|^2 / N (Hann window),
/// floored at -120 dB, channels concatenated in order.
Eigen::MatrixXd aggregate_psd(const MultiSignal& channels, const StftConfig& stft);

/// Linear-domain PSD of one channel (frames x bins); sums to the windowed frame energy.
Eigen::MatrixXd linear_psd(std::span<const double> signal, const StftConfig& stft);

/// Mean-centred truncated SVD basis.
struct SvdBasis {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd basis;            // dims x rank, orthonormal columns
  Eigen::VectorXd singular_values;  // all, descending
  double explained = 0.0;           // achieved explained-variance ratio

  int rank() const { return static_cast<int>(basis.cols()); }
  bool fitted() const { return basis.size() > 0; }
  void save(const std::filesystem::path& path) const;
  static SvdBasis load(const std::filesystem::path& path);
};

/// Fixed rank. Throws Error(Config) if rank exceeds min(samples, dims).
SvdBasis svd_fit(const Eigen::MatrixXd& x_train, int rank);
/// Smallest rank reaching the explained-variance target.
SvdBasis svd_fit_variance(const Eigen::MatrixXd& x_train, double target);

/// (X - mean) basis. Throws Error(Config) when the basis is not fitted.
Eigen::MatrixXd svd_project(const SvdBasis& basis, const Eigen::MatrixXd& x);
Eigen::MatrixXd svd_reconstruct(const SvdBasis& basis, const Eigen::MatrixXd& z);

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> validation;
};

/// Voiced frames with time < train_seconds go to training, voiced frames with time >=
/// total_seconds - validation_seconds go to validation. Throws Error(Config) if the two
/// windows overlap.
DatasetSplit split_by_time(std::span<const double> frame_times, const std::vector<bool>& voiced, double total_seconds,
                           double train_seconds = 50.0, double validation_seconds = 10.0);

/// Dataset manifest (JSON): recordings, split boundaries, augmentation.
struct DatasetManifest {
  struct Recording {
    std::string name;
    std::filesystem::path scene;  // synthetic scene or measurement directory
    std::filesystem::path poses;
  };
  std::vector<Recording> recordings;
  double train_seconds = 50.0;
  double validation_seconds = 10.0;
  std::vector<double> augment_snr_db{10.0, 20.0};
  std::vector<std::uint64_t> augment_seeds{101, 102};

  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

}  // namespace egodir
