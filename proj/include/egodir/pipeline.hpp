#pragma once
// Glue shared by the command-line tool: scene rendering, stage-2 dataset assembly,
// polar slices and SVG output.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "egodir/directivity.hpp"
#include "egodir/features.hpp"
#include "egodir/geometry.hpp"
#include "egodir/soundfield.hpp"
#include "egodir/synth.hpp"

namespace egodir {

struct RenderOptions {
  double grid_radius = 1.5;
  bool tdesign = true;           // false: regular grid with `grid_step_deg`
  double grid_step_deg = 10.0;
  double proxy_radius = 0.6;
  bool mute = true;              // -60 dB outside the valid reconstruction zone
};

Grid measurement_grid(const RenderOptions& options);

/// Stage 1 on a synthetic scene: simulated capture, global estimate, and virtual mics on
/// the measurement grid, the proxy array and the reference direction (0, 0).
struct RenderedScene {
  StftConfig stft;
  Grid grid;
  std::vector<Pose> frame_poses;
  GlobalCoeffSequence global;
  MultiSignal grid_signals;
  MultiSignal proxy;
  Signal reference;
  double muted_fraction = 0.0;   // share of (mask frame, point) pairs muted
};

RenderedScene render_scene(const Scene& scene, const RenderOptions& options);

/// Rendering half of render_scene for an existing global estimate. `trajectory` is the
/// source pose series, `real_mics` the chamber used for the valid-zone mask.
RenderedScene render_global(GlobalCoeffSequence global, std::span<const Pose> trajectory,
                            std::span<const Eigen::Vector3d> real_mics, size_t length, const RenderOptions& options);

/// Rows of (features, targets) with their split.
struct Stage2Data {
  StftConfig stft;
  BandTable bands;
  int sh_order = 9;
  Grid grid;
  Eigen::MatrixXd decode;
  Eigen::MatrixXd features;   // aggregate log PSD of the proxy signals
  Eigen::MatrixXd targets;    // SH coefficients of D, index j * C + c
  std::vector<bool> voiced;
  std::vector<double> frame_times;
  std::vector<int> recording; // per row
  std::vector<int> copy;      // per row: 0 clean, k > 0 the k-th augmentation
  DatasetSplit split;
  Signal reference;           // clean reference of the first recording
  Eigen::MatrixXd timeline_features;  // every frame of the first recording, in time order
  Eigen::MatrixXd timeline_targets;
};

/// Features and targets of one recording; voicing from the reference.
Stage2Data stage2_from_signals(const MultiSignal& proxy, const MultiSignal& grid_signals, std::span<const double> reference,
                               const Grid& grid, const BandTable& bands, const StftConfig& stft, int order);

/// Every manifest recording is rendered and split by time. Each training frame also
/// enters once per augmentation SNR, with features and targets recomputed from noisy
/// proxy, grid and reference audio.
Stage2Data build_manifest_dataset(const DatasetManifest& manifest, const RenderOptions& options, int order,
                                  std::uint64_t seed);

/// Learnable fixture split by time into train/validation windows.
Stage2Data stage2_from_learnable(const LearnableDataset& ds, double train_seconds, double validation_seconds);

/// DI in dB on `count` equatorial directions (azimuth k * 360 / count) from SH
/// coefficients of D, (order+1)^2 x bands; D floored at 1e-6.
Eigen::MatrixXd ring_di_db(const Eigen::MatrixXd& coeffs, int count = 360);

/// DI in dB on an azimuth x elevation raster (step in degrees), one band.
void write_contour_csv(const std::filesystem::path& path, const Eigen::VectorXd& coeffs, double step_deg = 5.0);

/// `azimuth_deg,<band Hz>...` rows.
void write_ring_csv(const std::filesystem::path& path, const Eigen::MatrixXd& di_db, const BandTable& bands);

struct RingTable {
  std::vector<double> azimuth_deg;
  std::vector<double> band_hz;
  Eigen::MatrixXd di_db;  // azimuths x bands
};
/// Throws Error(MissingInput) when absent, Error(Config) when malformed.
RingTable read_ring_csv(const std::filesystem::path& path);

struct PolarSeries {
  std::string label;
  std::vector<double> azimuth_deg;
  std::vector<double> di_db;
  std::string color;
  bool dashed = false;
};

/// Polar plot, radius linear in dB between `min_db` and `max_db`, azimuth 0 to the right
/// and increasing counter-clockwise.
void write_polar_svg(const std::filesystem::path& path, const std::string& title, const std::vector<PolarSeries>& series,
                     double min_db = -30.0, double max_db = 10.0);

}  // namespace egodir
