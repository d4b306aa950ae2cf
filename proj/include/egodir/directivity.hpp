#pragma once
// 1/3-octave short-time power spectra, directivity factors and their real-SH representation.

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "egodir/geometry.hpp"
#include "egodir/stft.hpp"

namespace egodir {

/// Base-10 third-octave bands. Centers 1000 * 10^(b/10), edges center * 10^(+-1/20).
struct BandTable {
  std::vector<double> centers;
  std::vector<double> lower;
  std::vector<double> upper;

  /// The 23 bands from 100 Hz to 16 kHz.
  static BandTable standard();
  /// Standard bands whose upper edge does not exceed `max_hz`.
  static BandTable up_to(double max_hz);

  int size() const { return static_cast<int>(centers.size()); }
  /// Band containing `hz` or -1.
  int band_of(double hz) const;
};

/// D(tau): grid points x bands.
struct DirectivityFrame {
  int frame = 0;
  Eigen::MatrixXd d;
};

/// Frames x bands power: sum over the bins of each band of c_k |X_k|^2 / (N sum w^2), with a
/// Blackman-Harris analysis window, so a unit-amplitude sine yields 0.5 in its band.
/// Throws Error(Config) if a band edge lies above Nyquist.
Eigen::MatrixXd third_octave_stps(std::span<const double> signal, const StftConfig& stft, const BandTable& bands);

/// Relative power floor applied to the reference band power.
inline constexpr double kPowerFloor = 1e-12;

/// D_g = P_g / max(P_ref, 1e-12 * max band power of the frame).
DirectivityFrame directivity_factor(const Eigen::MatrixXd& p_grid, const Eigen::VectorXd& p_ref, int frame = 0);

/// Frame-wise D for a set of grid signals against a reference signal.
std::vector<DirectivityFrame> measure_directivity(const MultiSignal& grid_signals, std::span<const double> reference,
                                                  const StftConfig& stft, const BandTable& bands);

/// Real-SH basis values, rows = points, columns = ACN (n <= order).
Eigen::MatrixXd decode_matrix(std::span<const SphericalPoint> points, int order);

/// Coefficients (N+1)^2 x bands minimizing sum_g xi_g (D_g - Y_g a)^2. On a grid whose
/// quadrature integrates the products exactly this equals sum_g D_g Y_g xi_g.
/// Throws Error(Domain) if N > sqrt(G) - 1 and Error(Shape) on mismatched sizes.
Eigen::MatrixXd sht_encode(const Eigen::MatrixXd& d, const Grid& grid, int order);

/// D_hat = T A.
Eigen::MatrixXd sht_decode(const Eigen::MatrixXd& a, const Eigen::MatrixXd& t);

struct OrderSearch {
  std::vector<int> orders;
  Eigen::MatrixXd error_db;  // orders x bands, mean |10 log10(D_hat / D)|
  Eigen::MatrixXd residual;  // orders x bands, weighted L2 residual of the fit
};

/// Encode/decode on the measurement grid for each order in 1..max_order; orders past
/// sqrt(G) - 1 use the minimum-norm fit. D and D_hat are floored at `floor` before the log.
OrderSearch order_search(std::span<const DirectivityFrame> frames, const Grid& grid, int max_order = 12, double floor = 1e-6);

/// DI = 10 log10(LTAS_g / LTAS_ref), grid points x bands.
Eigen::MatrixXd ltas_di(const MultiSignal& grid_signals, std::span<const double> reference, const StftConfig& stft,
                        const BandTable& bands);

/// D frames and their SH coefficients.
struct DirectivitySequence {
  BandTable bands;
  int order = 9;
  std::vector<DirectivityFrame> frames;
  std::vector<Eigen::MatrixXd> coeffs;  // (order+1)^2 x bands per frame

  void save(const std::filesystem::path& path) const;
  static DirectivitySequence load(const std::filesystem::path& path);
};

void write_order_search_csv(const std::filesystem::path& path, const OrderSearch& table, const BandTable& bands);
/// Rows `azimuth_deg,band_hz...` of DI in dB for the grid points with |elevation| < 1e-9.
void write_polar_csv(const std::filesystem::path& path, const Grid& grid, const Eigen::MatrixXd& di_db, const BandTable& bands);

}  // namespace egodir
