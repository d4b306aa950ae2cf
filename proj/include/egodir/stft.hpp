#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace egodir {

using Signal = std::vector<double>;
using MultiSignal = std::vector<Signal>;

enum class WindowKind {
  SqrtHann,  // analysis/synthesis pair, perfect reconstruction at hop <= window/2
  Hann,
  BlackmanHarris,  // 4-term, -92 dB sidelobes; band-power analysis
};

struct StftConfig {
  int fft_size = 2048;
  int window = 2048;
  int hop = 512;
  double sample_rate = 48000.0;

  /// Throws Error(Config) unless 0 < hop <= window <= fft_size and window % hop == 0.
  void validate() const;
  int bins() const { return fft_size / 2 + 1; }
  double bin_frequency(int bin) const { return bin * sample_rate / fft_size; }
  int frame_count(size_t samples) const;
  /// Time of the window center of frame `tau`, seconds.
  double frame_time(int tau) const;
  std::vector<double> frame_times(int frames) const;
};

std::vector<double> make_window(WindowKind kind, int length);

/// Frames x bins one-sided spectrum. Frame tau covers samples
/// [tau*hop - (window - hop), tau*hop + hop); out-of-range samples are zero.
Eigen::MatrixXcd stft(std::span<const double> x, const StftConfig& cfg, WindowKind kind = WindowKind::SqrtHann);

/// Weighted overlap-add inverse of stft() with the sqrt-Hann pair, cropped to `length`.
Signal istft(const Eigen::MatrixXcd& spectrum, const StftConfig& cfg, size_t length);

/// One-sided bin multiplicity: 1 for DC and Nyquist, 2 otherwise.
double one_sided_weight(int bin, int fft_size);

}  // namespace egodir
