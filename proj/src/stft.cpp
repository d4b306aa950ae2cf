#include "egodir/stft.hpp"

#include <cmath>
#include <complex>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "egodir/error.hpp"

namespace egodir {

void StftConfig::validate() const {
  require(hop > 0 && window >= hop && fft_size >= window, ErrorKind::Config,
          "STFT requires 0 < hop <= window <= fft size");
  require(window % hop == 0 && window / hop >= 2, ErrorKind::Config,
          "STFT requires the window to be an integer multiple (>= 2) of the hop");
  require(fft_size % 2 == 0, ErrorKind::Config, "STFT fft size must be even");
  require(sample_rate > 0.0, ErrorKind::Config, "STFT sample rate must be positive");
}

int StftConfig::frame_count(size_t samples) const {
  return static_cast<int>((samples + static_cast<size_t>(hop) - 1) / static_cast<size_t>(hop)) + window / hop - 1;
}

double StftConfig::frame_time(int tau) const {
  const double start = static_cast<double>(tau) * hop - (window - hop);
  return (start + 0.5 * window) / sample_rate;
}

std::vector<double> StftConfig::frame_times(int frames) const {
  std::vector<double> t(static_cast<size_t>(frames));
  for (int i = 0; i < frames; ++i) t[static_cast<size_t>(i)] = frame_time(i);
  return t;
}

std::vector<double> make_window(WindowKind kind, int length) {
  std::vector<double> w(static_cast<size_t>(length));
  for (int i = 0; i < length; ++i) {
    const double x = 2.0 * std::numbers::pi * i / length;  // periodic
    const double hann = 0.5 - 0.5 * std::cos(x);
    double v = std::sqrt(hann);
    if (kind == WindowKind::Hann) v = hann;
    if (kind == WindowKind::BlackmanHarris) v = 0.35875 - 0.48829 * std::cos(x) + 0.14128 * std::cos(2 * x) - 0.01168 * std::cos(3 * x);
    w[static_cast<size_t>(i)] = v;
  }
  return w;
}

double one_sided_weight(int bin, int fft_size) { return (bin == 0 || 2 * bin == fft_size) ? 1.0 : 2.0; }

Eigen::MatrixXcd stft(std::span<const double> x, const StftConfig& cfg, WindowKind kind) {
  cfg.validate();
  const int frames = cfg.frame_count(x.size());
  const auto w = make_window(kind, cfg.window);
  Eigen::MatrixXcd out(frames, cfg.bins());
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(static_cast<size_t>(cfg.fft_size));
  std::vector<std::complex<double>> spec;
  const long long n = static_cast<long long>(x.size());
  for (int tau = 0; tau < frames; ++tau) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const long long start = static_cast<long long>(tau) * cfg.hop - (cfg.window - cfg.hop);
    for (int i = 0; i < cfg.window; ++i) {
      const long long s = start + i;
      if (s >= 0 && s < n) buf[static_cast<size_t>(i)] = w[static_cast<size_t>(i)] * x[static_cast<size_t>(s)];
    }
    fft.fwd(spec, buf);
    for (int b = 0; b < cfg.bins(); ++b) out(tau, b) = spec[static_cast<size_t>(b)];
  }
  return out;
}

Signal istft(const Eigen::MatrixXcd& spectrum, const StftConfig& cfg, size_t length) {
  cfg.validate();
  require(spectrum.cols() == cfg.bins(), ErrorKind::Shape, "istft: bin count does not match the STFT config");
  const auto w = make_window(WindowKind::SqrtHann, cfg.window);
  // Periodic Hann summed at hop spacing is constant: window / (2 hop).
  const double cola = static_cast<double>(cfg.window) / (2.0 * cfg.hop);
  Signal y(length, 0.0);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spec(static_cast<size_t>(cfg.bins()));
  std::vector<double> buf;
  const long long n = static_cast<long long>(length);
  for (int tau = 0; tau < spectrum.rows(); ++tau) {
    for (int b = 0; b < cfg.bins(); ++b) spec[static_cast<size_t>(b)] = spectrum(tau, b);
    fft.inv(buf, spec, cfg.fft_size);
    const long long start = static_cast<long long>(tau) * cfg.hop - (cfg.window - cfg.hop);
    for (int i = 0; i < cfg.window; ++i) {
      const long long s = start + i;
      if (s >= 0 && s < n) y[static_cast<size_t>(s)] += w[static_cast<size_t>(i)] * buf[static_cast<size_t>(i)] / cola;
    }
  }
  return y;
}

}  // namespace egodir
