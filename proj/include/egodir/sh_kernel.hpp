#pragma once
// Special functions and spherical-harmonic math used throughout the pipeline.
//
// Conventions
//   - Angles are (colatitude, azimuth) in radians unless a function says otherwise.
//   - Complex harmonics are orthonormal and include the Condon-Shortley phase, so
//     Y_n^{-m} = (-1)^m conj(Y_n^m).
//   - Real harmonics follow the three-branch form: sqrt(2) N P cos(m az) for m > 0,
//     N P for m = 0, sqrt(2) N P sin(|m| az) for m < 0, with no Condon-Shortley phase.
//   - Coefficient vectors are ordered by ACN: index = n*n + n + m.

#include <complex>
#include <vector>

namespace egodir {

using Complex = std::complex<double>;

struct SHIndex {
  int n = 0;
  int m = 0;

  /// Throws Error(Domain) unless n >= 0 and |m| <= n.
  SHIndex(int n_, int m_);
  int acn() const { return n * n + n + m; }
};

constexpr int sh_count(int order) { return (order + 1) * (order + 1); }
constexpr int acn_index(int n, int m) { return n * n + n + m; }

/// Wave number k = 2 pi f / c in rad/m.
struct WaveNumber {
  double value;

  explicit WaveNumber(double k);
  static WaveNumber from_frequency(double hz, double speed_of_sound = 343.0);
};

/// Associated Legendre function without the Condon-Shortley phase.
/// Only exposed for n <= 15; higher orders go through normalized_legendre().
double assoc_legendre(int n, int m, double x);

/// Fully normalized values sqrt((2n+1)/4pi (n-m)!/(n+m)!) P_n^m(x), no CS phase,
/// for 0 <= m <= n <= order. Storage is triangular: index n*(n+1)/2 + m.
std::vector<double> normalized_legendre(int order, double x);

Complex complex_sh(SHIndex idx, double colatitude, double azimuth);
double real_sh(SHIndex idx, double colatitude, double azimuth);

/// All harmonics up to `order`, ACN ordered.
std::vector<Complex> complex_sh_all(int order, double colatitude, double azimuth);
std::vector<double> real_sh_all(int order, double colatitude, double azimuth);

/// Spherical Bessel function of the first kind, j_0(0) = 1.
double sph_bessel_j(int n, double x);
/// Spherical Bessel function of the second kind; x > 0.
double sph_bessel_y(int n, double x);
/// First-kind spherical Hankel h_n = j_n + i y_n; throws Error(Domain) at x <= 0.
Complex sph_hankel(int n, double x);

/// j_0..j_order at x.
std::vector<double> sph_bessel_j_all(int order, double x);
/// y_0..y_order at x > 0 (upward recurrence).
std::vector<double> sph_bessel_y_all(int order, double x);
/// h_0..h_order at x > 0.
std::vector<Complex> sph_hankel_all(int order, double x);

/// Wigner 3-j symbol. Selection-rule violations return 0. Values are computed from
/// exact big-integer arithmetic and memoized behind a mutex.
double wigner3j(int j1, int j2, int j3, int m1, int m2, int m3);

/// N = ceil(k e R / 2), never below 1.
int truncation_order(WaveNumber k, double radius);

}  // namespace egodir
