#include "egodir/sh_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numbers>
#include <string>
#include <unordered_map>

#include <boost/multiprecision/cpp_int.hpp>

#include "egodir/error.hpp"

namespace egodir {

namespace {

constexpr double kPi = std::numbers::pi;

void check_order(int n, const char* what) {
  require(n >= 0, ErrorKind::Domain, std::string(what) + ": order must be non-negative");
}

}  // namespace

SHIndex::SHIndex(int n_, int m_) : n(n_), m(m_) {
  require(n >= 0 && std::abs(m) <= n, ErrorKind::Domain,
          "SHIndex requires n >= 0 and |m| <= n (got n=" + std::to_string(n) +
              ", m=" + std::to_string(m) + ")");
}

WaveNumber::WaveNumber(double k) : value(k) {
  require(std::isfinite(k) && k > 0.0, ErrorKind::Domain, "wave number must be positive and finite");
}

WaveNumber WaveNumber::from_frequency(double hz, double speed_of_sound) {
  require(hz > 0.0 && speed_of_sound > 0.0, ErrorKind::Domain,
          "wave number needs positive frequency and speed of sound");
  return WaveNumber(2.0 * kPi * hz / speed_of_sound);
}

// ---------------------------------------------------------------------------
// Legendre

std::vector<double> normalized_legendre(int order, double x) {
  check_order(order, "normalized_legendre");
  require(std::abs(x) <= 1.0 + 1e-14, ErrorKind::Domain, "Legendre argument must satisfy |x| <= 1");
  x = std::clamp(x, -1.0, 1.0);
  const double s = std::sqrt(std::max(0.0, (1.0 - x) * (1.0 + x)));
  std::vector<double> p(static_cast<size_t>((order + 1) * (order + 2) / 2), 0.0);
  auto at = [&](int n, int m) -> double& { return p[static_cast<size_t>(n * (n + 1) / 2 + m)]; };

  double pmm = std::sqrt(1.0 / (4.0 * kPi));
  for (int m = 0; m <= order; ++m) {
    if (m > 0) pmm *= std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s;
    at(m, m) = pmm;
    if (m + 1 <= order) at(m + 1, m) = x * std::sqrt(2.0 * m + 3.0) * pmm;
    for (int n = m + 2; n <= order; ++n) {
      const double nn = n, mm = m;
      const double a = std::sqrt((4.0 * nn * nn - 1.0) / (nn * nn - mm * mm));
      const double b = std::sqrt(((nn - 1.0) * (nn - 1.0) - mm * mm) / (4.0 * (nn - 1.0) * (nn - 1.0) - 1.0));
      at(n, m) = a * (x * at(n - 1, m) - b * at(n - 2, m));
    }
  }
  return p;
}

double assoc_legendre(int n, int m, double x) {
  require(n >= 0 && m >= 0 && m <= n, ErrorKind::Domain, "assoc_legendre requires 0 <= m <= n");
  require(n <= 15, ErrorKind::Domain, "unnormalized assoc_legendre is only exposed for n <= 15");
  require(std::abs(x) <= 1.0, ErrorKind::Domain, "assoc_legendre requires |x| <= 1");
  const auto p = normalized_legendre(n, x);
  // Undo the normalization sqrt((2n+1)/4pi (n-m)!/(n+m)!).
  double ratio = 1.0;  // (n+m)!/(n-m)!
  for (int i = n - m + 1; i <= n + m; ++i) ratio *= i;
  const double norm = std::sqrt((2.0 * n + 1.0) / (4.0 * kPi) / ratio);
  return p[static_cast<size_t>(n * (n + 1) / 2 + m)] / norm;
}

// ---------------------------------------------------------------------------
// Spherical harmonics

std::vector<Complex> complex_sh_all(int order, double colatitude, double azimuth) {
  check_order(order, "complex_sh_all");
  const auto p = normalized_legendre(order, std::cos(colatitude));
  std::vector<Complex> y(static_cast<size_t>(sh_count(order)));
  for (int n = 0; n <= order; ++n) {
    for (int m = 0; m <= n; ++m) {
      const double pnm = p[static_cast<size_t>(n * (n + 1) / 2 + m)];
      const double sign = (m % 2 == 0) ? 1.0 : -1.0;
      const Complex pos = sign * pnm * std::polar(1.0, m * azimuth);
      y[static_cast<size_t>(acn_index(n, m))] = pos;
      if (m > 0) y[static_cast<size_t>(acn_index(n, -m))] = sign * std::conj(pos);
    }
  }
  return y;
}

std::vector<double> real_sh_all(int order, double colatitude, double azimuth) {
  check_order(order, "real_sh_all");
  const auto p = normalized_legendre(order, std::cos(colatitude));
  std::vector<double> y(static_cast<size_t>(sh_count(order)));
  for (int n = 0; n <= order; ++n) {
    y[static_cast<size_t>(acn_index(n, 0))] = p[static_cast<size_t>(n * (n + 1) / 2)];
    for (int m = 1; m <= n; ++m) {
      const double pnm = std::numbers::sqrt2 * p[static_cast<size_t>(n * (n + 1) / 2 + m)];
      y[static_cast<size_t>(acn_index(n, m))] = pnm * std::cos(m * azimuth);
      y[static_cast<size_t>(acn_index(n, -m))] = pnm * std::sin(m * azimuth);
    }
  }
  return y;
}

Complex complex_sh(SHIndex idx, double colatitude, double azimuth) {
  const auto p = normalized_legendre(idx.n, std::cos(colatitude));
  const int am = std::abs(idx.m);
  const double pnm = p[static_cast<size_t>(idx.n * (idx.n + 1) / 2 + am)];
  const double sign = (am % 2 == 0) ? 1.0 : -1.0;
  const Complex pos = sign * pnm * std::polar(1.0, am * azimuth);
  return idx.m >= 0 ? pos : sign * std::conj(pos);
}

double real_sh(SHIndex idx, double colatitude, double azimuth) {
  const auto p = normalized_legendre(idx.n, std::cos(colatitude));
  const int am = std::abs(idx.m);
  const double pnm = p[static_cast<size_t>(idx.n * (idx.n + 1) / 2 + am)];
  if (idx.m == 0) return pnm;
  if (idx.m > 0) return std::numbers::sqrt2 * pnm * std::cos(am * azimuth);
  return std::numbers::sqrt2 * pnm * std::sin(am * azimuth);
}

// ---------------------------------------------------------------------------
// Spherical Bessel / Hankel

std::vector<double> sph_bessel_j_all(int order, double x) {
  check_order(order, "sph_bessel_j");
  require(x >= 0.0 && std::isfinite(x), ErrorKind::Domain, "sph_bessel_j requires finite x >= 0");
  std::vector<double> j(static_cast<size_t>(order + 1), 0.0);
  if (x == 0.0) {
    j[0] = 1.0;
    return j;
  }
  const double j0 = std::sin(x) / x;
  const double j1 = std::sin(x) / (x * x) - std::cos(x) / x;
  if (x > order) {
    // Upward recurrence is stable while n < x.
    j[0] = j0;
    if (order >= 1) j[1] = j1;
    for (int n = 1; n < order; ++n) j[static_cast<size_t>(n + 1)] = (2.0 * n + 1.0) / x * j[static_cast<size_t>(n)] - j[static_cast<size_t>(n - 1)];
    return j;
  }
  // Miller's downward recurrence, normalized against j_0 or j_1.
  const int start = order + 30 + static_cast<int>(std::sqrt(40.0 * std::max(order, 1)));
  double f_next = 0.0;
  double f = 1e-30;
  for (int n = start; n >= 1; --n) {
    const double f_prev = (2.0 * n + 1.0) / x * f - f_next;
    f_next = f;
    f = f_prev;
    if (n - 1 <= order) j[static_cast<size_t>(n - 1)] = f;
    if (n <= order) j[static_cast<size_t>(n)] = f_next;
    if (std::abs(f) > 1e200) {
      f *= 1e-200;
      f_next *= 1e-200;
      for (int i = n - 1; i <= order; ++i) j[static_cast<size_t>(i)] *= 1e-200;
    }
  }
  // After the loop f = f_0 and f_next = f_1.
  const double scale = (std::abs(j0) >= std::abs(j1)) ? j0 / f : j1 / f_next;
  for (auto& v : j) v *= scale;
  return j;
}

std::vector<double> sph_bessel_y_all(int order, double x) {
  check_order(order, "sph_bessel_y");
  require(x > 0.0 && std::isfinite(x), ErrorKind::Domain, "sph_bessel_y requires finite x > 0");
  std::vector<double> y(static_cast<size_t>(order + 1));
  y[0] = -std::cos(x) / x;
  if (order >= 1) y[1] = -std::cos(x) / (x * x) - std::sin(x) / x;
  for (int n = 1; n < order; ++n) y[static_cast<size_t>(n + 1)] = (2.0 * n + 1.0) / x * y[static_cast<size_t>(n)] - y[static_cast<size_t>(n - 1)];
  return y;
}

std::vector<Complex> sph_hankel_all(int order, double x) {
  require(x > 0.0, ErrorKind::Domain, "spherical Hankel function is singular at x = 0");
  const auto j = sph_bessel_j_all(order, x);
  const auto y = sph_bessel_y_all(order, x);
  std::vector<Complex> h(j.size());
  for (size_t i = 0; i < h.size(); ++i) h[i] = {j[i], y[i]};
  return h;
}

double sph_bessel_j(int n, double x) { return sph_bessel_j_all(n, x).back(); }
double sph_bessel_y(int n, double x) { return sph_bessel_y_all(n, x).back(); }
Complex sph_hankel(int n, double x) { return sph_hankel_all(n, x).back(); }

// ---------------------------------------------------------------------------
// Wigner 3-j

namespace {

using boost::multiprecision::cpp_int;
using boost::multiprecision::cpp_rational;

cpp_int factorial(int n) {
  cpp_int f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

double wigner3j_exact(int j1, int j2, int j3, int m1, int m2, int m3) {
  // Racah's single-sum formula; the squared magnitude is formed exactly.
  const int tmin = std::max({0, j2 - j3 - m1, j1 - j3 + m2});
  const int tmax = std::min({j1 + j2 - j3, j1 - m1, j2 + m2});
  cpp_rational sum = 0;
  for (int t = tmin; t <= tmax; ++t) {
    const cpp_int denom = factorial(t) * factorial(j3 - j2 + t + m1) * factorial(j3 - j1 + t - m2) *
                          factorial(j1 + j2 - j3 - t) * factorial(j1 - t - m1) * factorial(j2 - t + m2);
    const cpp_rational term(cpp_int(1), denom);
    if (t % 2 == 0) sum += term;
    else sum -= term;
  }
  if (sum == 0) return 0.0;
  const cpp_rational triangle(factorial(j1 + j2 - j3) * factorial(j1 - j2 + j3) * factorial(-j1 + j2 + j3),
                              factorial(j1 + j2 + j3 + 1));
  const cpp_int prod = factorial(j1 + m1) * factorial(j1 - m1) * factorial(j2 + m2) * factorial(j2 - m2) *
                       factorial(j3 + m3) * factorial(j3 - m3);
  const cpp_rational squared = triangle * cpp_rational(prod) * sum * sum;
  const double magnitude = std::sqrt(squared.convert_to<double>());
  const int phase = ((j1 - j2 - m3) % 2 == 0) ? 1 : -1;
  return (sum > 0 ? phase : -phase) * magnitude;
}

struct Wigner3jCache {
  std::mutex mutex;
  std::unordered_map<std::uint64_t, double> values;
};

Wigner3jCache& wigner_cache() {
  static Wigner3jCache cache;
  return cache;
}

}  // namespace

double wigner3j(int j1, int j2, int j3, int m1, int m2, int m3) {
  require(j1 >= 0 && j2 >= 0 && j3 >= 0, ErrorKind::Domain, "wigner3j requires non-negative j");
  if (m1 + m2 + m3 != 0) return 0.0;
  if (std::abs(m1) > j1 || std::abs(m2) > j2 || std::abs(m3) > j3) return 0.0;
  if (j3 < std::abs(j1 - j2) || j3 > j1 + j2) return 0.0;
  if (m1 == 0 && m2 == 0 && m3 == 0 && (j1 + j2 + j3) % 2 != 0) return 0.0;
  require(j1 < 1024 && j2 < 1024 && j3 < 1024, ErrorKind::Domain, "wigner3j supports j < 1024");

  auto pack = [](int v, int shift) { return static_cast<std::uint64_t>(v) << shift; };
  const std::uint64_t key = pack(j1, 0) | pack(j2, 10) | pack(j3, 20) | pack(m1 + 1023, 30) | pack(m2 + 1023, 41);
  auto& cache = wigner_cache();
  {
    std::lock_guard lock(cache.mutex);
    if (auto it = cache.values.find(key); it != cache.values.end()) return it->second;
  }
  const double value = wigner3j_exact(j1, j2, j3, m1, m2, m3);
  std::lock_guard lock(cache.mutex);
  cache.values.emplace(key, value);
  return value;
}

int truncation_order(WaveNumber k, double radius) {
  require(radius > 0.0, ErrorKind::Domain, "truncation_order requires a positive radius");
  return std::max(1, static_cast<int>(std::ceil(k.value * std::numbers::e * radius / 2.0)));
}

}  // namespace egodir
