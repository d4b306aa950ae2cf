#include "egodir/directivity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>

#include "egodir/container.hpp"
#include "egodir/error.hpp"
#include "egodir/parallel.hpp"
#include "egodir/sh_kernel.hpp"

namespace egodir {

BandTable BandTable::standard() {
  BandTable t;
  for (int b = -10; b <= 12; ++b) {
    const double fc = 1000.0 * std::pow(10.0, b / 10.0);
    t.centers.push_back(fc);
    t.lower.push_back(fc * std::pow(10.0, -1.0 / 20.0));
    t.upper.push_back(fc * std::pow(10.0, 1.0 / 20.0));
  }
  return t;
}

BandTable BandTable::up_to(double max_hz) {
  const BandTable all = standard();
  BandTable t;
  for (int b = 0; b < all.size(); ++b) {
    if (all.upper[static_cast<size_t>(b)] > max_hz) break;
    t.centers.push_back(all.centers[static_cast<size_t>(b)]);
    t.lower.push_back(all.lower[static_cast<size_t>(b)]);
    t.upper.push_back(all.upper[static_cast<size_t>(b)]);
  }
  require(t.size() > 0, ErrorKind::Config, "no third-octave band fits below " + std::to_string(max_hz) + " Hz");
  return t;
}

int BandTable::band_of(double hz) const {
  for (int b = 0; b < size(); ++b)
    if (hz >= lower[static_cast<size_t>(b)] && hz < upper[static_cast<size_t>(b)]) return b;
  return -1;
}

namespace {

struct BandMap {
  std::vector<int> band;  // per bin
  double scale = 1.0;
};

BandMap band_map(const StftConfig& stft, const BandTable& bands) {
  stft.validate();
  const double nyquist = stft.sample_rate / 2.0;
  for (int b = 0; b < bands.size(); ++b)
    require(bands.upper[static_cast<size_t>(b)] <= nyquist * (1.0 + 1e-12), ErrorKind::Config,
            "band centered at " + std::to_string(bands.centers[static_cast<size_t>(b)]) + " Hz extends above Nyquist");
  BandMap m;
  m.band.resize(static_cast<size_t>(stft.bins()));
  for (int k = 0; k < stft.bins(); ++k) m.band[static_cast<size_t>(k)] = bands.band_of(stft.bin_frequency(k));
  const auto w = make_window(WindowKind::BlackmanHarris, stft.window);
  double w2 = 0.0;
  for (double v : w) w2 += v * v;
  m.scale = 1.0 / (stft.fft_size * w2);
  return m;
}

Eigen::MatrixXd band_power(const Eigen::MatrixXcd& spec, const StftConfig& stft, const BandMap& m, int n_bands) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(spec.rows(), n_bands);
  for (int k = 0; k < stft.bins(); ++k) {
    const int b = m.band[static_cast<size_t>(k)];
    if (b < 0) continue;
    p.col(b) += one_sided_weight(k, stft.fft_size) * m.scale * spec.col(k).cwiseAbs2();
  }
  return p;
}

}  // namespace

Eigen::MatrixXd third_octave_stps(std::span<const double> signal, const StftConfig& stft, const BandTable& bands) {
  const BandMap m = band_map(stft, bands);
  return band_power(egodir::stft(signal, stft, WindowKind::BlackmanHarris), stft, m, bands.size());
}

DirectivityFrame directivity_factor(const Eigen::MatrixXd& p_grid, const Eigen::VectorXd& p_ref, int frame) {
  require(p_grid.cols() == p_ref.size(), ErrorKind::Shape, "directivity_factor: band count mismatch");
  double peak = p_ref.size() > 0 ? p_ref.maxCoeff() : 0.0;
  if (p_grid.size() > 0) peak = std::max(peak, p_grid.maxCoeff());
  const double floor = std::max(kPowerFloor * peak, std::numeric_limits<double>::min());
  DirectivityFrame out;
  out.frame = frame;
  out.d.resize(p_grid.rows(), p_grid.cols());
  for (Eigen::Index c = 0; c < p_grid.cols(); ++c) out.d.col(c) = p_grid.col(c) / std::max(p_ref(c), floor);
  return out;
}

std::vector<DirectivityFrame> measure_directivity(const MultiSignal& grid_signals, std::span<const double> reference,
                                                  const StftConfig& stft, const BandTable& bands) {
  const BandMap m = band_map(stft, bands);
  const Eigen::MatrixXd pref = band_power(egodir::stft(reference, stft, WindowKind::BlackmanHarris), stft, m, bands.size());
  std::vector<Eigen::MatrixXd> per_point(grid_signals.size());
  parallel_for(grid_signals.size(), [&](size_t g) {
    require(grid_signals[g].size() == reference.size(), ErrorKind::Shape, "measure_directivity: signal lengths differ");
    per_point[g] = band_power(egodir::stft(grid_signals[g], stft, WindowKind::BlackmanHarris), stft, m, bands.size());
  });
  std::vector<DirectivityFrame> frames(static_cast<size_t>(pref.rows()));
  for (Eigen::Index t = 0; t < pref.rows(); ++t) {
    Eigen::MatrixXd p(static_cast<Eigen::Index>(grid_signals.size()), bands.size());
    for (size_t g = 0; g < grid_signals.size(); ++g) p.row(static_cast<Eigen::Index>(g)) = per_point[g].row(t);
    frames[static_cast<size_t>(t)] = directivity_factor(p, pref.row(t).transpose(), static_cast<int>(t));
  }
  return frames;
}

Eigen::MatrixXd decode_matrix(std::span<const SphericalPoint> points, int order) {
  require(order >= 0, ErrorKind::Domain, "decode_matrix: negative order");
  Eigen::MatrixXd t(static_cast<Eigen::Index>(points.size()), sh_count(order));
  for (size_t g = 0; g < points.size(); ++g) {
    const auto y = real_sh_all(order, points[g].colatitude(), points[g].azimuth);
    for (int j = 0; j < sh_count(order); ++j) t(static_cast<Eigen::Index>(g), j) = y[static_cast<size_t>(j)];
  }
  return t;
}

namespace {

std::vector<double> grid_weights(const Grid& grid) {
  if (!grid.weights.empty()) {
    require(grid.weights.size() == grid.size(), ErrorKind::Shape, "grid weight count mismatch");
    return grid.weights;
  }
  return voronoi_weights(grid.points);
}

// Minimum-norm weighted least squares; also covers the underdetermined orders.
Eigen::MatrixXd weighted_fit(const Eigen::MatrixXd& d, const Eigen::MatrixXd& y, const std::vector<double>& w) {
  Eigen::VectorXd sw(static_cast<Eigen::Index>(w.size()));
  for (size_t i = 0; i < w.size(); ++i) sw(static_cast<Eigen::Index>(i)) = std::sqrt(w[i]);
  const Eigen::MatrixXd a = sw.asDiagonal() * y;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  return cod.solve(sw.asDiagonal() * d);
}

}  // namespace

Eigen::MatrixXd sht_encode(const Eigen::MatrixXd& d, const Grid& grid, int order) {
  require(d.rows() == static_cast<Eigen::Index>(grid.size()), ErrorKind::Shape, "sht_encode: D rows must equal grid size");
  require(order >= 0 && sh_count(order) <= static_cast<int>(grid.size()), ErrorKind::Domain,
          "sht_encode: order " + std::to_string(order) + " exceeds sqrt(G)-1 for G = " + std::to_string(grid.size()));
  return weighted_fit(d, decode_matrix(grid.points, order), grid_weights(grid));
}

Eigen::MatrixXd sht_decode(const Eigen::MatrixXd& a, const Eigen::MatrixXd& t) {
  require(t.cols() == a.rows(), ErrorKind::Shape, "sht_decode: T columns must equal A rows");
  return t * a;
}

OrderSearch order_search(std::span<const DirectivityFrame> frames, const Grid& grid, int max_order, double floor) {
  require(!frames.empty(), ErrorKind::Config, "order_search needs at least one frame");
  require(max_order >= 1, ErrorKind::Config, "order_search: max_order must be >= 1");
  const auto w = grid_weights(grid);
  const Eigen::Index bands = frames.front().d.cols();
  Eigen::MatrixXd stacked(static_cast<Eigen::Index>(grid.size()), bands * static_cast<Eigen::Index>(frames.size()));
  for (size_t f = 0; f < frames.size(); ++f) {
    require(frames[f].d.rows() == static_cast<Eigen::Index>(grid.size()) && frames[f].d.cols() == bands, ErrorKind::Shape,
            "order_search: frame shape mismatch");
    stacked.middleCols(static_cast<Eigen::Index>(f) * bands, bands) = frames[f].d;
  }
  OrderSearch out;
  out.error_db = Eigen::MatrixXd::Zero(max_order, bands);
  out.residual = Eigen::MatrixXd::Zero(max_order, bands);
  std::vector<Eigen::MatrixXd> fits(static_cast<size_t>(max_order));
  parallel_for(static_cast<size_t>(max_order), [&](size_t i) {
    const Eigen::MatrixXd y = decode_matrix(grid.points, static_cast<int>(i) + 1);
    fits[i] = y * weighted_fit(stacked, y, w);
  });
  for (int i = 0; i < max_order; ++i) {
    out.orders.push_back(i + 1);
    const auto& dhat = fits[static_cast<size_t>(i)];
    for (Eigen::Index c = 0; c < bands; ++c) {
      double err = 0.0, res = 0.0;
      for (size_t f = 0; f < frames.size(); ++f) {
        const Eigen::Index col = static_cast<Eigen::Index>(f) * bands + c;
        for (Eigen::Index g = 0; g < stacked.rows(); ++g) {
          const double a = std::max(stacked(g, col), floor), b = std::max(dhat(g, col), floor);
          err += std::abs(10.0 * std::log10(b / a));
          res += w[static_cast<size_t>(g)] * std::pow(dhat(g, col) - stacked(g, col), 2);
        }
      }
      out.error_db(i, c) = err / static_cast<double>(frames.size() * grid.size());
      out.residual(i, c) = std::sqrt(res / static_cast<double>(frames.size()));
    }
  }
  return out;
}

Eigen::MatrixXd ltas_di(const MultiSignal& grid_signals, std::span<const double> reference, const StftConfig& stft,
                        const BandTable& bands) {
  const BandMap m = band_map(stft, bands);
  const Eigen::RowVectorXd ref = band_power(egodir::stft(reference, stft, WindowKind::BlackmanHarris), stft, m, bands.size()).colwise().mean();
  Eigen::MatrixXd di(static_cast<Eigen::Index>(grid_signals.size()), bands.size());
  parallel_for(grid_signals.size(), [&](size_t g) {
    require(grid_signals[g].size() == reference.size(), ErrorKind::Shape, "ltas_di: signal lengths differ");
    const Eigen::RowVectorXd p =
        band_power(egodir::stft(grid_signals[g], stft, WindowKind::BlackmanHarris), stft, m, bands.size()).colwise().mean();
    const double floor = std::max(kPowerFloor * std::max(p.maxCoeff(), ref.maxCoeff()), std::numeric_limits<double>::min());
    for (int c = 0; c < bands.size(); ++c)
      di(static_cast<Eigen::Index>(g), c) = 10.0 * std::log10(std::max(p(c), floor) / std::max(ref(c), floor));
  });
  return di;
}

void DirectivitySequence::save(const std::filesystem::path& path) const {
  Container c("directivity");
  c.meta() = {{"order", order},
              {"frames", static_cast<int>(frames.size())},
              {"band_centers", bands.centers},
              {"band_lower", bands.lower},
              {"band_upper", bands.upper},
              {"frame_index", [&] {
                 std::vector<int> idx;
                 for (const auto& f : frames) idx.push_back(f.frame);
                 return idx;
               }()}};
  for (size_t i = 0; i < frames.size(); ++i) {
    c.add("D/" + std::to_string(i), frames[i].d);
    if (i < coeffs.size()) c.add("A/" + std::to_string(i), coeffs[i]);
  }
  c.save(path);
}

DirectivitySequence DirectivitySequence::load(const std::filesystem::path& path) {
  const auto c = Container::load(path, "directivity");
  DirectivitySequence s;
  s.order = c.meta().at("order");
  s.bands.centers = c.meta().at("band_centers").get<std::vector<double>>();
  s.bands.lower = c.meta().at("band_lower").get<std::vector<double>>();
  s.bands.upper = c.meta().at("band_upper").get<std::vector<double>>();
  const auto idx = c.meta().at("frame_index").get<std::vector<int>>();
  for (size_t i = 0; i < idx.size(); ++i) {
    s.frames.push_back({idx[i], c.get("D/" + std::to_string(i)).matrix()});
    if (c.has("A/" + std::to_string(i))) s.coeffs.push_back(c.get("A/" + std::to_string(i)).matrix());
  }
  return s;
}

void write_order_search_csv(const std::filesystem::path& path, const OrderSearch& table, const BandTable& bands) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingInput, "cannot write " + path.string());
  out << "order";
  for (double f : bands.centers) out << ',' << std::setprecision(6) << f;
  out << '\n' << std::setprecision(10);
  for (size_t i = 0; i < table.orders.size(); ++i) {
    out << table.orders[i];
    for (Eigen::Index c = 0; c < table.error_db.cols(); ++c) out << ',' << table.error_db(static_cast<Eigen::Index>(i), c);
    out << '\n';
  }
}

void write_polar_csv(const std::filesystem::path& path, const Grid& grid, const Eigen::MatrixXd& di_db, const BandTable& bands) {
  require(di_db.rows() == static_cast<Eigen::Index>(grid.size()), ErrorKind::Shape, "write_polar_csv: row count mismatch");
  std::vector<std::pair<double, Eigen::Index>> ring;
  for (size_t g = 0; g < grid.size(); ++g)
    if (std::abs(grid.points[g].elevation) < 1e-9) ring.emplace_back(grid.points[g].azimuth * 180.0 / std::numbers::pi, g);
  std::sort(ring.begin(), ring.end());
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingInput, "cannot write " + path.string());
  out << "azimuth_deg";
  for (double f : bands.centers) out << ',' << std::setprecision(6) << f;
  out << '\n' << std::setprecision(10);
  for (const auto& [az, g] : ring) {
    out << az;
    for (Eigen::Index c = 0; c < di_db.cols(); ++c) out << ',' << di_db(g, c);
    out << '\n';
  }
}

}  // namespace egodir
