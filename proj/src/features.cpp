#include "egodir/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <json.hpp>

#include "egodir/container.hpp"
#include "egodir/error.hpp"

namespace egodir {

namespace {

double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

// Activity flags for a power threshold on the smoothed envelope, extended by the hangover.
std::vector<char> activity(const std::vector<double>& envelope, double threshold, size_t hangover) {
  std::vector<char> active(envelope.size(), 0);
  size_t hold = 0;
  for (size_t n = 0; n < envelope.size(); ++n) {
    if (envelope[n] >= threshold) {
      hold = hangover + 1;
    }
    if (hold > 0) {
      active[n] = 1;
      --hold;
    }
  }
  return active;
}

}  // namespace

double active_speech_level(std::span<const double> signal, double sample_rate, const VoicingOptions& options) {
  const double total = mean_power(signal);
  if (!(total > 0.0)) return -std::numeric_limits<double>::infinity();

  const double g = std::exp(-1.0 / (options.envelope_seconds * sample_rate));
  std::vector<double> envelope(signal.size());
  double e = 0.0;
  for (size_t n = 0; n < signal.size(); ++n) {
    e = g * e + (1.0 - g) * signal[n] * signal[n];
    envelope[n] = e;
  }
  const auto hangover = static_cast<size_t>(std::lround(options.hangover_seconds * sample_rate));
  const double margin = std::pow(10.0, -options.margin_db / 10.0);

  double level = total;
  for (int iter = 0; iter < 100; ++iter) {
    const auto active = activity(envelope, level * margin, hangover);
    double s = 0.0;
    size_t count = 0;
    for (size_t n = 0; n < signal.size(); ++n) {
      if (active[n]) {
        s += signal[n] * signal[n];
        ++count;
      }
    }
    if (count == 0) break;
    const double next = s / static_cast<double>(count);
    const bool converged = std::abs(10.0 * std::log10(next / level)) < 1e-4;
    level = next;
    if (converged) break;
  }
  return 10.0 * std::log10(level);
}

std::vector<bool> voiced_mask(std::span<const double> signal, const StftConfig& stft, const VoicingOptions& options) {
  stft.validate();
  const int frames = stft.frame_count(signal.size());
  std::vector<bool> voiced(static_cast<size_t>(frames), false);
  const double level_db = active_speech_level(signal, stft.sample_rate, options);
  if (!std::isfinite(level_db)) return voiced;
  const double threshold = std::pow(10.0, (level_db - options.voiced_range_db) / 10.0);
  const long long n = static_cast<long long>(signal.size());
  for (int tau = 0; tau < frames; ++tau) {
    const long long start = std::max<long long>(0, static_cast<long long>(tau) * stft.hop - (stft.window - stft.hop));
    const long long stop = std::min<long long>(n, static_cast<long long>(tau) * stft.hop + stft.hop);
    if (stop <= start) continue;
    const double p = mean_power(signal.subspan(static_cast<size_t>(start), static_cast<size_t>(stop - start)));
    voiced[static_cast<size_t>(tau)] = p >= threshold;
  }
  return voiced;
}

Signal awgn_augment(std::span<const double> signal, double snr_db, std::uint64_t seed) {
  const double ps = mean_power(signal);
  require(ps > 0.0, ErrorKind::Domain, "awgn_augment: signal has zero power");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Signal noise(signal.size());
  for (auto& v : noise) v = normal(rng);
  const double scale = std::sqrt(ps / std::pow(10.0, snr_db / 10.0) / mean_power(noise));
  Signal out(signal.size());
  for (size_t i = 0; i < signal.size(); ++i) out[i] = signal[i] + scale * noise[i];
  return out;
}

Eigen::MatrixXd linear_psd(std::span<const double> signal, const StftConfig& stft_cfg) {
  const Eigen::MatrixXcd spec = stft(signal, stft_cfg, WindowKind::Hann);
  Eigen::MatrixXd psd(spec.rows(), spec.cols());
  for (int b = 0; b < spec.cols(); ++b) {
    const double c = one_sided_weight(b, stft_cfg.fft_size) / stft_cfg.fft_size;
    psd.col(b) = c * spec.col(b).cwiseAbs2();
  }
  return psd;
}

Eigen::MatrixXd aggregate_psd(const MultiSignal& channels, const StftConfig& stft_cfg) {
  require(!channels.empty(), ErrorKind::Shape, "aggregate_psd: no channels");
  for (const auto& ch : channels)
    require(ch.size() == channels.front().size(), ErrorKind::Shape, "aggregate_psd: channel lengths differ");
  const int bins = stft_cfg.bins();
  const int frames = stft_cfg.frame_count(channels.front().size());
  Eigen::MatrixXd x(frames, bins * static_cast<int>(channels.size()));
  const double floor = std::pow(10.0, kLogFloorDb / 10.0);
  for (size_t c = 0; c < channels.size(); ++c) {
    const Eigen::MatrixXd p = linear_psd(channels[c], stft_cfg);
    x.middleCols(static_cast<int>(c) * bins, bins) =
        p.unaryExpr([floor](double v) { return 10.0 * std::log10(std::max(v, floor)); });
  }
  return x;
}

namespace {

SvdBasis fit_spectrum(const Eigen::MatrixXd& x) {
  require(x.rows() >= 1 && x.cols() >= 1, ErrorKind::Shape, "svd_fit: empty training matrix");
  SvdBasis out;
  out.mean = x.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - out.mean;
  if (x.rows() > x.cols()) {
    const Eigen::MatrixXd cov = xc.transpose() * xc;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    require(es.info() == Eigen::Success, ErrorKind::Numeric, "svd_fit: eigendecomposition failed");
    const int d = static_cast<int>(cov.rows());
    out.singular_values.resize(d);
    out.basis.resize(d, d);
    for (int i = 0; i < d; ++i) {  // ascending -> descending
      out.singular_values(i) = std::sqrt(std::max(0.0, es.eigenvalues()(d - 1 - i)));
      out.basis.col(i) = es.eigenvectors().col(d - 1 - i);
    }
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(xc, Eigen::ComputeThinV);
    out.singular_values = svd.singularValues();
    out.basis = svd.matrixV();
  }
  // Fix the sign so that the largest-magnitude entry of each vector is positive.
  for (int i = 0; i < out.basis.cols(); ++i) {
    Eigen::Index k = 0;
    out.basis.col(i).cwiseAbs().maxCoeff(&k);
    if (out.basis(k, i) < 0.0) out.basis.col(i) *= -1.0;
  }
  return out;
}

void truncate(SvdBasis& b, int rank) {
  const double total = b.singular_values.squaredNorm();
  b.basis = b.basis.leftCols(rank).eval();
  b.explained = total > 0.0 ? b.singular_values.head(rank).squaredNorm() / total : 1.0;
}

}  // namespace

SvdBasis svd_fit(const Eigen::MatrixXd& x_train, int rank) {
  require(rank >= 1, ErrorKind::Config, "svd_fit: rank must be positive");
  require(rank <= x_train.rows(), ErrorKind::Config,
          "svd_fit: rank " + std::to_string(rank) + " exceeds the training sample count " + std::to_string(x_train.rows()));
  require(rank <= x_train.cols(), ErrorKind::Config, "svd_fit: rank exceeds the feature dimension");
  SvdBasis b = fit_spectrum(x_train);
  truncate(b, rank);
  return b;
}

SvdBasis svd_fit_variance(const Eigen::MatrixXd& x_train, double target) {
  require(target > 0.0 && target <= 1.0, ErrorKind::Config, "svd_fit: explained-variance target must be in (0, 1]");
  SvdBasis b = fit_spectrum(x_train);
  const double total = b.singular_values.squaredNorm();
  const int available = static_cast<int>(std::min<Eigen::Index>(b.singular_values.size(), x_train.rows()));
  int rank = available;
  double acc = 0.0;
  for (int r = 1; r <= available; ++r) {
    acc += b.singular_values(r - 1) * b.singular_values(r - 1);
    if (total == 0.0 || acc / total >= target - 1e-12) {
      rank = r;
      break;
    }
  }
  truncate(b, rank);
  return b;
}

Eigen::MatrixXd svd_project(const SvdBasis& basis, const Eigen::MatrixXd& x) {
  require(basis.fitted(), ErrorKind::Config, "svd_project: basis is not fitted");
  require(x.cols() == basis.basis.rows(), ErrorKind::Shape, "svd_project: feature dimension mismatch");
  return (x.rowwise() - basis.mean) * basis.basis;
}

Eigen::MatrixXd svd_reconstruct(const SvdBasis& basis, const Eigen::MatrixXd& z) {
  require(basis.fitted(), ErrorKind::Config, "svd_reconstruct: basis is not fitted");
  require(z.cols() == basis.rank(), ErrorKind::Shape, "svd_reconstruct: rank mismatch");
  return (z * basis.basis.transpose()).rowwise() + basis.mean;
}

void SvdBasis::save(const std::filesystem::path& path) const {
  require(fitted(), ErrorKind::Config, "svd basis: nothing to save");
  Container c("svd_basis");
  c.meta() = {{"rank", rank()}, {"dims", basis.rows()}, {"explained", explained}};
  c.add("mean", Eigen::MatrixXd(mean));
  c.add("basis", basis);
  c.add_vector("singular_values", std::span<const double>(singular_values.data(), static_cast<size_t>(singular_values.size())));
  c.save(path);
}

SvdBasis SvdBasis::load(const std::filesystem::path& path) {
  const auto c = Container::load(path, "svd_basis");
  SvdBasis b;
  b.mean = c.get("mean").matrix().row(0);
  b.basis = c.get("basis").matrix();
  const auto sv = c.get("singular_values").values();
  b.singular_values = Eigen::Map<const Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
  b.explained = c.meta().at("explained").get<double>();
  return b;
}

DatasetSplit split_by_time(std::span<const double> frame_times, const std::vector<bool>& voiced, double total_seconds,
                           double train_seconds, double validation_seconds) {
  require(frame_times.size() == voiced.size(), ErrorKind::Shape, "split_by_time: frame count mismatch");
  const double val_start = total_seconds - validation_seconds;
  require(train_seconds <= val_start, ErrorKind::Config, "split_by_time: training and validation windows overlap");
  DatasetSplit s;
  for (size_t i = 0; i < voiced.size(); ++i) {
    if (!voiced[i]) continue;
    if (frame_times[i] < train_seconds) s.train.push_back(static_cast<int>(i));
    else if (frame_times[i] >= val_start) s.validation.push_back(static_cast<int>(i));
  }
  return s;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["train_seconds"] = train_seconds;
  j["validation_seconds"] = validation_seconds;
  j["augment"] = {{"snr_db", augment_snr_db}, {"seeds", augment_seeds}};
  j["recordings"] = nlohmann::json::array();
  for (const auto& r : recordings)
    j["recordings"].push_back({{"name", r.name}, {"scene", r.scene.generic_string()}, {"poses", r.poses.generic_string()}});
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingInput, "cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingInput, "manifest not found: " + path.string());
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.train_seconds = j.value("train_seconds", m.train_seconds);
    m.validation_seconds = j.value("validation_seconds", m.validation_seconds);
    if (j.contains("augment")) {
      m.augment_snr_db = j["augment"].value("snr_db", m.augment_snr_db);
      m.augment_seeds = j["augment"].value("seeds", m.augment_seeds);
    }
    for (const auto& r : j.value("recordings", nlohmann::json::array()))
      m.recordings.push_back({r.at("name").get<std::string>(), r.value("scene", std::string()), r.value("poses", std::string())});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "manifest " + path.string() + ": " + e.what());
  }
  require(m.augment_snr_db.size() == m.augment_seeds.size(), ErrorKind::Config,
          "manifest: augment snr_db and seeds must have equal length");
  const auto base = path.parent_path();
  for (auto& r : m.recordings) {
    if (!r.scene.empty() && r.scene.is_relative()) r.scene = base / r.scene;
    if (!r.poses.empty() && r.poses.is_relative()) r.poses = base / r.poses;
  }
  return m;
}

}  // namespace egodir
