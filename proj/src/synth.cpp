#include "egodir/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <Eigen/Eigenvalues>
#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include "egodir/error.hpp"
#include "egodir/features.hpp"
#include "egodir/parallel.hpp"
#include "egodir/wav.hpp"

namespace egodir {

namespace {

constexpr double kPi = std::numbers::pi;

double real_sh_eval(const Eigen::VectorXd& coeffs, int order, const Eigen::Vector3d& dir) {
  const SphericalPoint p = SphericalPoint::from_cartesian(dir);
  const auto y = real_sh_all(order, p.colatitude(), p.azimuth);
  double s = 0.0;
  for (int i = 0; i < coeffs.size(); ++i) s += coeffs(i) * y[static_cast<size_t>(i)];
  return s;
}

bool same_pose(const Pose& a, const Pose& b) {
  return a.origin == b.origin && a.orientation.coeffs() == b.orientation.coeffs();
}

}  // namespace

Eigen::MatrixXcd real_to_complex_sh(int order) {
  require(order >= 0, ErrorKind::Domain, "real_to_complex_sh: negative order");
  const int count = sh_count(order);
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(count, count);
  const double s = 1.0 / std::sqrt(2.0);
  const Complex i(0.0, 1.0);
  for (int n = 0; n <= order; ++n) {
    m(acn_index(n, 0), acn_index(n, 0)) = 1.0;
    for (int a = 1; a <= n; ++a) {
      const double cs = (a % 2 == 0) ? 1.0 : -1.0;
      // cosine-type column (m = +a)
      m(acn_index(n, a), acn_index(n, a)) = cs * s;
      m(acn_index(n, -a), acn_index(n, a)) = s;
      // sine-type column (m = -a)
      m(acn_index(n, a), acn_index(n, -a)) = -i * cs * s;
      m(acn_index(n, -a), acn_index(n, -a)) = i * s;
    }
  }
  return m;
}

ProductQuadrature product_quadrature(int degree) {
  require(degree >= 0, ErrorKind::Domain, "product_quadrature: negative degree");
  const int nt = degree / 2 + 1;
  const int np = degree + 1;
  // Golub-Welsch on the Legendre Jacobi matrix.
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(nt, nt);
  for (int i = 1; i < nt; ++i) {
    const double b = i / std::sqrt(4.0 * i * i - 1.0);
    jac(i, i - 1) = b;
    jac(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  ProductQuadrature q;
  for (int t = 0; t < nt; ++t) {
    const double z = es.eigenvalues()(t);
    const double wz = 2.0 * es.eigenvectors()(0, t) * es.eigenvectors()(0, t);
    for (int a = 0; a < np; ++a) {
      SphericalPoint p;
      p.r = 1.0;
      p.elevation = std::asin(std::clamp(z, -1.0, 1.0));
      p.azimuth = 2.0 * kPi * a / np;
      q.points.push_back(p);
      q.weights.push_back(wz * 2.0 * kPi / np);
    }
  }
  return q;
}

Eigen::VectorXd rotate_real_sh(const Eigen::VectorXd& coeffs, int order, const Eigen::Quaterniond& rotation) {
  require(coeffs.size() == sh_count(order), ErrorKind::Shape, "rotate_real_sh: coefficient count does not match order");
  const auto quad = product_quadrature(2 * order);
  const Eigen::Quaterniond inv = rotation.conjugate();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(coeffs.size());
  for (size_t i = 0; i < quad.points.size(); ++i) {
    const auto& p = quad.points[i];
    const double g = real_sh_eval(coeffs, order, inv * p.unit());
    const auto y = real_sh_all(order, p.colatitude(), p.azimuth);
    for (int c = 0; c < out.size(); ++c) out(c) += quad.weights[i] * g * y[static_cast<size_t>(c)];
  }
  return out;
}

DirectivityPattern DirectivityPattern::omni() { return DirectivityPattern{}; }

DirectivityPattern DirectivityPattern::cardioid(int order) {
  return from_function(order, [order](const Eigen::Vector3d& x) { return std::pow(0.5 * (1.0 + x.x()), order); });
}

DirectivityPattern DirectivityPattern::rear_lobe(double rear_db) {
  const double a = std::pow(10.0, rear_db / 20.0);
  return from_function(1, [a](const Eigen::Vector3d& x) { return a + (1.0 - a) * 0.5 * (1.0 + x.x()); });
}

DirectivityPattern DirectivityPattern::from_function(int order, const std::function<double(const Eigen::Vector3d&)>& g) {
  require(order >= 0 && order <= 9, ErrorKind::Config, "directivity pattern order must be in 0..9");
  const auto quad = product_quadrature(2 * order);
  DirectivityPattern p;
  p.order = order;
  p.coeffs = Eigen::VectorXd::Zero(sh_count(order));
  for (size_t i = 0; i < quad.points.size(); ++i) {
    const auto& pt = quad.points[i];
    const double v = g(pt.unit());
    const auto y = real_sh_all(order, pt.colatitude(), pt.azimuth);
    for (int c = 0; c < p.coeffs.size(); ++c) p.coeffs(c) += quad.weights[i] * v * y[static_cast<size_t>(c)];
  }
  return p;
}

double DirectivityPattern::amplitude(const SphericalPoint& direction) const {
  return real_sh_eval(coeffs, order, direction.unit());
}

double DirectivityPattern::directivity(const SphericalPoint& direction) const {
  const double front = amplitude(SphericalPoint{});
  const double g = amplitude(direction) / front;
  return g * g;
}

void DirectivityPattern::validate() const {
  require(order >= 0 && order <= 9, ErrorKind::Config, "directivity pattern order must be in 0..9");
  require(coeffs.size() == sh_count(order), ErrorKind::Config, "directivity pattern coefficient count does not match its order");
  require(coeffs.allFinite(), ErrorKind::Config, "directivity pattern has non-finite coefficients");
  require(std::abs(amplitude(SphericalPoint{})) > 1e-9 * std::max(1.0, coeffs.norm()), ErrorKind::Config,
          "directivity pattern vanishes at the front direction");
}

Signal make_excitation(const ExcitationSpec& spec, double sample_rate) {
  if (spec.kind == ExcitationKind::Wav) {
    require(std::filesystem::exists(spec.wav), ErrorKind::MissingInput, "excitation file not found: " + spec.wav.string());
    const WavData w = read_wav(spec.wav);
    require(w.sample_rate == sample_rate, ErrorKind::Config,
            "excitation " + spec.wav.string() + " has sample rate " + std::to_string(w.sample_rate) + ", expected " +
                std::to_string(sample_rate));
    require(!w.channels.empty(), ErrorKind::Config, "excitation file has no channels: " + spec.wav.string());
    return w.channels.front();
  }
  require(spec.seconds > 0.0, ErrorKind::Config, "excitation duration must be positive");
  const auto n = static_cast<size_t>(std::lround(spec.seconds * sample_rate));
  Signal x(n, 0.0);
  if (spec.kind == ExcitationKind::Tone) {
    for (size_t i = 0; i < n; ++i) x[i] = std::sqrt(2.0) * spec.rms * std::sin(2.0 * kPi * spec.tone_hz * i / sample_rate);
    return x;
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  if (spec.kind == ExcitationKind::WhiteNoise) {
    for (auto& v : x) v = normal(rng);
  } else {
    size_t len = 1;
    while (len < n) len *= 2;
    std::vector<double> white(len);
    for (auto& v : white) v = normal(rng);
    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    std::vector<Complex> spec_c;
    fft.fwd(spec_c, white);
    spec_c[0] = 0.0;
    for (size_t k = 1; k < spec_c.size(); ++k) spec_c[k] /= std::sqrt(static_cast<double>(k));
    std::vector<double> pink;
    fft.inv(pink, spec_c, static_cast<int>(len));
    std::copy_n(pink.begin(), n, x.begin());
  }
  double p = 0.0;
  for (double v : x) p += v * v;
  const double rms = std::sqrt(p / static_cast<double>(std::max<size_t>(n, 1)));
  if (rms > 0.0)
    for (auto& v : x) v *= spec.rms / rms;
  return x;
}

const DirectivityPattern& SyntheticSource::pattern_for(double hz) const {
  require(!patterns.empty(), ErrorKind::Config, "synthetic source has no pattern");
  for (size_t i = 0; i < pattern_upper_hz.size() && i + 1 < patterns.size(); ++i)
    if (hz < pattern_upper_hz[i]) return patterns[i];
  return patterns.back();
}

int SyntheticSource::order() const {
  int n = 0;
  for (const auto& p : patterns) n = std::max(n, p.order);
  return n;
}

ChamberSpec ChamberSpec::band(int count, double radius, double max_elevation_deg, int mic_order) {
  require(count >= 2, ErrorKind::Config, "chamber band needs at least two microphones");
  const double zmax = std::sin(max_elevation_deg * kPi / 180.0);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  ChamberSpec c;
  c.mic_order = mic_order;
  for (int i = 0; i < count; ++i) {
    const double z = -zmax + 2.0 * zmax * i / (count - 1);
    const double rho = std::sqrt(1.0 - z * z);
    const double az = golden * i;
    c.mics.push_back(radius * Eigen::Vector3d(rho * std::cos(az), rho * std::sin(az), z));
  }
  return c;
}

ChamberSpec ChamberSpec::full_sphere(int count, double radius, int mic_order) {
  require(count >= 1, ErrorKind::Config, "chamber needs at least one microphone");
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  ChamberSpec c;
  c.mic_order = mic_order;
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count;
    const double rho = std::sqrt(1.0 - z * z);
    const double az = golden * i;
    c.mics.push_back(radius * Eigen::Vector3d(rho * std::cos(az), rho * std::sin(az), z));
  }
  return c;
}

void ChamberSpec::validate() const {
  require(mics.size() >= 4, ErrorKind::Config, "chamber needs at least 4 microphones");
  require(mic_order >= 0, ErrorKind::Config, "chamber microphone order must be non-negative");
  const double r0 = mics.front().norm();
  require(r0 > 0.0, ErrorKind::Config, "chamber radius must be positive");
  for (const auto& m : mics)
    require(std::abs(m.norm() - r0) <= 1e-9 * r0, ErrorKind::Config, "chamber microphones must share one radius");
}

Eigen::VectorXcd source_coeffs(const SyntheticSource& source, const Pose& pose, double hz, double speed_of_sound) {
  const DirectivityPattern& p = source.pattern_for(hz);
  p.validate();
  const Eigen::VectorXd world = rotate_real_sh(p.coeffs, p.order, pose.orientation);
  Eigen::VectorXcd c = real_to_complex_sh(p.order) * world;
  const auto h = sph_hankel_all(p.order, WaveNumber::from_frequency(hz, speed_of_sound).value * source.measurement_radius);
  for (int n = 0; n <= p.order; ++n)
    for (int m = -n; m <= n; ++m) c(acn_index(n, m)) /= h[static_cast<size_t>(n)];
  return c;
}

namespace {

std::vector<Pose> frame_poses(const SyntheticSource& source, const StftConfig& stft, int frames) {
  require(!source.trajectory.empty(), ErrorKind::Config, "synthetic source has an empty trajectory");
  if (source.trajectory.size() == 1) return std::vector<Pose>(static_cast<size_t>(frames), source.trajectory.front());
  const auto times = stft.frame_times(frames);
  return poses_at(source.trajectory, times);
}

// Per-bin transfer vectors for one pose; recomputed only when the pose changes.
class PoseTransfer {
 public:
  template <typename Fn>
  const std::vector<Eigen::VectorXcd>& get(const Pose& pose, int bins, Fn&& compute) {
    if (!valid_ || !same_pose(pose, pose_)) {
      values_.assign(static_cast<size_t>(bins), Eigen::VectorXcd());
      parallel_for(static_cast<size_t>(bins), [&](size_t b) { values_[b] = compute(static_cast<int>(b)); });
      pose_ = pose;
      valid_ = true;
    }
    return values_;
  }

 private:
  bool valid_ = false;
  Pose pose_;
  std::vector<Eigen::VectorXcd> values_;
};

}  // namespace

LocalCoeffSequence simulate_local_coeffs(const SyntheticSource& source, const ChamberSpec& chamber, const StftConfig& stft_cfg,
                                         double speed_of_sound) {
  chamber.validate();
  stft_cfg.validate();
  const double chamber_radius = chamber.mics.front().norm();
  const Eigen::MatrixXcd x = stft(source.excitation, stft_cfg);
  const int frames = static_cast<int>(x.rows());
  const int bins = stft_cfg.bins();
  const int rows = static_cast<int>(chamber.mics.size()) * sh_count(chamber.mic_order);
  const auto poses = frame_poses(source, stft_cfg, frames);

  LocalCoeffSequence seq;
  seq.stft = stft_cfg;
  seq.mic_order = chamber.mic_order;
  seq.mics = chamber.mics;
  seq.frames.resize(static_cast<size_t>(frames));
  PoseTransfer transfer;
  for (int tau = 0; tau < frames; ++tau) {
    const Pose& pose = poses[static_cast<size_t>(tau)];
    require(pose.origin.norm() + source.region_radius < chamber_radius, ErrorKind::Domain,
            "synthetic source leaves the chamber at frame " + std::to_string(tau));
    const auto& u = transfer.get(pose, bins, [&](int b) -> Eigen::VectorXcd {
      if (b == 0) return Eigen::VectorXcd::Zero(rows);
      const double hz = stft_cfg.bin_frequency(b);
      const Eigen::VectorXcd c = source_coeffs(source, pose, hz, speed_of_sound);
      std::vector<Eigen::Vector3d> rel;
      for (const auto& m : chamber.mics) rel.push_back(m - pose.origin);
      const int order = source.pattern_for(hz).order;
      return translation_matrix(rel, WaveNumber::from_frequency(hz, speed_of_sound), order, chamber.mic_order) * c;
    });
    LocalCoeffFrame& f = seq.frames[static_cast<size_t>(tau)];
    f.frame = tau;
    f.alpha.resize(rows, bins);
    for (int b = 0; b < bins; ++b) f.alpha.col(b) = x(tau, b) * u[static_cast<size_t>(b)];
  }
  return seq;
}

Signal ground_truth_signal(const SyntheticSource& source, const Eigen::Vector3d& point, const StftConfig& stft_cfg,
                           double speed_of_sound) {
  stft_cfg.validate();
  const Eigen::MatrixXcd x = stft(source.excitation, stft_cfg);
  const int frames = static_cast<int>(x.rows());
  const int bins = stft_cfg.bins();
  const auto poses = frame_poses(source, stft_cfg, frames);
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(frames, bins);
  PoseTransfer transfer;
  for (int tau = 0; tau < frames; ++tau) {
    const Pose& pose = poses[static_cast<size_t>(tau)];
    const Eigen::Vector3d d = point - pose.origin;
    require(d.norm() > source.region_radius, ErrorKind::Domain, "ground truth point lies inside the source region");
    const auto& u = transfer.get(pose, bins, [&](int b) -> Eigen::VectorXcd {
      if (b == 0) return Eigen::VectorXcd::Zero(1);
      const double hz = stft_cfg.bin_frequency(b);
      const auto k = WaveNumber::from_frequency(hz, speed_of_sound);
      const Eigen::VectorXcd c = source_coeffs(source, pose, hz, speed_of_sound);
      return Eigen::VectorXcd::Constant(1, (field_row(d, k, source.pattern_for(hz).order) * c)(0));
    });
    for (int b = 0; b < bins; ++b) y(tau, b) = x(tau, b) * u[static_cast<size_t>(b)](0);
  }
  return istft(y, stft_cfg, source.excitation.size());
}

MultiSignal ground_truth_egocentric(const SyntheticSource& source, std::span<const SphericalPoint> points,
                                    const StftConfig& stft_cfg, double speed_of_sound) {
  stft_cfg.validate();
  const Eigen::MatrixXcd x = stft(source.excitation, stft_cfg);
  const int bins = stft_cfg.bins();
  for (const auto& p : points)
    require(p.r > source.region_radius, ErrorKind::Domain, "ground truth point lies inside the source region");
  // In the mouth frame the field does not depend on the pose.
  std::vector<Eigen::VectorXcd> coeffs(static_cast<size_t>(bins));
  parallel_for(static_cast<size_t>(bins), [&](size_t b) {
    if (b > 0) coeffs[b] = source_coeffs(source, Pose{}, stft_cfg.bin_frequency(static_cast<int>(b)), speed_of_sound);
  });
  MultiSignal out(points.size());
  parallel_for(points.size(), [&](size_t i) {
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(x.rows(), bins);
    for (int b = 1; b < bins; ++b) {
      const double hz = stft_cfg.bin_frequency(b);
      const auto k = WaveNumber::from_frequency(hz, speed_of_sound);
      const Complex t = (field_row(points[i].cartesian(), k, source.pattern_for(hz).order) * coeffs[static_cast<size_t>(b)])(0);
      y.col(b) = t * x.col(b);
    }
    out[i] = istft(y, stft_cfg, source.excitation.size());
  });
  return out;
}

LearnableDataset make_learnable_dataset(int n_frames, std::uint64_t seed, const LearnableOptions& options) {
  require(n_frames >= 500, ErrorKind::Config, "learnable dataset needs at least 500 frames");
  const StftConfig cfg = options.stft;
  cfg.validate();
  const int bins = cfg.bins();
  const double speed = 343.0;
  const size_t length = static_cast<size_t>(cfg.hop) * static_cast<size_t>(n_frames - cfg.window / cfg.hop + 1);

  // Basis amplitude patterns, all with unit front amplitude.
  std::vector<DirectivityPattern> basis{
      DirectivityPattern::omni(),
      DirectivityPattern::cardioid(1),
      DirectivityPattern::from_function(1, [](const Eigen::Vector3d& v) { return 1.0 + 0.6 * v.z(); }),
      DirectivityPattern::cardioid(2),
  };
  const int nb = static_cast<int>(basis.size());
  const std::vector<double> gamma{-0.3, 0.0, 0.2, 0.4};
  const std::vector<double> tilt_gain{0.0, 0.6, -0.4, 1.0};

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Latent mixture weights: softmax of slow sinusoids.
  const auto times = cfg.frame_times(n_frames);
  Eigen::MatrixXd mixture(n_frames, nb);
  {
    Eigen::MatrixXd amp(nb, 3), freq(nb, 3), phase(nb, 3);
    for (int j = 0; j < nb; ++j)
      for (int h = 0; h < 3; ++h) {
        amp(j, h) = 0.6 + 0.8 * uni(rng);
        freq(j, h) = 0.03 + 0.3 * uni(rng);
        phase(j, h) = 2.0 * kPi * uni(rng);
      }
    for (int tau = 0; tau < n_frames; ++tau) {
      Eigen::VectorXd logits(nb);
      for (int j = 0; j < nb; ++j) {
        double s = 0.0;
        for (int h = 0; h < 3; ++h) s += amp(j, h) * std::sin(2.0 * kPi * freq(j, h) * times[static_cast<size_t>(tau)] + phase(j, h));
        logits(j) = s;
      }
      const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
      mixture.row(tau) = (e / e.sum()).transpose();
    }
  }

  // Silence gaps.
  std::vector<double> level(static_cast<size_t>(n_frames), 1.0);
  {
    const int target = static_cast<int>(std::lround(options.silence_fraction * n_frames));
    int silent = 0;
    std::uniform_int_distribution<int> len_dist(10, 40);
    std::uniform_int_distribution<int> start_dist(0, n_frames - 1);
    while (silent < target) {
      const int len = len_dist(rng);
      const int start = start_dist(rng);
      for (int t = start; t < std::min(n_frames, start + len); ++t) {
        if (level[static_cast<size_t>(t)] == 1.0) ++silent;
        level[static_cast<size_t>(t)] = 1e-4;
      }
    }
  }

  // Excitation spectrum.
  Eigen::MatrixXcd x = Eigen::MatrixXcd::Zero(n_frames, bins);
  for (int tau = 0; tau < n_frames; ++tau) {
    double tilt = -1.0;
    for (int j = 0; j < nb; ++j) tilt += tilt_gain[static_cast<size_t>(j)] * mixture(tau, j);
    for (int b = 1; b < bins; ++b) {
      const double f = cfg.bin_frequency(b) / 1000.0;
      const Complex g(normal(rng), normal(rng));
      x(tau, b) = g * level[static_cast<size_t>(tau)] * std::pow(f, tilt);
    }
  }

  // Stage 1 for each basis pattern through the real estimator; linearity combines them.
  const ChamberSpec chamber = ChamberSpec::full_sphere(options.chamber_mics, 2.74, 1);
  EstimatorOptions est_opts;
  est_opts.radius = options.source_radius;
  est_opts.speed_of_sound = speed;
  const GlobalEstimator estimator(chamber.mics, chamber.mic_order, cfg, est_opts);
  std::vector<GlobalCoeffFrame> beta(static_cast<size_t>(nb));
  for (int j = 0; j < nb; ++j) {
    SyntheticSource src;
    src.patterns = {basis[static_cast<size_t>(j)]};
    src.measurement_radius = options.grid_radius;
    LocalCoeffFrame local;
    local.alpha = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(chamber.mics.size()) * sh_count(1), bins);
    parallel_for(static_cast<size_t>(bins - 1), [&](size_t i) {
      const int b = static_cast<int>(i) + 1;
      const double hz = cfg.bin_frequency(b);
      local.alpha.col(b) = translation_matrix(chamber.mics, WaveNumber::from_frequency(hz, speed), src.order(), 1) *
                           source_coeffs(src, Pose{}, hz, speed);
    });
    beta[static_cast<size_t>(j)] = estimator.estimate(local);
  }

  LearnableDataset ds;
  ds.stft = cfg;
  ds.bands = BandTable::up_to(cfg.sample_rate / 2.0);
  ds.sh_order = options.sh_order;
  ds.grid = t_design_grid(options.grid_radius);
  ds.decode = decode_matrix(ds.grid.points, options.sh_order);
  ds.frame_times = times;
  ds.mixture = mixture;
  const int nbands = ds.bands.size();

  // Spectral shaping of the mixture, normalized so the weights at each bin sum to one.
  std::vector<Eigen::MatrixXd> m(static_cast<size_t>(nb), Eigen::MatrixXd::Zero(n_frames, bins));
  for (int tau = 0; tau < n_frames; ++tau)
    for (int b = 1; b < bins; ++b) {
      const double f = cfg.bin_frequency(b) / 1000.0;
      double total = 0.0;
      for (int j = 0; j < nb; ++j) total += mixture(tau, j) * std::pow(f, gamma[static_cast<size_t>(j)]);
      for (int j = 0; j < nb; ++j) m[static_cast<size_t>(j)](tau, b) = mixture(tau, j) * std::pow(f, gamma[static_cast<size_t>(j)]) / total;
    }

  auto render = [&](const Eigen::Vector3d& pos) {
    Eigen::MatrixXcd t(nb, bins);
    for (int j = 0; j < nb; ++j)
      for (int b = 0; b < bins; ++b) {
        const auto& bj = beta[static_cast<size_t>(j)].beta[static_cast<size_t>(b)];
        t(j, b) = bj.size() == 0 ? Complex(0.0)
                                 : (field_row(pos, WaveNumber::from_frequency(cfg.bin_frequency(b), speed),
                                              beta[static_cast<size_t>(j)].orders[static_cast<size_t>(b)]) *
                                    bj)(0);
      }
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n_frames, bins);
    for (int j = 0; j < nb; ++j)
      y += (m[static_cast<size_t>(j)].cast<Complex>().array().rowwise() * t.row(j).array()).matrix();
    return istft(y.cwiseProduct(x), cfg, length);
  };

  ds.reference = render(SphericalPoint{options.grid_radius, 0.0, 0.0}.cartesian());
  ds.proxy.resize(8);
  const Grid proxy = proxy_array(options.proxy_radius);
  parallel_for(proxy.size(), [&](size_t i) { ds.proxy[i] = render(proxy.points[i].cartesian()); });

  const size_t g_count = ds.grid.size();
  Eigen::MatrixXd stacked(static_cast<Eigen::Index>(g_count), static_cast<Eigen::Index>(n_frames) * nbands);
  {
    const Eigen::MatrixXd pref = third_octave_stps(ds.reference, cfg, ds.bands);
    std::vector<Eigen::MatrixXd> pg(g_count);
    parallel_for(g_count, [&](size_t g) {
      pg[g] = third_octave_stps(render(ds.grid.points[g].cartesian()), cfg, ds.bands);
    });
    for (int tau = 0; tau < n_frames; ++tau) {
      Eigen::MatrixXd p(static_cast<Eigen::Index>(g_count), nbands);
      for (size_t g = 0; g < g_count; ++g) p.row(static_cast<Eigen::Index>(g)) = pg[g].row(tau);
      const auto d = directivity_factor(p, pref.row(tau).transpose(), tau);
      stacked.middleCols(static_cast<Eigen::Index>(tau) * nbands, nbands) = d.d;
    }
  }
  const Eigen::MatrixXd a = sht_encode(stacked, ds.grid, options.sh_order);
  stacked.resize(0, 0);
  const int nc = sh_count(options.sh_order);
  ds.targets.resize(n_frames, static_cast<Eigen::Index>(nc) * nbands);
  for (int tau = 0; tau < n_frames; ++tau)
    for (int j = 0; j < nc; ++j)
      for (int c = 0; c < nbands; ++c) ds.targets(tau, j * nbands + c) = a(j, static_cast<Eigen::Index>(tau) * nbands + c);

  ds.features = aggregate_psd(ds.proxy, cfg);
  ds.voiced = voiced_mask(ds.reference, cfg);
  return ds;
}

namespace {

DirectivityPattern parse_pattern(const nlohmann::json& j) {
  const std::string kind = j.value("kind", "omni");
  if (kind == "omni") return DirectivityPattern::omni();
  if (kind == "cardioid") return DirectivityPattern::cardioid(j.value("order", 1));
  if (kind == "rear_lobe") return DirectivityPattern::rear_lobe(j.value("db", -20.0));
  if (kind == "coeffs") {
    DirectivityPattern p;
    p.order = j.at("order").get<int>();
    const auto v = j.at("coeffs").get<std::vector<double>>();
    p.coeffs = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    p.validate();
    return p;
  }
  fail(ErrorKind::Config, "unknown pattern kind '" + kind + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

Scene load_scene(const std::filesystem::path& path, std::uint64_t seed_override) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingInput, "scene file not found: " + path.string());
  const auto base = path.parent_path();
  Scene s;
  try {
    const auto j = nlohmann::json::parse(in);
    s.seed = seed_override != 0 ? seed_override : j.value("seed", std::uint64_t{1});
    if (j.contains("stft")) {
      const auto& t = j["stft"];
      s.stft.fft_size = t.value("fft_size", s.stft.fft_size);
      s.stft.window = t.value("window", s.stft.fft_size);
      s.stft.hop = t.value("hop", s.stft.hop);
      s.stft.sample_rate = t.value("sample_rate", s.stft.sample_rate);
    }
    s.stft.validate();

    const auto src = j.value("source", nlohmann::json::object());
    if (src.contains("trajectory")) {
      const auto traj = resolve(base, src["trajectory"].get<std::string>());
      require(std::filesystem::exists(traj), ErrorKind::MissingInput, "trajectory file not found: " + traj.string());
      s.source.trajectory = read_pose_csv(traj);
    }
    if (src.contains("patterns")) {
      s.source.patterns.clear();
      for (const auto& p : src["patterns"]) {
        s.source.patterns.push_back(parse_pattern(p));
        if (p.contains("upper_hz")) s.source.pattern_upper_hz.push_back(p["upper_hz"].get<double>());
      }
    } else if (src.contains("pattern")) {
      s.source.patterns = {parse_pattern(src["pattern"])};
    }
    for (const auto& p : s.source.patterns) p.validate();
    s.source.measurement_radius = src.value("measurement_radius", s.source.measurement_radius);
    s.source.region_radius = src.value("region_radius", s.source.region_radius);

    const auto ch = j.value("chamber", nlohmann::json::object());
    const std::string layout = ch.value("layout", "band");
    const int count = ch.value("count", 281);
    const double radius = ch.value("radius", 2.74);
    const int v = ch.value("mic_order", 1);
    if (layout == "band") s.chamber = ChamberSpec::band(count, radius, ch.value("max_elevation_deg", 30.0), v);
    else if (layout == "sphere") s.chamber = ChamberSpec::full_sphere(count, radius, v);
    else fail(ErrorKind::Config, "unknown chamber layout '" + layout + "'");
    s.chamber.validate();

    const auto ex = j.value("excitation", nlohmann::json::object());
    const std::string kind = ex.value("kind", "pink");
    if (kind == "pink") s.excitation.kind = ExcitationKind::PinkNoise;
    else if (kind == "white") s.excitation.kind = ExcitationKind::WhiteNoise;
    else if (kind == "tone") s.excitation.kind = ExcitationKind::Tone;
    else if (kind == "wav") s.excitation.kind = ExcitationKind::Wav;
    else fail(ErrorKind::Config, "unknown excitation kind '" + kind + "'");
    s.excitation.seconds = ex.value("seconds", s.excitation.seconds);
    s.excitation.rms = ex.value("rms", s.excitation.rms);
    s.excitation.tone_hz = ex.value("tone_hz", s.excitation.tone_hz);
    if (ex.contains("path")) s.excitation.wav = resolve(base, ex["path"].get<std::string>());
    s.excitation.seed = s.seed;

    const auto es = j.value("estimator", nlohmann::json::object());
    s.estimator.radius = es.value("radius", s.estimator.radius);
    s.estimator.speed_of_sound = es.value("speed_of_sound", s.estimator.speed_of_sound);
    s.estimator.min_frequency = es.value("min_frequency", s.estimator.min_frequency);
    s.estimator.tikhonov = es.value("tikhonov", s.estimator.tikhonov);
    s.estimator.cap_order = es.value("cap_order", s.estimator.cap_order);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "scene " + path.string() + ": " + e.what());
  }
  s.source.excitation = make_excitation(s.excitation, s.stft.sample_rate);
  return s;
}

}  // namespace egodir
