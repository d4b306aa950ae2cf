#include "egodir/soundfield.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "egodir/container.hpp"
#include "egodir/error.hpp"
#include "egodir/parallel.hpp"

namespace egodir {

namespace {

constexpr double kPi = std::numbers::pi;

// Mic- and k-independent part of the translation coefficients.
struct TranslationTerm {
  int l;
  int y_index;  // ACN index of Y_l^{mu-m}
  Complex coeff;
};

struct TranslationTable {
  int order = 0;
  int mic_order = 0;
  // [row (nu,mu)][col (n,m)] -> terms
  std::vector<std::vector<std::vector<TranslationTerm>>> terms;
};

std::shared_ptr<const TranslationTable> translation_table(int order, int mic_order) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const TranslationTable>> tables;
  {
    std::lock_guard lock(mutex);
    if (auto it = tables.find({order, mic_order}); it != tables.end()) return it->second;
  }
  auto table = std::make_shared<TranslationTable>();
  table->order = order;
  table->mic_order = mic_order;
  table->terms.assign(static_cast<size_t>(sh_count(mic_order)), std::vector<std::vector<TranslationTerm>>(static_cast<size_t>(sh_count(order))));
  const Complex i_unit(0.0, 1.0);
  for (int nu = 0; nu <= mic_order; ++nu)
    for (int mu = -nu; mu <= nu; ++mu)
      for (int n = 0; n <= order; ++n)
        for (int m = -n; m <= n; ++m) {
          auto& list = table->terms[static_cast<size_t>(acn_index(nu, mu))][static_cast<size_t>(acn_index(n, m))];
          for (int l = std::abs(n - nu); l <= n + nu; ++l) {
            if ((n + nu + l) % 2 != 0 || std::abs(mu - m) > l) continue;
            const double w1 = wigner3j(n, nu, l, 0, 0, 0);
            const double w2 = wigner3j(n, nu, l, m, -mu, mu - m);
            if (w1 == 0.0 || w2 == 0.0) continue;
            const int power = ((nu - n + l) % 4 + 4) % 4;
            Complex phase = std::pow(i_unit, power);
            // (-1)^(2m - mu) as printed; equal to (-1)^mu for integer m.
            if (std::abs(2 * m - mu) % 2 == 1) phase = -phase;
            const double norm = std::sqrt((2.0 * n + 1.0) * (2.0 * nu + 1.0) * (2.0 * l + 1.0) / (4.0 * kPi));
            list.push_back({l, acn_index(l, mu - m), 4.0 * kPi * phase * norm * w1 * w2});
          }
        }
  std::lock_guard lock(mutex);
  tables.emplace(std::make_pair(order, mic_order), table);
  return table;
}

}  // namespace

Eigen::MatrixXcd translation_matrix(std::span<const Eigen::Vector3d> mics, WaveNumber k, int order, int mic_order) {
  require(order >= 0 && mic_order >= 0, ErrorKind::Domain, "translation_matrix: orders must be non-negative");
  const auto table = translation_table(order, mic_order);
  const int rows_per_mic = sh_count(mic_order);
  Eigen::MatrixXcd s(static_cast<Eigen::Index>(mics.size()) * rows_per_mic, sh_count(order));
  for (size_t q = 0; q < mics.size(); ++q) {
    const SphericalPoint p = SphericalPoint::from_cartesian(mics[q]);
    require(p.r > 0.0, ErrorKind::Domain, "translation_matrix: microphone at the expansion origin (singular Hankel)");
    const auto h = sph_hankel_all(order + mic_order, k.value * p.r);
    auto y = complex_sh_all(order + mic_order, p.colatitude(), p.azimuth);
    for (auto& v : y) v = std::conj(v);
    for (int row = 0; row < rows_per_mic; ++row)
      for (int col = 0; col < sh_count(order); ++col) {
        Complex sum = 0.0;
        for (const auto& t : table->terms[static_cast<size_t>(row)][static_cast<size_t>(col)])
          sum += t.coeff * h[static_cast<size_t>(t.l)] * y[static_cast<size_t>(t.y_index)];
        s(static_cast<Eigen::Index>(q) * rows_per_mic + row, col) = sum;
      }
  }
  return s;
}

std::shared_ptr<const Eigen::MatrixXcd> TranslationCache::get(std::span<const Eigen::Vector3d> mics, WaveNumber k, int order,
                                                              int mic_order) {
  std::vector<double> geometry;
  geometry.reserve(mics.size() * 3);
  for (const auto& m : mics) geometry.insert(geometry.end(), {m.x(), m.y(), m.z()});
  Key key{std::move(geometry), k.value, order, mic_order};
  {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  }
  auto value = std::make_shared<const Eigen::MatrixXcd>(translation_matrix(mics, k, order, mic_order));
  std::lock_guard lock(mutex_);
  return entries_.emplace(std::move(key), value).first->second;
}

size_t TranslationCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// Estimation

GlobalEstimator::GlobalEstimator(std::vector<Eigen::Vector3d> mics, int mic_order, StftConfig stft, EstimatorOptions options,
                                 TranslationCache* cache)
    : mics_(std::move(mics)), mic_order_(mic_order), stft_(stft), options_(options) {
  stft_.validate();
  require(!mics_.empty() && mic_order_ >= 0, ErrorKind::Config, "estimator needs microphones and a non-negative mic order");
  require(options_.radius > 0.0, ErrorKind::Config, "estimator source radius must be positive");
  for (const auto& m : mics_)
    require(m.norm() > options_.radius, ErrorKind::Domain, "real microphones must lie outside the source region");
  const int equations = static_cast<int>(mics_.size()) * sh_count(mic_order_);
  solvable_ = static_cast<int>(std::floor(std::sqrt(static_cast<double>(equations)))) - 1;
  while (sh_count(solvable_ + 1) <= equations) ++solvable_;
  while (solvable_ >= 0 && sh_count(solvable_) > equations) --solvable_;
  require(solvable_ >= 1, ErrorKind::Numeric,
          "underdetermined system: order 1 needs 4 equations, only " + std::to_string(equations) + " available");

  const int bins = stft_.bins();
  orders_.assign(static_cast<size_t>(bins), -1);
  conditions_.assign(static_cast<size_t>(bins), 1.0);
  forward_.resize(static_cast<size_t>(bins));
  inverse_.resize(static_cast<size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    const int trunc = truncation_order_for_bin(b);
    if (trunc <= 0) continue;
    const int order = options_.cap_order ? std::min(trunc, solvable_) : trunc;
    require(sh_count(order) <= equations, ErrorKind::Numeric,
            "underdetermined system at bin " + std::to_string(b) + ": " + std::to_string(sh_count(order)) +
                " coefficients required, " + std::to_string(equations) + " equations available");
    orders_[static_cast<size_t>(b)] = order;
  }

  TranslationCache local_cache;
  TranslationCache& tc = cache ? *cache : local_cache;
  parallel_for(static_cast<size_t>(bins), [&](size_t b) {
    const int order = orders_[b];
    if (order < 0) return;
    const WaveNumber k = WaveNumber::from_frequency(stft_.bin_frequency(static_cast<int>(b)), options_.speed_of_sound);
    forward_[b] = tc.get(mics_, k, order, mic_order_);
    Eigen::BDCSVD<Eigen::MatrixXcd> svd(*forward_[b], Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double lambda = options_.tikhonov * sv(0);
    Eigen::VectorXd filt(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i) filt(i) = sv(i) / (sv(i) * sv(i) + lambda * lambda);
    inverse_[b] = svd.matrixV() * filt.asDiagonal() * svd.matrixU().adjoint();
    const double smin = sv(sv.size() - 1);
    conditions_[b] = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  });
}

int GlobalEstimator::truncation_order_for_bin(int bin) const {
  const double f = stft_.bin_frequency(bin);
  if (bin == 0 || f < options_.min_frequency) return 0;
  return truncation_order(WaveNumber::from_frequency(f, options_.speed_of_sound), options_.radius);
}

Eigen::VectorXcd GlobalEstimator::solve_bin(int bin, const Eigen::VectorXcd& alpha) const {
  const auto b = static_cast<size_t>(bin);
  if (orders_[b] < 0) return {};
  require(alpha.size() == inverse_[b].cols(), ErrorKind::Shape, "solve_bin: local coefficient count mismatch");
  return inverse_[b] * alpha;
}

GlobalCoeffFrame GlobalEstimator::estimate(const LocalCoeffFrame& local) const {
  require(local.alpha.cols() == stft_.bins(), ErrorKind::Shape, "local frame bin count does not match the estimator");
  require(local.alpha.rows() == static_cast<Eigen::Index>(mics_.size()) * sh_count(mic_order_), ErrorKind::Shape,
          "local frame coefficient count does not match the microphone layout");
  GlobalCoeffFrame out;
  out.frame = local.frame;
  out.radius = options_.radius;
  out.orders = orders_;
  out.beta.resize(orders_.size());
  out.residual.assign(orders_.size(), 0.0);
  for (size_t b = 0; b < orders_.size(); ++b) {
    if (orders_[b] < 0) continue;
    const Eigen::VectorXcd alpha = local.alpha.col(static_cast<Eigen::Index>(b));
    out.beta[b] = inverse_[b] * alpha;
    const double norm = alpha.norm();
    out.residual[b] = norm > 0.0 ? (*forward_[b] * out.beta[b] - alpha).norm() / norm : 0.0;
    for (const auto& v : out.beta[b])
      require(std::isfinite(v.real()) && std::isfinite(v.imag()), ErrorKind::Numeric, "non-finite global coefficient");
  }
  return out;
}

GlobalCoeffSequence estimate_global_coeffs(const LocalCoeffSequence& local, const EstimatorOptions& options) {
  GlobalEstimator estimator(local.mics, local.mic_order, local.stft, options);
  GlobalCoeffSequence out;
  out.stft = local.stft;
  out.speed_of_sound = options.speed_of_sound;
  out.frames.resize(local.frames.size());
  parallel_for(local.frames.size(), [&](size_t i) { out.frames[i] = estimator.estimate(local.frames[i]); });
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

Eigen::RowVectorXcd field_row(const Eigen::Vector3d& x, WaveNumber k, int order) {
  const SphericalPoint p = SphericalPoint::from_cartesian(x);
  const auto h = sph_hankel_all(order, k.value * p.r);
  const auto y = complex_sh_all(order, p.colatitude(), p.azimuth);
  Eigen::RowVectorXcd row(sh_count(order));
  for (int n = 0; n <= order; ++n)
    for (int m = -n; m <= n; ++m) row(acn_index(n, m)) = h[static_cast<size_t>(n)] * y[static_cast<size_t>(acn_index(n, m))];
  return row;
}

MultiSignal render_virtual_mics(const GlobalCoeffSequence& global, std::span<const std::vector<SphericalPoint>> trajectories,
                                std::span<const Pose> poses, size_t length) {
  const auto& cfg = global.stft;
  const size_t frames = global.frames.size();
  require(poses.size() == frames, ErrorKind::Shape, "render: one pose per frame required");
  for (const auto& t : trajectories) require(t.size() == frames, ErrorKind::Shape, "render: one trajectory point per frame required");
  MultiSignal out(trajectories.size());
  parallel_for(trajectories.size(), [&](size_t i) {
    Eigen::MatrixXcd spec = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(frames), cfg.bins());
    Eigen::Vector3d last(std::nan(""), 0.0, 0.0);
    std::vector<Eigen::RowVectorXcd> rows(static_cast<size_t>(cfg.bins()));
    for (size_t tau = 0; tau < frames; ++tau) {
      const auto& frame = global.frames[tau];
      const Eigen::Vector3d x = egocentric_to_world(poses[tau], trajectories[i][tau]);
      require(x.norm() > frame.radius, ErrorKind::Domain, "virtual microphone inside the source region");
      if (x != last) {
        for (int b = 0; b < cfg.bins(); ++b) {
          const int order = frame.orders[static_cast<size_t>(b)];
          rows[static_cast<size_t>(b)] = order < 0 ? Eigen::RowVectorXcd()
                                                   : field_row(x, WaveNumber::from_frequency(cfg.bin_frequency(b), global.speed_of_sound), order);
        }
        last = x;
      }
      for (int b = 0; b < cfg.bins(); ++b) {
        const auto& beta = frame.beta[static_cast<size_t>(b)];
        if (beta.size() == 0) continue;
        auto& row = rows[static_cast<size_t>(b)];
        if (row.size() != beta.size()) {
          row = field_row(x, WaveNumber::from_frequency(cfg.bin_frequency(b), global.speed_of_sound), frame.orders[static_cast<size_t>(b)]);
        }
        spec(static_cast<Eigen::Index>(tau), b) = (row * beta)(0);
      }
    }
    out[i] = istft(spec, cfg, length);
  });
  return out;
}

Signal render_virtual_mic(const GlobalCoeffSequence& global, std::span<const SphericalPoint> trajectory,
                          std::span<const Pose> poses, size_t length) {
  std::vector<std::vector<SphericalPoint>> t{std::vector<SphericalPoint>(trajectory.begin(), trajectory.end())};
  return render_virtual_mics(global, t, poses, length).front();
}

MultiSignal render_grid(const GlobalCoeffSequence& global, const Grid& grid, std::span<const Pose> poses, size_t length) {
  std::vector<std::vector<SphericalPoint>> t;
  t.reserve(grid.size());
  for (const auto& p : grid.points) t.emplace_back(global.frames.size(), p);
  return render_virtual_mics(global, t, poses, length);
}

// ---------------------------------------------------------------------------
// Muting

MaskTimeline mask_timeline(std::span<const Eigen::Vector3d> real_mics, std::span<const Pose> poses, const Grid& grid,
                           double sample_rate, size_t length, double frame_seconds) {
  MaskTimeline tl;
  tl.frame_samples = std::max(1, static_cast<int>(std::lround(frame_seconds * sample_rate)));
  const size_t frames = (length + static_cast<size_t>(tl.frame_samples) - 1) / static_cast<size_t>(tl.frame_samples);
  for (size_t f = 0; f < frames; ++f) {
    const double t = (static_cast<double>(f) + 0.5) * tl.frame_samples / sample_rate;
    tl.masks.push_back(valid_zone_mask(real_mics, interpolate_pose(poses, t), grid));
  }
  return tl;
}

MultiSignal apply_muting(const MultiSignal& signals, const MaskTimeline& masks, double sample_rate, double crossfade_seconds) {
  const auto fade = std::max<long long>(1, std::llround(crossfade_seconds * sample_rate));
  const auto fs = static_cast<size_t>(masks.frame_samples);
  MultiSignal out(signals.size());
  for (size_t g = 0; g < signals.size(); ++g) {
    const auto& x = signals[g];
    auto& y = out[g];
    y.resize(x.size());
    auto target = [&](size_t frame) {
      if (masks.masks.empty()) return 1.0;
      const auto& m = masks.masks[std::min(frame, masks.masks.size() - 1)];
      require(g < m.size(), ErrorKind::Shape, "apply_muting: mask has fewer points than signals");
      return m[g] ? 1.0 : kMuteGain;
    };
    double from = target(0), to = from;
    long long ramp_pos = fade;
    for (size_t n = 0; n < x.size(); ++n) {
      if (n % fs == 0) {
        const double next = target(n / fs);
        if (next != to) {
          // Start a new ramp from the current gain.
          from = from + (to - from) * std::min(1.0, static_cast<double>(ramp_pos) / static_cast<double>(fade));
          to = next;
          ramp_pos = 0;
        }
      }
      double gain = to;
      if (ramp_pos < fade) {
        gain = from + (to - from) * static_cast<double>(ramp_pos) / static_cast<double>(fade);
        ++ramp_pos;
        if (ramp_pos == fade) from = to;
      }
      y[n] = gain * x[n];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

void LocalCoeffSequence::save(const std::filesystem::path& path) const {
  Container c("local_coeffs");
  c.meta() = {{"mic_order", mic_order},
              {"mics", static_cast<int>(mics.size())},
              {"bins", stft.bins()},
              {"frames", static_cast<int>(frames.size())},
              {"stft", {{"fft_size", stft.fft_size}, {"window", stft.window}, {"hop", stft.hop}, {"sample_rate", stft.sample_rate}}}};
  Eigen::MatrixXd pos(static_cast<Eigen::Index>(mics.size()), 3);
  for (size_t q = 0; q < mics.size(); ++q) pos.row(static_cast<Eigen::Index>(q)) = mics[q].transpose();
  c.add("mic_positions", pos);
  for (const auto& f : frames) c.add("alpha/" + std::to_string(f.frame), f.alpha);
  c.save(path);
}

namespace {
StftConfig stft_from_json(const nlohmann::json& j) {
  StftConfig s;
  s.fft_size = j.at("fft_size");
  s.window = j.at("window");
  s.hop = j.at("hop");
  s.sample_rate = j.at("sample_rate");
  return s;
}
}  // namespace

LocalCoeffSequence LocalCoeffSequence::load(const std::filesystem::path& path) {
  const auto c = Container::load(path, "local_coeffs");
  LocalCoeffSequence s;
  s.stft = stft_from_json(c.meta().at("stft"));
  s.mic_order = c.meta().at("mic_order");
  const auto pos = c.get("mic_positions").matrix();
  for (Eigen::Index q = 0; q < pos.rows(); ++q) s.mics.emplace_back(pos(q, 0), pos(q, 1), pos(q, 2));
  const int frames = c.meta().at("frames");
  for (int f = 0; f < frames; ++f) s.frames.push_back({f, c.get("alpha/" + std::to_string(f)).complex_matrix()});
  return s;
}

void GlobalCoeffSequence::save(const std::filesystem::path& path) const {
  Container c("global_coeffs");
  std::vector<int> orders = frames.empty() ? std::vector<int>{} : frames.front().orders;
  c.meta() = {{"bins", stft.bins()},
              {"frames", static_cast<int>(frames.size())},
              {"radius", frames.empty() ? 0.0 : frames.front().radius},
              {"orders", orders},
              {"speed_of_sound", speed_of_sound},
              {"stft", {{"fft_size", stft.fft_size}, {"window", stft.window}, {"hop", stft.hop}, {"sample_rate", stft.sample_rate}}}};
  for (const auto& f : frames) {
    std::vector<double> flat;
    for (const auto& b : f.beta)
      for (const auto& v : b) flat.insert(flat.end(), {v.real(), v.imag()});
    c.add("beta/" + std::to_string(f.frame), {static_cast<std::int64_t>(flat.size() / 2), 2}, flat);
    c.add_vector("residual/" + std::to_string(f.frame), f.residual);
  }
  c.save(path);
}

GlobalCoeffSequence GlobalCoeffSequence::load(const std::filesystem::path& path) {
  const auto c = Container::load(path, "global_coeffs");
  GlobalCoeffSequence s;
  s.stft = stft_from_json(c.meta().at("stft"));
  s.speed_of_sound = c.meta().at("speed_of_sound");
  const auto orders = c.meta().at("orders").get<std::vector<int>>();
  const double radius = c.meta().at("radius");
  const int frames = c.meta().at("frames");
  for (int f = 0; f < frames; ++f) {
    GlobalCoeffFrame g;
    g.frame = f;
    g.radius = radius;
    g.orders = orders;
    const auto& t = c.get("beta/" + std::to_string(f));
    size_t pos = 0;
    for (int order : orders) {
      const int count = order < 0 ? 0 : sh_count(order);
      Eigen::VectorXcd v(count);
      for (int i = 0; i < count; ++i, ++pos) v(i) = {t.data[2 * pos], t.data[2 * pos + 1]};
      g.beta.push_back(std::move(v));
    }
    g.residual = c.get("residual/" + std::to_string(f)).values();
    s.frames.push_back(std::move(g));
  }
  return s;
}

}  // namespace egodir
