// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any criterion fails.
//
//   acceptance [--only 3,4] [--out dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "egodir/directivity.hpp"
#include "egodir/error.hpp"
#include "egodir/features.hpp"
#include "egodir/pipeline.hpp"
#include "egodir/regressors.hpp"
#include "egodir/sh_kernel.hpp"
#include "egodir/soundfield.hpp"
#include "egodir/synth.hpp"
#include "oracles.hpp"

using namespace egodir;
namespace fs = std::filesystem;
using std::numbers::pi;

namespace {

fs::path g_out = "acceptance_out";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... v) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

double db(double ratio) { return 10.0 * std::log10(ratio); }

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Eigen::VectorXd random_pattern(int order, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Eigen::VectorXd c(sh_count(order));
  for (auto& v : c) v = n(rng);
  return c;
}

// ---------------------------------------------------------------- 1

Outcome c1_sh_machinery() {
  const Grid g = t_design_grid(1.0);
  const int order = 9;
  const auto gsize = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd yr(gsize, sh_count(order));
  Eigen::MatrixXcd yc(gsize, sh_count(order));
  for (Eigen::Index i = 0; i < gsize; ++i) {
    const auto& p = g.points[static_cast<size_t>(i)];
    const auto r = real_sh_all(order, p.colatitude(), p.azimuth);
    const auto c = complex_sh_all(order, p.colatitude(), p.azimuth);
    for (int j = 0; j < sh_count(order); ++j) {
      yr(i, j) = r[static_cast<size_t>(j)];
      yc(i, j) = c[static_cast<size_t>(j)];
    }
  }
  const double w = 4.0 * pi / static_cast<double>(g.size());
  const Eigen::MatrixXd er = w * yr.transpose() * yr - Eigen::MatrixXd::Identity(yr.cols(), yr.cols());
  const Eigen::MatrixXd ec = (w * yc.adjoint() * yc - Eigen::MatrixXcd::Identity(yc.cols(), yc.cols())).cwiseAbs();
  const double ortho9 = std::max(er.cwiseAbs().maxCoeff(), ec.maxCoeff());
  const int n8 = sh_count(8);
  const double ortho8 = std::max(er.topLeftCorner(n8, n8).cwiseAbs().maxCoeff(), ec.topLeftCorner(n8, n8).maxCoeff());

  double w3j = 0.0;
  for (int j1 = 0; j1 <= 5; ++j1)
    for (int j2 = 0; j2 <= 5; ++j2)
      for (int j3 = 0; j3 <= 5; ++j3)
        for (int m1 = -j1; m1 <= j1; ++m1)
          for (int m2 = -j2; m2 <= j2; ++m2)
            for (int m3 = -j3; m3 <= j3; ++m3)
              w3j = std::max(w3j, std::abs(wigner3j(j1, j2, j3, m1, m2, m3) - oracle::wigner3j_racah(j1, j2, j3, m1, m2, m3)));

  double wronskian = 0.0;
  for (int n = 0; n <= 12; ++n)
    for (double x = 0.1; x <= 50.0; x *= 1.07) {
      const auto j = sph_bessel_j_all(n + 1, x);
      const auto y = sph_bessel_y_all(n + 1, x);
      const double jp = n / x * j[static_cast<size_t>(n)] - j[static_cast<size_t>(n) + 1];
      const double yp = n / x * y[static_cast<size_t>(n)] - y[static_cast<size_t>(n) + 1];
      wronskian = std::max(wronskian, std::abs((j[static_cast<size_t>(n)] * yp - jp * y[static_cast<size_t>(n)]) * x * x - 1.0));
    }
  return {ortho9 <= 1e-9 && w3j <= 1e-12 && wronskian <= 1e-8,
          fmt("orthonormality max|G-I| n<=9 %.2e (n<=8 %.2e; design exact to degree 16), 3-j vs Racah %.2e, Wronskian %.2e",
              ortho9, ortho8, w3j, wronskian)};
}

// ---------------------------------------------------------------- 2

Outcome c2_encode_decode() {
  const Grid g = t_design_grid(1.5);
  const auto y9 = decode_matrix(g.points, 9);
  const double w = 4.0 * pi / static_cast<double>(g.size());
  double round_trip = 0.0, parseval9 = 0.0, parseval8 = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Eigen::VectorXd a = random_pattern(9, s);
    const Eigen::VectorXd d = y9 * a;
    const Eigen::MatrixXd enc = sht_encode(d, g, 9);
    round_trip = std::max(round_trip, (sht_decode(enc, y9).col(0) - d).cwiseAbs().maxCoeff());
    parseval9 = std::max(parseval9, std::abs(w * d.squaredNorm() - a.squaredNorm()) / a.squaredNorm());
    const Eigen::VectorXd a8 = random_pattern(8, 100 + s);
    const Eigen::VectorXd d8 = decode_matrix(g.points, 8) * a8;
    parseval8 = std::max(parseval8, std::abs(w * d8.squaredNorm() - a8.squaredNorm()) / a8.squaredNorm());
  }

  // order search on positive frames that mix every order up to 9
  std::vector<DirectivityFrame> frames;
  for (int f = 0; f < 4; ++f) {
    Eigen::MatrixXd d(y9.rows(), 6);
    for (int c = 0; c < 6; ++c) {
      Eigen::VectorXd a = random_pattern(9, 1000 + 10 * f + c);
      for (int n = 0; n <= 9; ++n) a.segment(n * n, 2 * n + 1) *= std::pow(0.6, n);
      Eigen::VectorXd v = y9 * a;
      d.col(c) = (1.1 + 0.9 * v.array() / v.cwiseAbs().maxCoeff()).matrix();
    }
    frames.push_back({f, d});
  }
  const auto table = order_search(frames, g, 12);
  int residual_up = 0, error_up = 0;
  for (Eigen::Index c = 0; c < table.residual.cols(); ++c)
    for (Eigen::Index i = 1; i < table.residual.rows(); ++i) {
      residual_up += table.residual(i, c) > table.residual(i - 1, c) + 1e-12;
      error_up += table.error_db(i, c) > table.error_db(i - 1, c) + 1e-12;
    }
  return {round_trip <= 1e-8 && parseval9 <= 1e-8 && residual_up == 0 && error_up == 0,
          fmt("round trip max %.2e, Parseval rel. n=9 %.2e (n=8 %.2e), order-search increases: residual %d, dB error %d",
              round_trip, parseval9, parseval8, residual_up, error_up)};
}

// ---------------------------------------------------------------- 3, 4 (shared stage-1 runs)

struct Stage1 {
  StftConfig stft{512, 512, 128, 8000.0};
  Grid grid;
  BandTable bands;
  GlobalCoeffSequence global;
  MultiSignal rendered, truth;
  Signal reference;
  std::vector<bool> limited;  // per bin: estimator order below the cap-free order or the source order
  SyntheticSource source;
};

// Both patterns share one estimator; building its per-bin translation systems dominates.
const Stage1& stage1(int pattern) {
  static std::map<int, Stage1> cache;
  static std::unique_ptr<GlobalEstimator> estimator;
  static const ChamberSpec chamber = ChamberSpec::full_sphere(128, 2.74, 1);
  if (auto it = cache.find(pattern); it != cache.end()) return it->second;
  Stage1 s;
  s.grid = t_design_grid(1.5);
  s.bands = BandTable::up_to(s.stft.sample_rate / 2.0);
  EstimatorOptions eo;
  eo.radius = 1.0;        // N(k) >= 3 from the lowest band up
  eo.min_frequency = 5.0; // the white-noise oracle has energy down to the first bin
  if (!estimator) estimator = std::make_unique<GlobalEstimator>(chamber.mics, chamber.mic_order, s.stft, eo);
  s.source.patterns = {pattern == 0 ? DirectivityPattern::omni() : DirectivityPattern::cardioid(3)};
  ExcitationSpec ex;
  ex.kind = ExcitationKind::WhiteNoise;
  ex.seconds = 0.6;
  ex.seed = 3;
  s.source.excitation = make_excitation(ex, s.stft.sample_rate);
  const auto local = simulate_local_coeffs(s.source, chamber, s.stft);
  s.global.stft = s.stft;
  s.global.speed_of_sound = eo.speed_of_sound;
  for (const auto& f : local.frames) s.global.frames.push_back(estimator->estimate(f));
  const std::vector<Pose> poses(s.global.frames.size());
  const size_t len = s.source.excitation.size();
  s.rendered = render_grid(s.global, s.grid, poses, len);
  s.truth = ground_truth_egocentric(s.source, s.grid.points, s.stft);
  const std::vector<SphericalPoint> ref(s.global.frames.size(), SphericalPoint::from_degrees(1.5, 0, 0));
  s.reference = render_virtual_mic(s.global, ref, poses, len);
  for (int b = 0; b < s.stft.bins(); ++b)
    s.limited.push_back(estimator->order_for_bin(b) < std::max(estimator->truncation_order_for_bin(b), s.source.order()));
  return cache.emplace(pattern, std::move(s)).first->second;
}

Outcome c3_stage1_fidelity() {
  double worst = -1e300;
  int checked = 0, skipped = 0;
  std::string per_pattern;
  for (int pattern : {0, 1}) {
    const Stage1& s = stage1(pattern);
    // a band counts only if no limited bin lies inside it or within the 4-bin
    // Blackman-Harris main lobe of its edges
    std::vector<bool> band_ok;
    const double reach = 4.0 * s.stft.sample_rate / s.stft.fft_size;
    for (int c = 0; c < s.bands.size(); ++c) {
      bool ok = true;
      for (int b = 1; b < s.stft.bins(); ++b) {
        const double f = s.stft.bin_frequency(b);
        if (f >= s.bands.lower[static_cast<size_t>(c)] - reach && f < s.bands.upper[static_cast<size_t>(c)] + reach &&
            s.limited[static_cast<size_t>(b)])
          ok = false;
      }
      band_ok.push_back(ok);
    }
    // error power relative to the field power on the grid, per band
    Eigen::RowVectorXd pe = Eigen::RowVectorXd::Zero(s.bands.size()), pt = pe;
    for (size_t g = 0; g < s.grid.size(); ++g) {
      Signal diff(s.truth[g].size());
      for (size_t i = 0; i < diff.size(); ++i) diff[i] = s.rendered[g][i] - s.truth[g][i];
      pe += third_octave_stps(diff, s.stft, s.bands).colwise().sum();
      pt += third_octave_stps(s.truth[g], s.stft, s.bands).colwise().sum();
    }
    double pw = -1e300;
    for (int c = 0; c < s.bands.size(); ++c) {
      if (!band_ok[static_cast<size_t>(c)]) {
        ++skipped;
        continue;
      }
      pw = std::max(pw, db(pe(c) / pt(c)));
      ++checked;
    }
    worst = std::max(worst, pw);
    per_pattern += fmt("%s %.1f dB; ", pattern == 0 ? "monopole" : "order-3 cardioid", pw);
  }

  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  std::vector<Eigen::Vector3d> mics;
  for (int i = 0; i < 6; ++i) mics.push_back(2.0 * Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized());
  const double tr = (translation_matrix(mics, WaveNumber(6.0), 4, 1) - oracle::translation_bruteforce(mics, 6.0, 4, 1)).cwiseAbs().maxCoeff();
  return {worst <= -40.0 && tr <= 1e-10 && checked > 0,
          fmt("worst band error %s%d band checks, %d order-limited bands skipped; translation vs brute force %.2e", per_pattern.c_str(),
              checked, skipped, tr)};
}

Outcome c4_directivity() {
  const Stage1& s = stage1(1);
  const auto frames = measure_directivity(s.rendered, s.reference, s.stft, s.bands);
  const auto& pattern = s.source.patterns.front();
  double sum = 0.0;
  long count = 0;
  for (const auto& f : frames)
    for (size_t g = 0; g < s.grid.size(); ++g) {
      const double want = pattern.directivity(s.grid.points[g]);
      for (int c = 0; c < s.bands.size(); ++c) {
        sum += std::abs(f.d(static_cast<Eigen::Index>(g), c) - want);
        ++count;
      }
    }
  const double mae = sum / static_cast<double>(count);

  // omnidirectional source in the band chamber: D = 1 at every point the mask keeps
  Scene scene;
  scene.stft = s.stft;
  scene.chamber = ChamberSpec::band(281, 2.74, 30.0, 1);
  scene.estimator.radius = 0.1;  // order-0 field; a small region keeps the band-chamber systems small
  ExcitationSpec ex;
  ex.seconds = 0.6;
  ex.seed = 4;
  scene.source.excitation = make_excitation(ex, scene.stft.sample_rate);
  RenderOptions ro;
  const auto r = render_scene(scene, ro);
  const auto keep = valid_zone_mask(scene.chamber.mics, Pose{}, r.grid);
  const auto omni = measure_directivity(r.grid_signals, r.reference, r.stft, s.bands);
  double omni_err = 0.0;
  int kept = 0;
  for (size_t g = 0; g < r.grid.size(); ++g) {
    if (!keep[g]) continue;
    ++kept;
    for (const auto& f : omni) omni_err = std::max(omni_err, (f.d.row(static_cast<Eigen::Index>(g)).array() - 1.0).abs().maxCoeff());
  }
  return {mae < 0.02 && omni_err <= 1e-3 && kept > 0,
          fmt("order-3 cardioid mean |D - D_prescribed| %.2e over %zu frames x %zu points x %d bands; omni max |D-1| %.2e at %d unmasked points",
              mae, frames.size(), s.grid.size(), s.bands.size(), omni_err, kept)};
}

// ---------------------------------------------------------------- 5

Outcome c5_muting() {
  const StftConfig cfg{512, 512, 128, 8000.0};
  const ChamberSpec chamber = ChamberSpec::band(281, 2.74, 30.0, 1);
  const Grid grid = t_design_grid(1.5);
  // pitch sweep so that points enter and leave the valid zone
  std::vector<Pose> traj;
  for (int i = 0; i <= 10; ++i) {
    const double pitch = (-40.0 + 8.0 * i) * pi / 180.0;
    traj.emplace_back(0.1 * i, Eigen::Vector3d::Zero(), Eigen::Quaterniond(Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY())));
  }
  const size_t len = 8000;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.1);
  MultiSignal sig(grid.size(), Signal(len));
  for (auto& s : sig)
    for (auto& v : s) v = n(rng);
  const auto tl = mask_timeline(chamber.mics, traj, grid, cfg.sample_rate, len);
  const auto muted = apply_muting(sig, tl, cfg.sample_rate);
  double worst = 0.0;
  int frames = 0, toggling = 0;
  for (size_t g = 0; g < grid.size(); ++g) {
    bool changes = false;
    for (size_t f = 1; f < tl.masks.size(); ++f) changes |= tl.masks[f][g] != tl.masks[f - 1][g];
    toggling += changes;
    for (size_t f = 1; f + 1 < tl.masks.size(); ++f) {
      if (tl.masks[f - 1][g] || tl.masks[f][g] || tl.masks[f + 1][g]) continue;
      double e_in = 0.0, e_out = 0.0;
      for (size_t i = f * static_cast<size_t>(tl.frame_samples); i < std::min(len, (f + 1) * static_cast<size_t>(tl.frame_samples)); ++i) {
        e_in += sig[g][i] * sig[g][i];
        e_out += muted[g][i] * muted[g][i];
      }
      worst = std::max(worst, std::abs(db(e_out / e_in) + 60.0));
      ++frames;
    }
  }

  // larger elevation span keeps a superset of points
  bool monotone = true;
  std::vector<bool> prev(grid.size(), false);
  std::string counts;
  for (double span = 5.0; span <= 85.0; span += 10.0) {
    const auto keep = valid_zone_mask(ChamberSpec::band(281, 2.74, span, 1).mics, Pose{}, grid);
    int kept = 0;
    for (size_t g = 0; g < grid.size(); ++g) {
      monotone &= !prev[g] || keep[g];
      kept += keep[g];
    }
    counts += fmt("%s%d", counts.empty() ? "" : "/", kept);
    prev = keep;
  }
  return {frames > 0 && worst <= 0.1 && monotone,
          fmt("max |attenuation - 60 dB| %.2e over %d fully masked frames (%d points toggle); kept points by span 5..85 deg: %s",
              worst, frames, toggling, counts.c_str())};
}

// ---------------------------------------------------------------- 6

double power(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

Outcome c6_features() {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n;
  Eigen::MatrixXd lat(300, 3), mix(3, 40);
  for (auto& v : lat.reshaped()) v = n(rng);
  for (auto& v : mix.reshaped()) v = n(rng);
  lat.col(1) *= 0.5;
  lat.col(2) *= 0.2;
  Eigen::MatrixXd x = lat * mix;
  x.rowwise() += Eigen::RowVectorXd::LinSpaced(40, -2.0, 2.0);
  const auto b = svd_fit_variance(x, 0.99);
  const double ortho = (b.basis.transpose() * b.basis - Eigen::MatrixXd::Identity(b.rank(), b.rank())).cwiseAbs().maxCoeff();

  Signal speech(8000 * 6);
  std::normal_distribution<double> v(0.0, 0.2);
  for (size_t i = 0; i < speech.size(); ++i) speech[i] = v(rng) * (0.6 + 0.4 * std::sin(2 * pi * 3.0 * i / 8000.0));
  double snr_err = 0.0;
  for (double snr : {10.0, 20.0})
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto y = awgn_augment(speech, snr, seed);
      Signal noise(speech.size());
      for (size_t i = 0; i < speech.size(); ++i) noise[i] = y[i] - speech[i];
      snr_err = std::max(snr_err, std::abs(db(power(speech) / power(noise)) - snr));
    }
  return {b.rank() == 3 && ortho <= 1e-10 && snr_err <= 0.1,
          fmt("rank %d at 0.99 (explained %.6f), basis orthonormality %.2e, SNR error %.3f dB at 10/20 dB", b.rank(), b.explained,
              ortho, snr_err)};
}

// ---------------------------------------------------------------- 7

Outcome c7_gradients() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n;
  Eigen::MatrixXd f(48, 7);
  for (auto& v : f.reshaped()) v = n(rng);
  std::vector<int> rows;
  for (int i = 8; i < 28; ++i) rows.push_back(i);
  std::vector<int> all(48);
  std::iota(all.begin(), all.end(), 0);
  double mlp = 0.0, lstm = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    MlpConfig cfg;
    cfg.hidden = {6, 9, 12};
    cfg.dropout = 0.0;
    cfg.batch_norm = seed % 2 == 0;
    Mlp net(7, 5, cfg, seed);
    std::mt19937_64 r(seed);
    net.forward(f, all, Mode::Train, &r);
    mlp = std::max(mlp, oracle::gradient_direction_error(net, f, rows, seed % 4 == 0 ? Mode::Eval : Mode::Train, 1000 + seed));

    LstmConfig lc;
    lc.layers = 1 + static_cast<int>(seed % 3);
    lc.hidden = 6;
    lc.sequence = 5;
    lc.decoder.hidden = {6, 8};
    lc.decoder.dropout = 0.0;
    Lstm l(7, 5, lc, seed);
    l.forward(f, all, Mode::Train, &r);
    lstm = std::max(lstm, oracle::gradient_direction_error(l, f, rows, Mode::Eval, 2000 + seed));
  }
  return {mlp < 1e-4 && lstm < 1e-4, fmt("worst relative error over 100 draws: MLP %.2e, LSTM %.2e", mlp, lstm)};
}

// ---------------------------------------------------------------- 8, 9

struct Fixture {
  LearnableDataset ds;
  DatasetSplit split;
  Eigen::MatrixXd z, y_train, y_val;
  Eigen::RowVectorXd expected;
  int voiced = 0;
};

Fixture make_fixture(int frames, std::uint64_t seed) {
  Fixture f;
  f.ds = make_learnable_dataset(frames, seed);
  const double total = static_cast<double>(f.ds.reference.size()) / f.ds.stft.sample_rate;
  f.split = split_by_time(f.ds.frame_times, f.ds.voiced, total, 0.78 * total, 0.2 * total);
  const auto basis = svd_fit(rows_of(f.ds.features, f.split.train), 50);
  f.z = svd_project(basis, f.ds.features);
  f.y_train = rows_of(f.ds.targets, f.split.train);
  f.y_val = rows_of(f.ds.targets, f.split.validation);
  f.expected = f.y_train.colwise().mean();
  for (bool v : f.ds.voiced) f.voiced += v;
  return f;
}

Outcome c8_learning() {
  const Fixture f = make_fixture(6400, 2026);
  const int bands = f.ds.bands.size();
  const auto& t = f.ds.decode;
  const Eigen::MatrixXd z_train = rows_of(f.z, f.split.train), z_val = rows_of(f.z, f.split.validation);
  std::vector<ReportRow> rows;
  auto dd = [&](const Eigen::MatrixXd& tr, const Eigen::MatrixXd& va) {
    return std::pair{evaluate_dd(tr, f.y_train, t, bands), evaluate_dd(va, f.y_val, t, bands)};
  };
  for (NaiveKind k : {NaiveKind::Mean, NaiveKind::Median}) {
    const auto b = NaiveBaseline::fit(f.y_train, k);
    const auto [a, v] = dd(b.predict(f.y_train.rows()), b.predict(f.y_val.rows()));
    rows.push_back({k == NaiveKind::Mean ? "naive mean" : "naive median", a, v, "baseline"});
  }
  for (LinearKind k : {LinearKind::Ols, LinearKind::Lasso, LinearKind::Ridge}) {
    const auto m = linear_fit(z_train, f.y_train, k);
    const auto [a, v] = dd(m.predict(z_train), m.predict(z_val));
    rows.push_back({to_string(k), a, v, "baseline"});
  }
  const Objective objective(TargetSpec{}, {bands, sh_count(f.ds.sh_order)}, t, f.expected);
  std::string epochs;
  auto fit = [&](Network& net, int max_epochs, const std::string& name) {
    TrainConfig cfg;
    cfg.max_epochs = max_epochs;
    cfg.seed = 2026;
    const auto res = train(net, objective, f.z, f.ds.targets, f.split, cfg);
    const auto [a, v] = dd(net.predict(f.z, f.split.train), net.predict(f.z, f.split.validation));
    rows.push_back({name, a, v, res.message});
    epochs += fmt("%s %zu epochs; ", name.c_str(), res.history.size());
    write_history_csv(g_out / ("c8_" + name + "_history.csv"), res.history);
  };
  MlpConfig mc;
  mc.hidden = {64, 128, 256};
  Mlp mlp(50, static_cast<int>(f.ds.targets.cols()), mc, 2026);
  fit(mlp, 60, "mlp");
  LstmConfig lc;
  lc.layers = 2;
  lc.hidden = 32;
  lc.sequence = 10;
  lc.decoder.hidden = {64, 128, 256};
  Lstm lstm(50, static_cast<int>(f.ds.targets.cols()), lc, 2026);
  fit(lstm, 20, "lstm");

  write_report_csv(g_out / "c8_report.csv", rows);
  std::ofstream(g_out / "c8_report.txt") << format_report(rows);
  std::map<std::string, double> val;
  bool finite = true;
  for (const auto& r : rows) {
    val[r.model] = r.val_dd;
    finite &= std::isfinite(r.val_dd) && std::isfinite(r.train_dd);
  }
  const double mean = val.at("naive mean");
  return {f.voiced >= 5000 && finite && rows.size() == 7 && val.at("mlp") <= 0.8 * mean && val.at("ols") < mean &&
              val.at("ridge") < mean,
          fmt("%d voiced frames; val dD mean %.4f median %.4f OLS %.4f Lasso %.4f Ridge %.4f MLP %.4f (%.2f x mean) LSTM %.4f; %s"
              "table in c8_report.txt",
              f.voiced, mean, val.at("naive median"), val.at("ols"), val.at("lasso"), val.at("ridge"), val.at("mlp"),
              val.at("mlp") / mean, val.at("lstm"),
              epochs.c_str())};
}

Outcome c9_objective_grid() {
  const Fixture f = make_fixture(3200, 2027);
  const int bands = f.ds.bands.size();
  std::ofstream csv(g_out / "c9_variants.csv");
  csv << "target,val_dd,epochs,best_epoch,finished\n";
  double lo = 1e300, hi = 0.0;
  bool clean = true;
  int finished = 0;
  std::string lo_name, hi_name;
  for (const auto& spec : TargetSpec::grid()) {
    const Objective objective(spec, {bands, sh_count(f.ds.sh_order)}, f.ds.decode, f.expected);
    MlpConfig mc;
    mc.hidden = {32, 64, 128};
    Mlp net(50, static_cast<int>(f.ds.targets.cols()), mc, 1);
    TrainConfig cfg;
    cfg.max_epochs = 60;
    cfg.seed = 1;
    const auto res = train(net, objective, f.z, f.ds.targets, f.split, cfg);
    const double dd = evaluate_dd(objective.to_coeffs(net.predict(f.z, f.split.validation)), f.y_val, f.ds.decode, bands);
    for (const auto& e : res.history) clean &= std::isfinite(e.train_loss) && std::isfinite(e.val_loss);
    clean &= !res.diverged && std::isfinite(dd);
    finished += res.schedule_finished;
    csv << spec.name() << ',' << dd << ',' << res.history.size() << ',' << res.best_epoch << ',' << res.schedule_finished << '\n';
    if (dd < lo) lo = dd, lo_name = spec.name();
    if (dd > hi) hi = dd, hi_name = spec.name();
  }
  const double spread = (hi - lo) / lo;
  return {clean && spread <= 0.15,
          fmt("16 variants without NaN: %s, schedule finished %d/16; val dD %.4f (%s) .. %.4f (%s), spread %.1f%%", clean ? "yes" : "no",
              finished, lo, lo_name.c_str(), hi, hi_name.c_str(), 100.0 * spread)};
}

// ---------------------------------------------------------------- 10

Outcome c10_resynthesis() {
  const StftConfig cfg;
  const BandTable bands = BandTable::standard();
  ExcitationSpec ex;
  ex.seconds = 4.0;
  ex.seed = 9;
  const Signal ref = make_excitation(ex, cfg.sample_rate);
  const int frames = static_cast<int>(stft(ref, cfg).rows());
  const int band = bands.band_of(2000.0);

  std::vector<Eigen::MatrixXd> d(static_cast<size_t>(frames), Eigen::MatrixXd::Ones(3, bands.size()));
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.05, 3.0);
  for (int t = 0; t < frames; ++t) {
    d[static_cast<size_t>(t)](1, band) = std::pow(10.0, 0.602);
    for (int c = 0; c < bands.size(); ++c) d[static_cast<size_t>(t)](2, c) = u(rng);
  }
  const auto res = resynthesize(ref, d, bands, cfg);
  double err = 0.0, energy = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    err += std::pow(res.signals[0][i] - ref[i], 2);
    energy += ref[i] * ref[i];
  }
  const double identity_db = db(err / energy);
  const Eigen::MatrixXd p_ref = third_octave_stps(ref, cfg, bands);
  const Eigen::MatrixXd p_gain = third_octave_stps(res.signals[1], cfg, bands);
  const double gain = db(p_gain.col(band).sum() / p_ref.col(band).sum());

  const Eigen::MatrixXd di = ltas_di(res.signals, ref, cfg, bands);
  double ltas = 0.0;
  for (int c = 0; c < bands.size(); ++c) {
    double avg = 0.0;
    for (const auto& m : d) avg += m(2, c);
    ltas = std::max(ltas, std::abs(di(2, c) - db(avg / frames)));
  }
  return {identity_db <= -60.0 && std::abs(gain - 6.02) <= 0.2 && ltas <= 1.0,
          fmt("identity error %.1f dB, +6.02 dB band realized %.3f dB, LTAS-DI vs time-averaged D' max %.3f dB", identity_db, gain, ltas)};
}

// ---------------------------------------------------------------- 11

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome c11_determinism() {
  const fs::path cli = EGODIR_CLI;
  const fs::path fx = EGODIR_FIXTURES;
  const fs::path root = fs::absolute(g_out / "c11");
  fs::remove_all(root);
  std::vector<std::string> failed;
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    fs::create_directories(d);
    const std::string s = fx / "determinism_run.json", t = fx / "determinism_train.json";
    const std::vector<std::pair<std::string, std::string>> steps{
        {"synth", "synth --config " + s + " --seed 7 --out " + (d / "synth").string()},
        {"reconstruct", "reconstruct --config " + s + " --input " + (d / "synth").string() + " --out " + (d / "reconstruct").string()},
        {"measure", "measure --config " + s + " --input " + (d / "reconstruct").string() + " --out " + (d / "measure").string()},
        {"train", "train --config " + t + " --seed 7 --out " + (d / "train").string()},
        {"eval", "eval --input " + (d / "train").string() + " --out " + (d / "eval").string()},
        {"plot", "plot --synth " + (d / "synth").string() + " --measure " + (d / "measure").string() + " --eval " +
                     (d / "eval").string() + " --out " + (d / "plot").string()},
        {"resynth", "resynth --input " + (d / "train").string() + " --out " + (d / "resynth").string()}};
    for (const auto& [name, args] : steps) {
      const std::string cmd = cli.string() + " " + args + " >> " + (d / "log.txt").string() + " 2>&1";
      if (std::system(cmd.c_str()) != 0) failed.push_back(std::string(run) + ":" + name);
    }
  }
  int files = 0, differ = 0;
  std::set<std::string> commands;
  std::string first_diff;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root / "a");
    // the config snapshots record their own input paths, and the log holds timings
    if (rel.filename() == "config.json" || rel.filename() == "log.txt") continue;
    ++files;
    commands.insert(rel.begin()->string());
    if (!fs::exists(root / "b" / rel) || slurp(e.path()) != slurp(root / "b" / rel)) {
      ++differ;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  std::string failures;
  for (const auto& f : failed) failures += f + " ";
  return {failed.empty() && differ == 0 && commands.size() == 7,
          fmt("%d artifacts from %zu commands compared byte for byte, %d differ%s%s%s%s", files, commands.size(), differ,
              first_diff.empty() ? "" : " (first: ", first_diff.c_str(), first_diff.empty() ? "" : ")",
              failures.empty() ? "" : ("; failed runs: " + failures).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i + 1 < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only") {
      std::stringstream ss(argv[i + 1]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (a == "--out") {
      g_out = argv[i + 1];
    }
  }
  fs::create_directories(g_out);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"SH machinery (orthonormality n<=9, 3-j, Wronskian)", c1_sh_machinery},
      {"encode/decode round trip, Parseval, order search", c2_encode_decode},
      {"stage-1 fidelity vs analytic oracle", c3_stage1_fidelity},
      {"directivity measurement", c4_directivity},
      {"muting and valid-zone monotonicity", c5_muting},
      {"SVD rank selection and augmentation SNR", c6_features},
      {"MLP/LSTM gradients vs central differences", c7_gradients},
      {"learning fixture vs baselines", c8_learning},
      {"objective-variant grid", c9_objective_grid},
      {"resynthesis", c10_resynthesis},
      {"CLI determinism", c11_determinism},
  };
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << criteria[i].first << " | " << o.detail << " | "
              << fmt("%.1f s", secs) << std::endl;
  }
  return failures ? 1 : 0;
}
