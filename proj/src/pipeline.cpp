#include "egodir/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "egodir/error.hpp"

namespace egodir {

namespace {

constexpr double kDiFloor = 1e-6;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void append_rows(Stage2Data& dst, const Stage2Data& src, int recording, int copy, std::span<const int> rows) {
  const Eigen::Index start = dst.features.rows();
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (dst.features.size() == 0) {
    dst.features.resize(0, src.features.cols());
    dst.targets.resize(0, src.targets.cols());
  }
  require(dst.features.cols() == src.features.cols() && dst.targets.cols() == src.targets.cols(), ErrorKind::Shape,
          "dataset recordings differ in feature or target width");
  dst.features.conservativeResize(start + n, Eigen::NoChange);
  dst.targets.conservativeResize(start + n, Eigen::NoChange);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int r = rows[static_cast<size_t>(i)];
    dst.features.row(start + i) = src.features.row(r);
    dst.targets.row(start + i) = src.targets.row(r);
    dst.voiced.push_back(src.voiced[static_cast<size_t>(r)]);
    dst.frame_times.push_back(src.frame_times[static_cast<size_t>(r)]);
    dst.recording.push_back(recording);
    dst.copy.push_back(copy);
  }
}

}  // namespace

Grid measurement_grid(const RenderOptions& options) {
  return options.tdesign ? t_design_grid(options.grid_radius) : regular_grid(options.grid_radius, options.grid_step_deg);
}

RenderedScene render_scene(const Scene& scene, const RenderOptions& options) {
  const auto local = simulate_local_coeffs(scene.source, scene.chamber, scene.stft, scene.estimator.speed_of_sound);
  return render_global(estimate_global_coeffs(local, scene.estimator), scene.source.trajectory, scene.chamber.mics,
                       scene.source.excitation.size(), options);
}

RenderedScene render_global(GlobalCoeffSequence global, std::span<const Pose> trajectory,
                            std::span<const Eigen::Vector3d> real_mics, size_t length, const RenderOptions& options) {
  require(!trajectory.empty(), ErrorKind::Config, "render: empty trajectory");
  RenderedScene out;
  out.stft = global.stft;
  out.grid = measurement_grid(options);
  out.global = std::move(global);
  const int frames = static_cast<int>(out.global.frames.size());
  out.frame_poses = trajectory.size() == 1 ? std::vector<Pose>(static_cast<size_t>(frames), trajectory.front())
                                           : poses_at(trajectory, out.stft.frame_times(frames));
  out.grid_signals = render_grid(out.global, out.grid, out.frame_poses, length);
  out.proxy = render_grid(out.global, proxy_array(options.proxy_radius), out.frame_poses, length);
  const std::vector<SphericalPoint> ref(static_cast<size_t>(frames), SphericalPoint::from_degrees(options.grid_radius, 0, 0));
  out.reference = render_virtual_mic(out.global, ref, out.frame_poses, length);
  if (options.mute) {
    const auto tl = mask_timeline(real_mics, trajectory, out.grid, out.stft.sample_rate, length);
    out.grid_signals = apply_muting(out.grid_signals, tl, out.stft.sample_rate);
    size_t muted = 0, total = 0;
    for (const auto& m : tl.masks)
      for (bool keep : m) {
        muted += !keep;
        ++total;
      }
    out.muted_fraction = total ? static_cast<double>(muted) / static_cast<double>(total) : 0.0;
  }
  return out;
}

Stage2Data stage2_from_signals(const MultiSignal& proxy, const MultiSignal& grid_signals, std::span<const double> reference,
                               const Grid& grid, const BandTable& bands, const StftConfig& stft, int order) {
  require(grid_signals.size() == grid.size(), ErrorKind::Shape, "stage-2 data: grid signal count differs from the grid");
  Stage2Data d;
  d.stft = stft;
  d.bands = bands;
  d.sh_order = order;
  d.grid = grid;
  d.decode = decode_matrix(grid.points, order);
  d.features = aggregate_psd(proxy, stft);
  const auto frames = measure_directivity(grid_signals, reference, stft, bands);
  const int c = bands.size();
  d.targets.resize(static_cast<Eigen::Index>(frames.size()), sh_count(order) * c);
  for (size_t t = 0; t < frames.size(); ++t) {
    const Eigen::MatrixXd a = sht_encode(frames[t].d, grid, order);
    for (Eigen::Index j = 0; j < a.rows(); ++j)
      for (int b = 0; b < c; ++b) d.targets(static_cast<Eigen::Index>(t), j * c + b) = a(j, b);
  }
  require(d.targets.rows() == d.features.rows(), ErrorKind::Shape, "stage-2 data: feature and target frame counts differ");
  d.voiced = voiced_mask(reference, stft);
  d.frame_times = stft.frame_times(static_cast<int>(d.features.rows()));
  d.recording.assign(static_cast<size_t>(d.features.rows()), 0);
  d.copy.assign(static_cast<size_t>(d.features.rows()), 0);
  d.reference.assign(reference.begin(), reference.end());
  d.timeline_features = d.features;
  d.timeline_targets = d.targets;
  return d;
}

Stage2Data build_manifest_dataset(const DatasetManifest& manifest, const RenderOptions& options, int order,
                                  std::uint64_t seed) {
  require(!manifest.recordings.empty(), ErrorKind::Config, "dataset manifest lists no recordings");
  require(manifest.augment_snr_db.size() == manifest.augment_seeds.size(), ErrorKind::Config,
          "dataset manifest: one augmentation seed per SNR is required");
  Stage2Data out;
  for (size_t r = 0; r < manifest.recordings.size(); ++r) {
    const auto& rec = manifest.recordings[r];
    Scene scene = load_scene(rec.scene, seed + r);
    if (!rec.poses.empty()) {
      require(std::filesystem::exists(rec.poses), ErrorKind::MissingInput, "pose file not found: " + rec.poses.string());
      scene.source.trajectory = read_pose_csv(rec.poses);
    }
    const auto rendered = render_scene(scene, options);
    const BandTable bands = BandTable::up_to(scene.stft.sample_rate / 2.0);
    const Stage2Data clean = stage2_from_signals(rendered.proxy, rendered.grid_signals, rendered.reference, rendered.grid, bands,
                                                 scene.stft, order);
    if (r == 0) {
      out.stft = clean.stft;
      out.bands = clean.bands;
      out.sh_order = order;
      out.grid = clean.grid;
      out.decode = clean.decode;
      out.reference = clean.reference;
      out.timeline_features = clean.features;
      out.timeline_targets = clean.targets;
    }
    const double total = static_cast<double>(rendered.reference.size()) / scene.stft.sample_rate;
    const auto split = split_by_time(clean.frame_times, clean.voiced, total, manifest.train_seconds, manifest.validation_seconds);
    const auto base = static_cast<int>(out.features.rows());
    append_rows(out, clean, static_cast<int>(r), 0, split.train);
    for (size_t i = 0; i < split.train.size(); ++i) out.split.train.push_back(base + static_cast<int>(i));
    const auto vbase = static_cast<int>(out.features.rows());
    append_rows(out, clean, static_cast<int>(r), 0, split.validation);
    for (size_t i = 0; i < split.validation.size(); ++i) out.split.validation.push_back(vbase + static_cast<int>(i));

    for (size_t a = 0; a < manifest.augment_snr_db.size(); ++a) {
      const double snr = manifest.augment_snr_db[a];
      const std::uint64_t s = manifest.augment_seeds[a] * 1000003ULL + r * 7919ULL;
      MultiSignal proxy(rendered.proxy.size()), grid(rendered.grid_signals.size());
      for (size_t c = 0; c < proxy.size(); ++c) proxy[c] = awgn_augment(rendered.proxy[c], snr, s + c);
      for (size_t c = 0; c < grid.size(); ++c) grid[c] = awgn_augment(rendered.grid_signals[c], snr, s + 1000 + c);
      const Signal ref = awgn_augment(rendered.reference, snr, s + 999);
      Stage2Data noisy = stage2_from_signals(proxy, grid, ref, rendered.grid, bands, scene.stft, order);
      noisy.voiced = clean.voiced;
      const auto abase = static_cast<int>(out.features.rows());
      append_rows(out, noisy, static_cast<int>(r), static_cast<int>(a + 1), split.train);
      for (size_t i = 0; i < split.train.size(); ++i) out.split.train.push_back(abase + static_cast<int>(i));
    }
  }
  return out;
}

Stage2Data stage2_from_learnable(const LearnableDataset& ds, double train_seconds, double validation_seconds) {
  Stage2Data d;
  d.stft = ds.stft;
  d.bands = ds.bands;
  d.sh_order = ds.sh_order;
  d.grid = ds.grid;
  d.decode = ds.decode;
  d.features = ds.features;
  d.targets = ds.targets;
  d.voiced = ds.voiced;
  d.frame_times = ds.frame_times;
  d.recording.assign(static_cast<size_t>(ds.features.rows()), 0);
  d.copy.assign(static_cast<size_t>(ds.features.rows()), 0);
  d.reference = ds.reference;
  d.timeline_features = ds.features;
  d.timeline_targets = ds.targets;
  const double total = static_cast<double>(ds.reference.size()) / ds.stft.sample_rate;
  d.split = split_by_time(ds.frame_times, ds.voiced, total, train_seconds, validation_seconds);
  return d;
}

Eigen::MatrixXd ring_di_db(const Eigen::MatrixXd& coeffs, int count) {
  const int order = static_cast<int>(std::lround(std::sqrt(static_cast<double>(coeffs.rows())))) - 1;
  require(sh_count(order) == coeffs.rows(), ErrorKind::Shape, "ring_di_db: coefficient count is not a square");
  std::vector<SphericalPoint> ring;
  for (int i = 0; i < count; ++i) ring.push_back(SphericalPoint::from_degrees(1.0, 360.0 * i / count, 0.0));
  const Eigen::MatrixXd d = decode_matrix(ring, order) * coeffs;
  return d.unaryExpr([](double v) { return 10.0 * std::log10(std::max(v, kDiFloor)); });
}

void write_contour_csv(const std::filesystem::path& path, const Eigen::VectorXd& coeffs, double step_deg) {
  const int order = static_cast<int>(std::lround(std::sqrt(static_cast<double>(coeffs.size())))) - 1;
  require(sh_count(order) == coeffs.size(), ErrorKind::Shape, "write_contour_csv: coefficient count is not a square");
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingInput, "cannot write " + path.string());
  const int n_az = static_cast<int>(std::lround(360.0 / step_deg));
  const int n_el = static_cast<int>(std::lround(180.0 / step_deg)) + 1;
  out << "elevation_deg";
  for (int a = 0; a < n_az; ++a) out << ',' << fmt("%.1f", a * step_deg);
  out << '\n';
  for (int e = 0; e < n_el; ++e) {
    const double el = -90.0 + e * step_deg;
    std::vector<SphericalPoint> row;
    for (int a = 0; a < n_az; ++a) row.push_back(SphericalPoint::from_degrees(1.0, a * step_deg, el));
    const Eigen::VectorXd d = decode_matrix(row, order) * coeffs;
    out << fmt("%.1f", el);
    for (int a = 0; a < n_az; ++a) out << ',' << fmt("%.4f", 10.0 * std::log10(std::max(d(a), kDiFloor)));
    out << '\n';
  }
}

void write_ring_csv(const std::filesystem::path& path, const Eigen::MatrixXd& di_db, const BandTable& bands) {
  require(di_db.cols() == bands.size(), ErrorKind::Shape, "write_ring_csv: band count mismatch");
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingInput, "cannot write " + path.string());
  out << "azimuth_deg";
  for (double c : bands.centers) out << ',' << fmt("%.1f", c);
  out << '\n';
  for (Eigen::Index i = 0; i < di_db.rows(); ++i) {
    out << fmt("%.3f", 360.0 * static_cast<double>(i) / static_cast<double>(di_db.rows()));
    for (Eigen::Index c = 0; c < di_db.cols(); ++c) out << ',' << fmt("%.4f", di_db(i, c));
    out << '\n';
  }
}

RingTable read_ring_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingInput, "polar table not found: " + path.string());
  RingTable t;
  std::string line, cell;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Config, path.string() + ": empty polar table");
  {
    std::stringstream ss(line);
    std::getline(ss, cell, ',');
    while (std::getline(ss, cell, ',')) t.band_hz.push_back(std::stod(cell));
  }
  std::vector<std::vector<double>> rows;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::getline(ss, cell, ',');
      t.azimuth_deg.push_back(std::stod(cell));
      std::vector<double> r;
      while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
      require(r.size() == t.band_hz.size(), ErrorKind::Config, path.string() + ": ragged polar table");
      rows.push_back(std::move(r));
    }
  } catch (const std::invalid_argument&) {
    fail(ErrorKind::Config, path.string() + ": non-numeric entry in polar table");
  }
  t.di_db.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.band_hz.size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t c = 0; c < rows[i].size(); ++c) t.di_db(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  return t;
}

void write_polar_svg(const std::filesystem::path& path, const std::string& title, const std::vector<PolarSeries>& series,
                     double min_db, double max_db) {
  require(max_db > min_db, ErrorKind::Config, "polar plot: empty dB range");
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingInput, "cannot write " + path.string());
  const double cx = 260.0, cy = 250.0, radius = 200.0;
  auto rad = [&](double db) { return radius * std::clamp((db - min_db) / (max_db - min_db), 0.0, 1.0); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"520\" viewBox=\"0 0 640 520\">\n";
  out << "<rect width=\"640\" height=\"520\" fill=\"white\"/>\n";
  out << "<text x=\"" << cx << "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" << title
      << "</text>\n";
  for (double db = max_db; db >= min_db - 1e-9; db -= 10.0) {
    out << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << fmt("%.2f", rad(db))
        << "\" fill=\"none\" stroke=\"#cccccc\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt("%.2f", cx + 3) << "\" y=\"" << fmt("%.2f", cy - rad(db) - 2)
        << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#888888\">" << fmt("%.0f", db) << " dB</text>\n";
  }
  for (int a = 0; a < 360; a += 30) {
    const double t = a * std::numbers::pi / 180.0;
    out << "<line x1=\"" << cx << "\" y1=\"" << cy << "\" x2=\"" << fmt("%.2f", cx + radius * std::cos(t)) << "\" y2=\""
        << fmt("%.2f", cy - radius * std::sin(t)) << "\" stroke=\"#eeeeee\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt("%.2f", cx + (radius + 14) * std::cos(t)) << "\" y=\"" << fmt("%.2f", cy - (radius + 14) * std::sin(t) + 4)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << a << "</text>\n";
  }
  for (size_t s = 0; s < series.size(); ++s) {
    const auto& p = series[s];
    require(p.azimuth_deg.size() == p.di_db.size() && !p.di_db.empty(), ErrorKind::Shape, "polar plot: series '" + p.label + "' is empty or ragged");
    out << "<path d=\"";
    for (size_t i = 0; i <= p.di_db.size(); ++i) {
      const size_t k = i % p.di_db.size();
      const double t = p.azimuth_deg[k] * std::numbers::pi / 180.0;
      out << (i ? " L " : "M ") << fmt("%.2f", cx + rad(p.di_db[k]) * std::cos(t)) << ' ' << fmt("%.2f", cy - rad(p.di_db[k]) * std::sin(t));
    }
    out << "\" fill=\"none\" stroke=\"" << p.color << "\" stroke-width=\"2\"" << (p.dashed ? " stroke-dasharray=\"6 4\"" : "")
        << "/>\n";
    const double ly = 70.0 + 20.0 * static_cast<double>(s);
    out << "<line x1=\"500\" y1=\"" << ly << "\" x2=\"530\" y2=\"" << ly << "\" stroke=\"" << p.color << "\" stroke-width=\"2\""
        << (p.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
    out << "<text x=\"536\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">" << p.label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace egodir
