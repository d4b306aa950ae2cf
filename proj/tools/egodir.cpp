// egodir: synth | reconstruct | measure | train | eval | plot | resynth
//
// Every command reads an optional JSON config, applies flag overrides (flags win) and
// writes the resolved config to <out>/config.json next to its outputs.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "egodir/container.hpp"
#include "egodir/directivity.hpp"
#include "egodir/error.hpp"
#include "egodir/features.hpp"
#include "egodir/parallel.hpp"
#include "egodir/pipeline.hpp"
#include "egodir/regressors.hpp"
#include "egodir/soundfield.hpp"
#include "egodir/synth.hpp"
#include "egodir/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace egodir;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  std::string input;
  json overrides = json::object();  // dotted keys set by per-command flags
};

struct Run {
  std::string command;
  json cfg;
  fs::path base;
  fs::path out;
  std::optional<std::uint64_t> seed;
};

template <class T>
T opt(json& section, const char* key, T fallback) {
  if (!section.is_object()) section = json::object();
  if (!section.contains(key)) section[key] = fallback;
  return section[key].get<T>();
}

json& section(json& cfg, const char* name) {
  if (!cfg.contains(name) || !cfg[name].is_object()) cfg[name] = json::object();
  return cfg[name];
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return fs::weakly_canonical(path.is_absolute() ? path : base / path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingInput, "file not found: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingInput, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void set_dotted(json& cfg, const std::string& key, const json& value) {
  json* node = &cfg;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &section(*node, parts[i].c_str());
  (*node)[parts.back()] = value;
}

Run prepare(const std::string& command, const Flags& f) {
  Run r;
  r.command = command;
  r.cfg = json::object();
  r.base = fs::current_path();
  if (!f.config.empty()) {
    const fs::path p = fs::absolute(f.config);
    require(fs::exists(p), ErrorKind::MissingInput, "config file not found: " + p.string());
    r.cfg = read_json(p);
    require(r.cfg.is_object(), ErrorKind::Config, "config must be a JSON object: " + p.string());
    r.base = p.parent_path();
  }
  for (const auto& [k, v] : f.overrides.items()) set_dotted(r.cfg, k, v);
  if (f.seed) r.cfg["seed"] = *f.seed;
  if (r.cfg.contains("seed")) r.seed = r.cfg["seed"].get<std::uint64_t>();
  if (f.threads) r.cfg["threads"] = *f.threads;
  set_thread_count(opt(r.cfg, "threads", 1));
  if (!f.input.empty()) {
    const std::map<std::string, std::string> upstream{
        {"reconstruct", "synth"}, {"measure", "reconstruct"}, {"eval", "train"}, {"resynth", "train"}};
    require(upstream.contains(command), ErrorKind::Config, command + " takes no --input");
    section(r.cfg, "inputs")[upstream.at(command)] = fs::absolute(f.input).string();
  }

  std::string out = f.out;
  if (out.empty() && r.cfg.contains("out")) out = resolve(r.base, r.cfg["out"].get<std::string>()).string();
  require(!out.empty(), ErrorKind::Config, command + ": no output directory (--out or \"out\" in the config)");
  r.out = fs::absolute(out);
  r.cfg.erase("out");
  r.cfg["command"] = command;
  fs::create_directories(r.out);
  return r;
}

std::uint64_t seed_of(Run& r) {
  if (!r.seed) r.seed = 1;
  r.cfg["seed"] = *r.seed;
  return *r.seed;
}

fs::path input_dir(Run& r, const std::string& name) {
  json& in = section(r.cfg, "inputs");
  require(in.contains(name), ErrorKind::MissingInput,
          r.command + ": no " + name + " directory given (--input or inputs." + name + ")");
  const fs::path p = resolve(r.base, in[name].get<std::string>());
  require(fs::is_directory(p), ErrorKind::MissingInput, r.command + ": input directory not found: " + p.string());
  in[name] = p.string();
  return p;
}

fs::path existing(const fs::path& p) {
  require(fs::exists(p), ErrorKind::MissingInput, "required input not found: " + p.string());
  return p;
}

json stft_json(const StftConfig& s) {
  return {{"fft_size", s.fft_size}, {"window", s.window}, {"hop", s.hop}, {"sample_rate", s.sample_rate}};
}

StftConfig stft_from(const json& j) {
  StftConfig s;
  s.fft_size = j.at("fft_size").get<int>();
  s.window = j.at("window").get<int>();
  s.hop = j.at("hop").get<int>();
  s.sample_rate = j.at("sample_rate").get<double>();
  s.validate();
  return s;
}

RenderOptions render_options(json& cfg) {
  json& s = section(cfg, "render");
  RenderOptions o;
  const std::string grid = opt<std::string>(s, "grid", "tdesign");
  require(grid == "tdesign" || grid == "regular", ErrorKind::Config, "render.grid must be \"tdesign\" or \"regular\"");
  o.tdesign = grid == "tdesign";
  o.grid_radius = opt(s, "grid_radius", o.grid_radius);
  o.grid_step_deg = opt(s, "grid_step_deg", o.grid_step_deg);
  o.proxy_radius = opt(s, "proxy_radius", o.proxy_radius);
  o.mute = opt(s, "mute", o.mute);
  return o;
}

Eigen::MatrixXd as_matrix(const Eigen::RowVectorXd& row, int coeffs, int bands) {
  Eigen::MatrixXd m(coeffs, bands);
  for (int j = 0; j < coeffs; ++j)
    for (int c = 0; c < bands; ++c) m(j, c) = row(j * bands + c);
  return m;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, std::span<const int> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

BandTable first_bands(int count) {
  BandTable all = BandTable::standard();
  require(count >= 1 && count <= all.size(), ErrorKind::Config, "band count out of range");
  all.centers.resize(static_cast<size_t>(count));
  all.lower.resize(static_cast<size_t>(count));
  all.upper.resize(static_cast<size_t>(count));
  return all;
}

std::string hz_label(double hz) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.0f", hz);
  return buf;
}

// ---------------------------------------------------------------- stored stage-2 dataset

struct Stage2File {
  StftConfig stft;
  BandTable bands;
  int sh_order = 9;
  Eigen::MatrixXd features, targets, timeline_features, timeline_targets, decode;
  Eigen::RowVectorXd expected;
  DatasetSplit split;
  std::vector<SphericalPoint> grid;

  int coeffs() const { return sh_count(sh_order); }
  TargetLayout layout() const { return {bands.size(), coeffs()}; }
};

std::vector<double> ints_to_doubles(const std::vector<int>& v) { return {v.begin(), v.end()}; }

std::vector<int> doubles_to_ints(const std::vector<double>& v) {
  std::vector<int> out;
  for (double x : v) out.push_back(static_cast<int>(std::lround(x)));
  return out;
}

void save_stage2(const fs::path& path, const Stage2File& d, const json& extra) {
  Container c("stage2");
  c.meta() = extra;
  c.meta()["stft"] = stft_json(d.stft);
  c.meta()["bands"] = d.bands.size();
  c.meta()["sh_order"] = d.sh_order;
  c.add("features", d.features);
  c.add("targets", d.targets);
  c.add("timeline_features", d.timeline_features);
  c.add("timeline_targets", d.timeline_targets);
  c.add("decode", d.decode);
  c.add_vector("expected", std::span<const double>(d.expected.data(), static_cast<size_t>(d.expected.size())));
  c.add_vector("train", ints_to_doubles(d.split.train));
  c.add_vector("validation", ints_to_doubles(d.split.validation));
  std::vector<double> az, el;
  for (const auto& p : d.grid) {
    az.push_back(p.azimuth * 180.0 / std::numbers::pi);
    el.push_back(p.elevation * 180.0 / std::numbers::pi);
  }
  c.add_vector("grid_azimuth_deg", az);
  c.add_vector("grid_elevation_deg", el);
  c.save(path);
}

Stage2File load_stage2(const fs::path& path) {
  const Container c = Container::load(existing(path), "stage2");
  Stage2File d;
  try {
    d.stft = stft_from(c.meta().at("stft"));
    d.bands = first_bands(c.meta().at("bands").get<int>());
    d.sh_order = c.meta().at("sh_order").get<int>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, path.string() + ": " + e.what());
  }
  d.features = c.get("features").matrix();
  d.targets = c.get("targets").matrix();
  d.timeline_features = c.get("timeline_features").matrix();
  d.timeline_targets = c.get("timeline_targets").matrix();
  d.decode = c.get("decode").matrix();
  const auto e = c.get("expected").values();
  d.expected = Eigen::Map<const Eigen::RowVectorXd>(e.data(), static_cast<Eigen::Index>(e.size()));
  d.split.train = doubles_to_ints(c.get("train").values());
  d.split.validation = doubles_to_ints(c.get("validation").values());
  const auto az = c.get("grid_azimuth_deg").values();
  const auto el = c.get("grid_elevation_deg").values();
  for (size_t i = 0; i < az.size(); ++i) d.grid.push_back(SphericalPoint::from_degrees(1.0, az[i], el[i]));
  return d;
}

// ---------------------------------------------------------------- stored stage-2 models

// Raw coefficient predictions for feature rows; wraps networks, linear and naive models.
struct Predictor {
  std::string kind;
  std::unique_ptr<Network> net;
  std::optional<Objective> objective;
  LinearModel linear;
  NaiveBaseline naive;
  std::string note;

  Eigen::MatrixXd predict(const Eigen::MatrixXd& z, std::span<const int> rows) {
    if (net) return objective->to_coeffs(net->predict(z, rows));
    if (kind == "mean" || kind == "median") return naive.predict(static_cast<Eigen::Index>(rows.size()));
    return linear.predict(take_rows(z, rows));
  }
};

std::optional<Predictor> load_predictor(const fs::path& dir, const Stage2File& d) {
  Predictor p;
  if (fs::exists(dir / "model.bin")) {
    json meta;
    p.net = load_checkpoint(dir / "model.bin", &meta);
    p.kind = p.net->kind();
    TargetSpec spec;
    try {
      spec = TargetSpec::parse(meta.at("target").get<std::string>());
      spec.max_weight = meta.value("max_weight", spec.max_weight);
    } catch (const json::exception& e) {
      fail(ErrorKind::Config, "checkpoint metadata: " + std::string(e.what()));
    }
    require(p.net->inputs() == d.features.cols() && p.net->outputs() == d.targets.cols(), ErrorKind::Shape,
            "checkpoint does not match the dataset dimensions");
    p.objective.emplace(spec, d.layout(), d.decode, d.expected);
    p.note = "target " + spec.name();
    if (spec.deviation) p.note += "; E[y] re-added to the deviation outputs";
    return p;
  }
  if (fs::exists(dir / "linear.bin")) {
    const Container c = Container::load(dir / "linear.bin", "linear_model");
    p.kind = c.meta().at("model").get<std::string>();
    p.linear.kind = p.kind == "ols" ? LinearKind::Ols : p.kind == "lasso" ? LinearKind::Lasso : LinearKind::Ridge;
    p.linear.alpha = c.meta().at("alpha").get<double>();
    p.linear.weights = c.get("weights").matrix();
    p.linear.bias = c.get("bias").matrix();
    return p;
  }
  if (fs::exists(dir / "naive.bin")) {
    const Container c = Container::load(dir / "naive.bin", "naive_model");
    p.kind = c.meta().at("model").get<std::string>();
    p.naive.kind = p.kind == "mean" ? NaiveKind::Mean : NaiveKind::Median;
    p.naive.value = c.get("value").matrix();
    return p;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- synth

int cmd_synth(Run& r) {
  require(r.cfg.contains("scene") && r.cfg["scene"].is_string(), ErrorKind::Config,
          "synth: config needs \"scene\" (path to a scene file)");
  const fs::path scene_path = resolve(r.base, r.cfg["scene"].get<std::string>());
  r.cfg["scene"] = scene_path.string();
  const Scene scene = load_scene(scene_path, r.seed.value_or(0));
  r.cfg["seed"] = scene.seed;

  const auto local = simulate_local_coeffs(scene.source, scene.chamber, scene.stft, scene.estimator.speed_of_sound);
  local.save(r.out / "local.bin");
  write_wav(r.out / "excitation.wav", {scene.stft.sample_rate, {scene.source.excitation}});
  write_pose_csv(r.out / "poses.csv", scene.source.trajectory);

  const BandTable bands = BandTable::up_to(scene.stft.sample_rate / 2.0);
  Eigen::MatrixXd ring(360, bands.size());
  for (int c = 0; c < bands.size(); ++c) {
    const auto& pattern = scene.source.pattern_for(bands.centers[static_cast<size_t>(c)]);
    for (int a = 0; a < 360; ++a)
      ring(a, c) = 10.0 * std::log10(std::max(pattern.directivity(SphericalPoint::from_degrees(1.0, a, 0.0)), 1e-6));
  }
  write_ring_csv(r.out / "analytic_polar.csv", ring, bands);

  const auto& e = scene.estimator;
  r.cfg["resolved"] = {
      {"stft", stft_json(scene.stft)},
      {"samples", scene.source.excitation.size()},
      {"chamber_mics", scene.chamber.mics.size()},
      {"mic_order", scene.chamber.mic_order},
      {"source_order", scene.source.order()},
      {"estimator",
       {{"radius", e.radius},
        {"speed_of_sound", e.speed_of_sound},
        {"min_frequency", e.min_frequency},
        {"tikhonov", e.tikhonov},
        {"cap_order", e.cap_order}}}};
  std::cout << "synth: " << local.frames.size() << " frames, " << scene.chamber.mics.size() << " mics -> " << r.out.string()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------- reconstruct

int cmd_reconstruct(Run& r) {
  const fs::path in = input_dir(r, "synth");
  const json upstream = read_json(existing(in / "config.json"));
  const json& res = upstream.at("resolved");
  const auto local = LocalCoeffSequence::load(existing(in / "local.bin"));
  const auto trajectory = read_pose_csv(existing(in / "poses.csv"));

  json& es = section(r.cfg, "estimator");
  const json& up = res.at("estimator");
  EstimatorOptions eo;
  eo.radius = opt(es, "radius", up.at("radius").get<double>());
  eo.speed_of_sound = opt(es, "speed_of_sound", up.at("speed_of_sound").get<double>());
  eo.min_frequency = opt(es, "min_frequency", up.at("min_frequency").get<double>());
  eo.tikhonov = opt(es, "tikhonov", up.at("tikhonov").get<double>());
  eo.cap_order = opt(es, "cap_order", up.at("cap_order").get<bool>());
  const RenderOptions ro = render_options(r.cfg);
  const size_t samples = res.at("samples").get<size_t>();

  auto global = estimate_global_coeffs(local, eo);
  global.save(r.out / "global.bin");
  const auto scene = render_global(std::move(global), trajectory, local.mics, samples, ro);
  const double sr = scene.stft.sample_rate;
  write_wav(r.out / "grid.wav", {sr, scene.grid_signals});
  write_wav(r.out / "proxy.wav", {sr, scene.proxy});
  write_wav(r.out / "reference.wav", {sr, {scene.reference}});

  {
    std::ofstream o(r.out / "orders.csv");
    o << "bin,hz,order,mean_residual\n";
    const auto& frames = scene.global.frames;
    for (int b = 0; b < scene.stft.bins(); ++b) {
      double sum = 0.0;
      for (const auto& f : frames) sum += f.residual[static_cast<size_t>(b)];
      char line[128];
      std::snprintf(line, sizeof line, "%d,%.4f,%d,%.6e\n", b, scene.stft.bin_frequency(b),
                    frames.empty() ? 0 : frames.front().orders[static_cast<size_t>(b)],
                    frames.empty() ? 0.0 : sum / static_cast<double>(frames.size()));
      o << line;
    }
  }
  r.cfg["resolved"] = {{"stft", stft_json(scene.stft)},
                       {"samples", samples},
                       {"grid_points", scene.grid.size()},
                       {"muted_fraction", scene.muted_fraction}};
  std::cout << "reconstruct: " << scene.grid.size() << " grid points, muted fraction " << scene.muted_fraction << '\n';
  return 0;
}

// ---------------------------------------------------------------- measure

void write_ltas_csv(const fs::path& path, const Grid& grid, const Eigen::MatrixXd& di, const BandTable& bands) {
  std::ofstream o(path);
  require(static_cast<bool>(o), ErrorKind::MissingInput, "cannot write " + path.string());
  o << "point,azimuth_deg,elevation_deg";
  for (double hz : bands.centers) o << ',' << hz_label(hz);
  o << '\n';
  char buf[64];
  for (size_t g = 0; g < grid.size(); ++g) {
    std::snprintf(buf, sizeof buf, "%zu,%.4f,%.4f", g, grid.points[g].azimuth * 180.0 / std::numbers::pi,
                  grid.points[g].elevation * 180.0 / std::numbers::pi);
    o << buf;
    for (int c = 0; c < bands.size(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.4f", di(static_cast<Eigen::Index>(g), c));
      o << buf;
    }
    o << '\n';
  }
}

int cmd_measure(Run& r) {
  const fs::path in = input_dir(r, "reconstruct");
  json upstream = read_json(existing(in / "config.json"));
  const StftConfig stft = stft_from(upstream.at("resolved").at("stft"));
  const Grid grid = measurement_grid(render_options(upstream));
  r.cfg["render"] = upstream["render"];
  const WavData g = read_wav(existing(in / "grid.wav"));
  const WavData ref = read_wav(existing(in / "reference.wav"));
  require(g.channels.size() == grid.size(), ErrorKind::Shape, "measure: grid.wav channel count differs from the grid");

  json& ms = section(r.cfg, "measure");
  const int order = opt(ms, "sh_order", 9);
  const int max_order = opt(ms, "max_order", 12);
  const BandTable bands = BandTable::up_to(opt(ms, "band_max_hz", stft.sample_rate / 2.0));

  DirectivitySequence seq;
  seq.bands = bands;
  seq.order = order;
  seq.frames = measure_directivity(g.channels, ref.channels.front(), stft, bands);
  seq.coeffs.resize(seq.frames.size());
  parallel_for(seq.frames.size(), [&](size_t t) { seq.coeffs[t] = sht_encode(seq.frames[t].d, grid, order); });
  seq.save(r.out / "directivity.bin");
  write_order_search_csv(r.out / "order_search.csv", order_search(seq.frames, grid, max_order), bands);
  write_ltas_csv(r.out / "ltas_di.csv", grid, ltas_di(g.channels, ref.channels.front(), stft, bands), bands);

  auto active = voiced_mask(ref.channels.front(), stft);
  if (std::none_of(active.begin(), active.end(), [](bool v) { return v; })) active.assign(active.size(), true);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(sh_count(order), bands.size());
  int used = 0;
  for (size_t t = 0; t < seq.coeffs.size() && t < active.size(); ++t)
    if (active[t]) {
      mean += seq.coeffs[t];
      ++used;
    }
  require(used > 0, ErrorKind::Numeric, "measure: no frames to average");
  mean /= used;
  Container mc("mean_coeffs");
  mc.meta()["bands"] = bands.size();
  mc.meta()["frames"] = used;
  mc.add("coeffs", mean);
  mc.save(r.out / "mean_coeffs.bin");
  write_ring_csv(r.out / "polar.csv", ring_di_db(mean), bands);

  {
    std::ofstream o(r.out / "coeff_summary.csv");
    o << "order";
    for (double hz : bands.centers) o << ',' << hz_label(hz);
    o << '\n';
    char buf[32];
    for (int n = 0; n <= order; ++n) {
      o << n;
      for (int c = 0; c < bands.size(); ++c) {
        const double e = mean.col(c).segment(n * n, 2 * n + 1).norm();
        std::snprintf(buf, sizeof buf, ",%.6e", e / std::max(std::abs(mean(0, c)), 1e-300));
        o << buf;
      }
      o << '\n';
    }
  }
  r.cfg["resolved"] = {{"frames", seq.frames.size()}, {"averaged_frames", used}, {"bands", bands.size()}};
  std::cout << "measure: " << seq.frames.size() << " frames, " << bands.size() << " bands, order " << order << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

MlpConfig mlp_config(json& j, MlpConfig c) {
  c.hidden = opt(j, "hidden", c.hidden);
  c.slope = opt(j, "slope", c.slope);
  c.dropout = opt(j, "dropout", c.dropout);
  c.batch_norm = opt(j, "batch_norm", c.batch_norm);
  c.momentum = opt(j, "momentum", c.momentum);
  c.bn_epsilon = opt(j, "bn_epsilon", c.bn_epsilon);
  return c;
}

int cmd_train(Run& r) {
  const std::uint64_t seed = seed_of(r);
  json& ds = section(r.cfg, "dataset");
  const std::string kind = opt<std::string>(ds, "kind", "learnable");
  Stage2Data data;
  if (kind == "learnable") {
    LearnableOptions lo;
    lo.sh_order = opt(ds, "sh_order", lo.sh_order);
    lo.chamber_mics = opt(ds, "chamber_mics", lo.chamber_mics);
    const int frames = opt(ds, "frames", 6400);
    const auto l = make_learnable_dataset(frames, seed, lo);
    const double total = static_cast<double>(l.reference.size()) / l.stft.sample_rate;
    data = stage2_from_learnable(l, opt(ds, "train_fraction", 0.78) * total, opt(ds, "validation_fraction", 0.2) * total);
  } else if (kind == "manifest") {
    require(ds.contains("path"), ErrorKind::Config, "dataset.path is required for a manifest dataset");
    const fs::path mp = resolve(r.base, ds["path"].get<std::string>());
    ds["path"] = mp.string();
    data = build_manifest_dataset(DatasetManifest::load(existing(mp)), render_options(r.cfg), opt(ds, "sh_order", 9), seed);
  } else {
    fail(ErrorKind::Config, "dataset.kind must be \"learnable\" or \"manifest\"");
  }
  require(!data.split.train.empty() && !data.split.validation.empty(), ErrorKind::Config,
          "train: the split leaves no voiced training or validation frames");

  json& fs_cfg = section(r.cfg, "features");
  const Eigen::MatrixXd x_train = take_rows(data.features, data.split.train);
  const SvdBasis basis = fs_cfg.contains("svd_variance") ? svd_fit_variance(x_train, fs_cfg["svd_variance"].get<double>())
                                                         : svd_fit(x_train, opt(fs_cfg, "svd_rank", 50));
  basis.save(r.out / "svd_basis.bin");

  Stage2File d;
  d.stft = data.stft;
  d.bands = data.bands;
  d.sh_order = data.sh_order;
  d.features = svd_project(basis, data.features);
  d.targets = data.targets;
  d.timeline_features = svd_project(basis, data.timeline_features);
  d.timeline_targets = data.timeline_targets;
  d.decode = data.decode;
  d.split = data.split;
  d.grid = data.grid.points;
  d.expected = take_rows(d.targets, d.split.train).colwise().mean();
  save_stage2(r.out / "dataset.bin", d, {{"svd_rank", basis.rank()}, {"explained", basis.explained}});
  write_wav(r.out / "reference.wav", {d.stft.sample_rate, {data.reference}});

  json& m = section(r.cfg, "model");
  const std::string model = opt<std::string>(m, "kind", "mlp");
  const Eigen::MatrixXd z_train = take_rows(d.features, d.split.train);
  const Eigen::MatrixXd y_train = take_rows(d.targets, d.split.train);
  json summary = {{"model", model},
                  {"train_rows", d.split.train.size()},
                  {"validation_rows", d.split.validation.size()},
                  {"svd_rank", basis.rank()},
                  {"explained", basis.explained}};
  auto finish = [&](Predictor& p) {
    const double tr = evaluate_dd(p.predict(d.features, d.split.train), y_train, d.decode, d.bands.size());
    const double va = evaluate_dd(p.predict(d.features, d.split.validation), take_rows(d.targets, d.split.validation),
                                  d.decode, d.bands.size());
    summary["train_dd"] = tr;
    summary["val_dd"] = va;
    write_json(r.out / "summary.json", summary);
    std::cout << "train: " << model << " train dD " << tr << ", validation dD " << va << '\n';
  };

  if (model == "mlp" || model == "lstm") {
    TargetSpec spec = TargetSpec::parse(opt<std::string>(m, "target", "y_A"));
    spec.max_weight = opt(m, "max_weight", spec.max_weight);
    json& tc = section(r.cfg, "train");
    TrainConfig cfg;
    cfg.batch = opt(tc, "batch", cfg.batch);
    cfg.learning_rate = opt(tc, "learning_rate", cfg.learning_rate);
    cfg.decay = opt(tc, "decay", cfg.decay);
    cfg.patience = opt(tc, "patience", cfg.patience);
    cfg.stop_learning_rate = opt(tc, "stop_learning_rate", cfg.stop_learning_rate);
    cfg.max_epochs = opt(tc, "max_epochs", cfg.max_epochs);
    cfg.seed = seed;
    const int inputs = static_cast<int>(d.features.cols()), outputs = static_cast<int>(d.targets.cols());
    std::unique_ptr<Network> net;
    if (model == "mlp") {
      net = std::make_unique<Mlp>(inputs, outputs, mlp_config(section(m, "mlp"), MlpConfig{}), seed);
    } else {
      json& lj = section(m, "lstm");
      LstmConfig lc;
      lc.layers = opt(lj, "layers", lc.layers);
      lc.hidden = opt(lj, "hidden", lc.hidden);
      lc.sequence = opt(lj, "sequence", lc.sequence);
      lc.decoder = mlp_config(section(lj, "decoder"), lc.decoder);
      net = std::make_unique<Lstm>(inputs, outputs, lc, seed);
    }
    const Objective objective(spec, d.layout(), d.decode, d.expected);
    const TrainResult result = train(*net, objective, d.features, d.targets, d.split, cfg);
    write_history_csv(r.out / "history.csv", result.history);
    save_checkpoint(r.out / "model.bin", *net, {{"target", spec.name()}, {"max_weight", spec.max_weight}});
    summary["target"] = spec.name();
    summary["epochs"] = result.history.size();
    summary["best_epoch"] = result.best_epoch;
    summary["decays"] = result.decays;
    summary["schedule_finished"] = result.schedule_finished;
    summary["diverged"] = result.diverged;
    summary["message"] = result.message;
    if (result.diverged) {
      write_json(r.out / "summary.json", summary);
      std::cerr << "train: " << result.message << "; history in " << (r.out / "history.csv").string() << '\n';
      return 2;
    }
    std::cout << "train: " << result.message << " after " << result.history.size() << " epochs (best " << result.best_epoch
              << ")\n";
    auto p = load_predictor(r.out, d);
    finish(*p);
  } else if (model == "ols" || model == "lasso" || model == "ridge") {
    const LinearKind lk = model == "ols" ? LinearKind::Ols : model == "lasso" ? LinearKind::Lasso : LinearKind::Ridge;
    const double alpha = model == "ols" ? 0.0 : opt(m, "alpha", default_alpha(lk));
    Predictor p;
    p.kind = model;
    p.linear = linear_fit(z_train, y_train, lk, alpha);
    Container c("linear_model");
    c.meta() = {{"model", model}, {"alpha", alpha}};
    c.add("weights", p.linear.weights);
    c.add("bias", Eigen::MatrixXd(p.linear.bias));
    c.save(r.out / "linear.bin");
    finish(p);
  } else if (model == "mean" || model == "median") {
    Predictor p;
    p.kind = model;
    p.naive = NaiveBaseline::fit(y_train, model == "mean" ? NaiveKind::Mean : NaiveKind::Median);
    Container c("naive_model");
    c.meta() = {{"model", model}};
    c.add("value", Eigen::MatrixXd(p.naive.value));
    c.save(r.out / "naive.bin");
    finish(p);
  } else {
    fail(ErrorKind::Config, "model.kind must be one of mlp, lstm, ols, lasso, ridge, mean, median");
  }
  return 0;
}

// ---------------------------------------------------------------- eval

int cmd_eval(Run& r) {
  const fs::path in = input_dir(r, "train");
  const Stage2File d = load_stage2(in / "dataset.bin");
  json& es = section(r.cfg, "eval");
  const bool baselines_only = opt(es, "baselines_only", false);
  const int bands = d.bands.size();
  const Eigen::MatrixXd y_train = take_rows(d.targets, d.split.train);
  const Eigen::MatrixXd y_val = take_rows(d.targets, d.split.validation);
  const Eigen::MatrixXd z_train = take_rows(d.features, d.split.train);
  const Eigen::MatrixXd z_val = take_rows(d.features, d.split.validation);

  std::vector<ReportRow> rows;
  Eigen::RowVectorXd model_mean;
  if (!baselines_only) {
    auto p = load_predictor(in, d);
    require(p.has_value(), ErrorKind::MissingInput,
            "eval: no trained model in " + in.string() + " (set eval.baselines_only to report the baselines alone)");
    const Eigen::MatrixXd pv = p->predict(d.features, d.split.validation);
    rows.push_back({p->kind, evaluate_dd(p->predict(d.features, d.split.train), y_train, d.decode, bands),
                    evaluate_dd(pv, y_val, d.decode, bands), p->note});
    model_mean = pv.colwise().mean();
  }
  for (NaiveKind k : {NaiveKind::Mean, NaiveKind::Median}) {
    const auto b = NaiveBaseline::fit(y_train, k);
    rows.push_back({k == NaiveKind::Mean ? "naive mean" : "naive median",
                    evaluate_dd(b.predict(y_train.rows()), y_train, d.decode, bands),
                    evaluate_dd(b.predict(y_val.rows()), y_val, d.decode, bands), "baseline"});
  }
  for (LinearKind k : {LinearKind::Ols, LinearKind::Lasso, LinearKind::Ridge}) {
    try {
      const auto lm = linear_fit(z_train, y_train, k);
      rows.push_back({to_string(k), evaluate_dd(lm.predict(z_train), y_train, d.decode, bands),
                      evaluate_dd(lm.predict(z_val), y_val, d.decode, bands), "baseline"});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numeric) throw;
      const double nan = std::numeric_limits<double>::quiet_NaN();
      rows.push_back({to_string(k), nan, nan, e.what()});
    }
  }
  write_report_csv(r.out / "report.csv", rows);
  const std::string table = format_report(rows);
  std::ofstream(r.out / "report.txt") << table;
  std::cout << table;

  const int coeffs = d.coeffs();
  const Eigen::MatrixXd target_mean = as_matrix(y_val.colwise().mean(), coeffs, bands);
  write_ring_csv(r.out / "target_polar.csv", ring_di_db(target_mean), d.bands);
  Container mc("mean_coeffs");
  mc.meta()["bands"] = bands;
  mc.add("target", target_mean);
  if (model_mean.size()) {
    const Eigen::MatrixXd mm = as_matrix(model_mean, coeffs, bands);
    write_ring_csv(r.out / "model_polar.csv", ring_di_db(mm), d.bands);
    mc.add("coeffs", mm);
  }
  mc.save(r.out / "mean_coeffs.bin");
  return 0;
}

// ---------------------------------------------------------------- plot

struct Source {
  std::string label, color;
  bool dashed;
  RingTable table;
};

int cmd_plot(Run& r) {
  json& in = section(r.cfg, "inputs");
  std::vector<Source> sources;
  std::vector<std::pair<std::string, fs::path>> contours;
  auto add = [&](const char* name, const char* file, const char* label, const char* color, bool dashed) {
    if (!in.contains(name)) return;
    const fs::path dir = input_dir(r, name);
    sources.push_back({label, color, dashed, read_ring_csv(existing(dir / file))});
  };
  add("synth", "analytic_polar.csv", "analytic", "#000000", true);
  add("measure", "polar.csv", "measured", "#1f4fbf", false);
  if (in.contains("eval")) {
    add("eval", "target_polar.csv", "target", "#2a8a2a", true);
    if (fs::exists(fs::path(in["eval"].get<std::string>()) / "model_polar.csv"))
      add("eval", "model_polar.csv", "model", "#c0392b", false);
  }
  require(!sources.empty(), ErrorKind::MissingInput, "plot: no inputs (inputs.synth, inputs.measure or inputs.eval)");

  json& ps = section(r.cfg, "plot");
  const double min_db = opt(ps, "min_db", -30.0), max_db = opt(ps, "max_db", 10.0);
  std::vector<double> wanted = opt(ps, "bands_hz", std::vector<double>{});
  const std::vector<double>& available = sources.front().table.band_hz;
  std::vector<double> selected;
  if (wanted.empty()) {
    selected = available;
  } else {
    for (double hz : wanted) {
      const auto it = std::min_element(available.begin(), available.end(),
                                       [&](double a, double b) { return std::abs(a - hz) < std::abs(b - hz); });
      if (std::find(selected.begin(), selected.end(), *it) == selected.end()) selected.push_back(*it);
    }
  }

  std::optional<Container> measured, modelled;
  if (in.contains("measure")) measured = Container::load(existing(fs::path(in["measure"].get<std::string>()) / "mean_coeffs.bin"));
  if (in.contains("eval")) modelled = Container::load(existing(fs::path(in["eval"].get<std::string>()) / "mean_coeffs.bin"));

  int written = 0;
  for (double hz : selected) {
    std::vector<PolarSeries> series;
    std::vector<int> columns;
    for (const auto& s : sources) {
      const auto& b = s.table.band_hz;
      int col = -1;
      for (size_t k = 0; k < b.size(); ++k)
        if (std::abs(b[k] - hz) <= 1e-3 * hz) col = static_cast<int>(k);
      columns.push_back(col);
      if (col < 0) continue;
      PolarSeries ps_;
      ps_.label = s.label;
      ps_.color = s.color;
      ps_.dashed = s.dashed;
      ps_.azimuth_deg = s.table.azimuth_deg;
      ps_.di_db.assign(s.table.di_db.col(col).data(), s.table.di_db.col(col).data() + s.table.di_db.rows());
      series.push_back(std::move(ps_));
    }
    const std::string tag = hz_label(hz);
    write_polar_svg(r.out / ("polar_" + tag + "Hz.svg"), "DI at " + tag + " Hz, azimuthal plane", series, min_db, max_db);

    std::ofstream o(r.out / ("polar_" + tag + "Hz.csv"));
    o << "azimuth_deg";
    for (const auto& s : series) o << ',' << s.label;
    o << '\n';
    char buf[32];
    for (size_t a = 0; a < series.front().azimuth_deg.size(); ++a) {
      std::snprintf(buf, sizeof buf, "%.4f", series.front().azimuth_deg[a]);
      o << buf;
      for (const auto& s : series) {
        std::snprintf(buf, sizeof buf, ",%.4f", a < s.di_db.size() ? s.di_db[a] : std::nan(""));
        o << buf;
      }
      o << '\n';
    }

    auto contour = [&](const std::optional<Container>& c, const char* tensor, const std::string& name) {
      if (!c || !c->has(tensor)) return;
      const int nb = c->meta().at("bands").get<int>();
      const BandTable bt = first_bands(nb);
      for (int k = 0; k < nb; ++k)
        if (std::abs(bt.centers[static_cast<size_t>(k)] - hz) <= 1e-3 * hz)
          write_contour_csv(r.out / (name + "_" + tag + "Hz.csv"), c->get(tensor).matrix().col(k));
    };
    contour(measured, "coeffs", "contour_measured");
    contour(modelled, "coeffs", "contour_model");
    contour(modelled, "target", "contour_target");
    ++written;
  }
  std::cout << "plot: " << written << " bands, " << sources.size() << " series\n";
  return 0;
}

// ---------------------------------------------------------------- resynth

int cmd_resynth(Run& r) {
  const fs::path in = input_dir(r, "train");
  const Stage2File d = load_stage2(in / "dataset.bin");
  const WavData ref = read_wav(existing(in / "reference.wav"));
  json& rs = section(r.cfg, "resynth");
  const std::string mode = opt<std::string>(rs, "mode", "model");
  const int frames = static_cast<int>(d.timeline_targets.rows());
  const int bands = d.bands.size(), coeffs = d.coeffs();
  const auto points = static_cast<Eigen::Index>(d.grid.size());

  std::vector<Eigen::MatrixXd> dprime(static_cast<size_t>(frames));
  if (mode == "identity") {
    for (auto& m : dprime) m = Eigen::MatrixXd::Ones(points, bands);
  } else {
    Eigen::MatrixXd a;
    if (mode == "oracle") {
      a = d.timeline_targets;
    } else if (mode == "model") {
      auto p = load_predictor(in, d);
      require(p.has_value(), ErrorKind::MissingInput, "resynth: no trained model in " + in.string());
      std::vector<int> rows(static_cast<size_t>(frames));
      std::iota(rows.begin(), rows.end(), 0);
      a = p->predict(d.timeline_features, rows);
    } else {
      fail(ErrorKind::Config, "resynth.mode must be model, identity or oracle");
    }
    for (int t = 0; t < frames; ++t) dprime[static_cast<size_t>(t)] = d.decode * as_matrix(a.row(t), coeffs, bands);
  }
  const ResynthResult res = resynthesize(ref.channels.front(), dprime, d.bands, d.stft);
  write_wav(r.out / "resynth.wav", {d.stft.sample_rate, res.signals});

  // Expected LTAS-DI: true D weighted by the reference band power of each frame.
  const Eigen::MatrixXd p_ref = third_octave_stps(ref.channels.front(), d.stft, d.bands);
  const Eigen::MatrixXd di = ltas_di(res.signals, ref.channels.front(), d.stft, d.bands);
  Eigen::MatrixXd num = Eigen::MatrixXd::Zero(points, bands);
  for (int t = 0; t < frames && t < p_ref.rows(); ++t) {
    const Eigen::MatrixXd dt = d.decode * as_matrix(d.timeline_targets.row(t), coeffs, bands);
    num += (dt.array().rowwise() * p_ref.row(t).array()).matrix();
  }
  const Eigen::RowVectorXd den = p_ref.topRows(std::min<Eigen::Index>(frames, p_ref.rows())).colwise().sum();
  double worst = 0.0, sum = 0.0;
  std::ofstream o(r.out / "ltas_comparison.csv");
  o << "point,azimuth_deg,elevation_deg";
  for (double hz : d.bands.centers) o << ",resynth_" << hz_label(hz) << ",expected_" << hz_label(hz);
  o << '\n';
  char buf[64];
  for (Eigen::Index g = 0; g < points; ++g) {
    std::snprintf(buf, sizeof buf, "%ld,%.4f,%.4f", static_cast<long>(g), d.grid[static_cast<size_t>(g)].azimuth * 180.0 / std::numbers::pi,
                  d.grid[static_cast<size_t>(g)].elevation * 180.0 / std::numbers::pi);
    o << buf;
    for (int c = 0; c < bands; ++c) {
      const double expected = 10.0 * std::log10(std::max(num(g, c) / std::max(den(c), 1e-300), 1e-12));
      const double err = std::abs(di(g, c) - expected);
      worst = std::max(worst, err);
      sum += err;
      std::snprintf(buf, sizeof buf, ",%.4f,%.4f", di(g, c), expected);
      o << buf;
    }
    o << '\n';
  }
  const double mean_err = sum / static_cast<double>(points * bands);
  write_json(r.out / "summary.json", {{"mode", mode},
                                      {"channels", res.signals.size()},
                                      {"clamped", res.clamped},
                                      {"ltas_di_mean_abs_error_db", mean_err},
                                      {"ltas_di_max_abs_error_db", worst}});
  std::cout << "resynth (" << mode << "): " << res.signals.size() << " channels, LTAS-DI error mean " << mean_err
            << " dB, max " << worst << " dB, clamped " << res.clamped << '\n';
  return 0;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Numeric: return 2;
    case ErrorKind::MissingInput: return 3;
    default: return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Egocentric speech directivity: synthesis, reconstruction, measurement and regression"};
  app.require_subcommand(1);
  Flags flags;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON config file");
    sub->add_option("--seed", flags.seed, "random seed (overrides the config)");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--threads", flags.threads, "worker threads")->check(CLI::PositiveNumber);
    return sub;
  };
  auto upstream = [&](CLI::App* sub, const char* what) {
    sub->add_option("--input", flags.input, std::string("output directory of ") + what);
  };

  // Per-command overrides: option -> dotted config key.
  enum class Kind { Text, Path, Integer, Number, Set };
  struct Bound {
    CLI::Option* option;
    std::string key;
    Kind kind;
    std::shared_ptr<std::string> value = std::make_shared<std::string>();
  };
  std::vector<Bound> bound;
  auto bind = [&](CLI::App* sub, const std::string& flag, const std::string& key, Kind kind, const std::string& help) {
    Bound b{nullptr, key, kind};
    b.option = kind == Kind::Set ? sub->add_flag(flag, help) : sub->add_option(flag, *b.value, help);
    if (kind == Kind::Integer) b.option->check(CLI::Number);
    if (kind == Kind::Number) b.option->check(CLI::Number);
    bound.push_back(b);
  };

  auto* synth = common(app.add_subcommand("synth", "simulate a chamber capture of a synthetic source"));
  bind(synth, "--scene", "scene", Kind::Path, "scene file");

  auto* reconstruct = common(app.add_subcommand("reconstruct", "global soundfield estimate and egocentric grid rendering"));
  upstream(reconstruct, "synth");
  bind(reconstruct, "--grid", "render.grid", Kind::Text, "tdesign or regular");
  bind(reconstruct, "--no-mute", "render.mute", Kind::Set, "keep points outside the valid zone");
  bind(reconstruct, "--radius", "estimator.radius", Kind::Number, "source region radius R in metres");

  auto* measure = common(app.add_subcommand("measure", "directivity factors, SH coefficients and order search"));
  upstream(measure, "reconstruct");
  bind(measure, "--order", "measure.sh_order", Kind::Integer, "SH order of the coefficients");

  auto* trn = common(app.add_subcommand("train", "build the stage-2 dataset and fit a model"));
  bind(trn, "--model", "model.kind", Kind::Text, "mlp, lstm, ols, lasso, ridge, mean or median");
  bind(trn, "--target", "model.target", Kind::Text, "target spec, e.g. y_A or y_D+e+fw+sw");
  bind(trn, "--epochs", "train.max_epochs", Kind::Integer, "epoch limit");
  bind(trn, "--frames", "dataset.frames", Kind::Integer, "learnable dataset length in frames");

  auto* eval = common(app.add_subcommand("eval", "dD report for the model and every baseline"));
  upstream(eval, "train");
  bind(eval, "--baselines-only", "eval.baselines_only", Kind::Set, "report the baselines without a model");

  auto* plot = common(app.add_subcommand("plot", "polar SVGs and contour CSVs"));
  bind(plot, "--synth", "inputs.synth", Kind::Path, "synth output (analytic curves)");
  bind(plot, "--measure", "inputs.measure", Kind::Path, "measure output (measured curves)");
  bind(plot, "--eval", "inputs.eval", Kind::Path, "eval output (target and model curves)");

  auto* resynth = common(app.add_subcommand("resynth", "estimated grid audio from predicted directivity"));
  upstream(resynth, "train");
  bind(resynth, "--mode", "resynth.mode", Kind::Text, "model, identity or oracle");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  for (const auto& b : bound) {
    if (!b.option->count()) continue;
    switch (b.kind) {
      case Kind::Text: flags.overrides[b.key] = *b.value; break;
      case Kind::Path: flags.overrides[b.key] = fs::absolute(*b.value).string(); break;
      case Kind::Integer: flags.overrides[b.key] = std::stoll(*b.value); break;
      case Kind::Number: flags.overrides[b.key] = std::stod(*b.value); break;
      case Kind::Set: flags.overrides[b.key] = b.key == "render.mute" ? false : true; break;
    }
  }

  std::optional<Run> run;
  try {
    run = prepare(command, flags);
    int code = 0;
    if (command == "synth") code = cmd_synth(*run);
    else if (command == "reconstruct") code = cmd_reconstruct(*run);
    else if (command == "measure") code = cmd_measure(*run);
    else if (command == "train") code = cmd_train(*run);
    else if (command == "eval") code = cmd_eval(*run);
    else if (command == "plot") code = cmd_plot(*run);
    else code = cmd_resynth(*run);
    write_json(run->out / "config.json", run->cfg);
    return code;
  } catch (const Error& e) {
    std::cerr << "egodir " << command << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    std::cerr << "egodir " << command << ": config: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "egodir " << command << ": " << e.what() << '\n';
    return 2;
  }
}
