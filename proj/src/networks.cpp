#include <algorithm>
#include <cmath>

#include "egodir/error.hpp"
#include "egodir/regressors.hpp"

namespace egodir {

namespace {

Param make_param(std::string name, Eigen::Index rows, Eigen::Index cols) {
  Param p;
  p.name = std::move(name);
  p.value = Eigen::MatrixXd::Zero(rows, cols);
  p.grad = Eigen::MatrixXd::Zero(rows, cols);
  p.m = Eigen::MatrixXd::Zero(rows, cols);
  p.v = Eigen::MatrixXd::Zero(rows, cols);
  return p;
}

void fill_uniform(Eigen::MatrixXd& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = d(rng);
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& features, std::span<const int> rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < features.rows(), ErrorKind::Shape, "network input row out of range");
    x.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
  }
  return x;
}

MlpConfig mlp_config_from(const nlohmann::json& j) {
  MlpConfig c;
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.slope = j.at("slope").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.batch_norm = j.at("batch_norm").get<bool>();
  c.momentum = j.at("momentum").get<double>();
  c.bn_epsilon = j.at("bn_epsilon").get<double>();
  return c;
}

nlohmann::json mlp_config_json(const MlpConfig& c) {
  return {{"hidden", c.hidden},         {"slope", c.slope},       {"dropout", c.dropout},
          {"batch_norm", c.batch_norm}, {"momentum", c.momentum}, {"bn_epsilon", c.bn_epsilon}};
}

}  // namespace

void Network::zero_grad() {
  for (Param* p : params()) p->grad.setZero();
}

Eigen::MatrixXd Network::predict(const Eigen::MatrixXd& features, std::span<const int> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), outputs());
  constexpr size_t kChunk = 1024;
  for (size_t start = 0; start < rows.size(); start += kChunk) {
    const size_t n = std::min(kChunk, rows.size() - start);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) =
        forward(features, rows.subspan(start, n), Mode::Eval);
  }
  return out;
}

// ---------------------------------------------------------------- MLP

Mlp::Mlp(int inputs, int outputs, MlpConfig cfg, std::uint64_t seed) : inputs_(inputs), outputs_(outputs), cfg_(std::move(cfg)) {
  require(inputs > 0 && outputs > 0, ErrorKind::Config, "mlp: input and output sizes must be positive");
  require(cfg_.dropout >= 0.0 && cfg_.dropout < 1.0, ErrorKind::Config, "mlp: dropout must lie in [0, 1)");
  for (size_t i = 0; i < cfg_.hidden.size(); ++i) {
    require(cfg_.hidden[i] > 0, ErrorKind::Config, "mlp: hidden widths must be positive");
    require(i == 0 || cfg_.hidden[i] > cfg_.hidden[i - 1], ErrorKind::Config, "mlp: hidden widths must be strictly increasing");
  }
  std::mt19937_64 rng(seed);
  int fan_in = inputs;
  auto add_layer = [&](int width, bool hidden) {
    Layer l;
    const std::string p = "l" + std::to_string(layers_.size()) + ".";
    l.hidden = hidden;
    l.w = make_param(p + "w", fan_in, width);
    l.b = make_param(p + "b", 1, width);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    fill_uniform(l.w.value, bound, rng);
    fill_uniform(l.b.value, bound, rng);
    if (hidden && cfg_.batch_norm) {
      l.gamma = make_param(p + "gamma", 1, width);
      l.gamma.value.setOnes();
      l.beta = make_param(p + "beta", 1, width);
      l.running_mean = Eigen::MatrixXd::Zero(1, width);
      l.running_var = Eigen::MatrixXd::Ones(1, width);
    }
    layers_.push_back(std::move(l));
    fan_in = width;
  };
  for (int w : cfg_.hidden) add_layer(w, true);
  add_layer(outputs, false);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& features, std::span<const int> rows, Mode mode, std::mt19937_64* rng) {
  return forward_matrix(gather_rows(features, rows), mode, rng);
}

Eigen::MatrixXd Mlp::forward_matrix(const Eigen::MatrixXd& x, Mode mode, std::mt19937_64* rng) {
  require(x.cols() == inputs_, ErrorKind::Shape,
          "mlp: expected " + std::to_string(inputs_) + " input features, got " + std::to_string(x.cols()));
  const bool train = mode == Mode::Train;
  const bool drop = train && cfg_.dropout > 0.0;
  require(!drop || rng != nullptr, ErrorKind::Config, "mlp: train-mode dropout needs a random generator");
  require(!(train && cfg_.batch_norm && x.rows() < 2), ErrorKind::Shape, "mlp: train-mode batch norm needs at least 2 rows");
  Eigen::MatrixXd h = x;
  const double n = static_cast<double>(x.rows());
  for (Layer& l : layers_) {
    l.input = h;
    Eigen::MatrixXd z = (h * l.w.value).rowwise() + l.b.value.row(0);
    if (!l.hidden) return z;
    if (cfg_.batch_norm) {
      Eigen::RowVectorXd mean, var;
      if (train) {
        mean = z.colwise().mean();
        var = (z.rowwise() - mean).array().square().colwise().sum() / n;
        l.running_mean = (1.0 - cfg_.momentum) * l.running_mean + cfg_.momentum * mean;
        l.running_var = (1.0 - cfg_.momentum) * l.running_var + cfg_.momentum * (var * (n / (n - 1.0)));
      } else {
        mean = l.running_mean.row(0);
        var = l.running_var.row(0);
      }
      l.batch_stats = train;
      l.inv_std = (var.array() + cfg_.bn_epsilon).rsqrt().matrix();
      l.xhat = (z.rowwise() - mean).array().rowwise() * l.inv_std.array();
      z = (l.xhat.array().rowwise() * l.gamma.value.row(0).array()).rowwise() + l.beta.value.row(0).array();
    }
    l.pre_act = z;
    h = z.unaryExpr([s = cfg_.slope](double v) { return v > 0.0 ? v : s * v; });
    if (drop) {
      const double keep = 1.0 - cfg_.dropout;
      std::bernoulli_distribution b(keep);
      l.mask.resize(h.rows(), h.cols());
      for (Eigen::Index c = 0; c < h.cols(); ++c)
        for (Eigen::Index r = 0; r < h.rows(); ++r) l.mask(r, c) = b(*rng) ? 1.0 / keep : 0.0;
      h = h.cwiseProduct(l.mask);
    } else {
      l.mask.resize(0, 0);
    }
  }
  return h;
}

Eigen::MatrixXd Mlp::backward_input(const Eigen::MatrixXd& d_out) {
  Eigen::MatrixXd g = d_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    Layer& l = *it;
    require(g.rows() == l.input.rows(), ErrorKind::Shape, "mlp: backward without a matching forward");
    if (l.hidden) {
      if (l.mask.size() > 0) g = g.cwiseProduct(l.mask);
      g = g.cwiseProduct(l.pre_act.unaryExpr([s = cfg_.slope](double v) { return v > 0.0 ? 1.0 : s; }));
      if (cfg_.batch_norm) {
        l.gamma.grad += g.cwiseProduct(l.xhat).colwise().sum();
        l.beta.grad += g.colwise().sum();
        const Eigen::MatrixXd dxhat = g.array().rowwise() * l.gamma.value.row(0).array();
        if (l.batch_stats) {
          const double n = static_cast<double>(g.rows());
          const Eigen::RowVectorXd s1 = dxhat.colwise().sum();
          const Eigen::RowVectorXd s2 = dxhat.cwiseProduct(l.xhat).colwise().sum();
          Eigen::MatrixXd t = (n * dxhat).rowwise() - s1;
          t -= (l.xhat.array().rowwise() * s2.array()).matrix();
          g = t.array().rowwise() * (l.inv_std.array() / n);
        } else {
          g = dxhat.array().rowwise() * l.inv_std.array();
        }
      }
    }
    l.w.grad += l.input.transpose() * g;
    l.b.grad += g.colwise().sum();
    g = g * l.w.value.transpose();
  }
  return g;
}

void Mlp::backward(const Eigen::MatrixXd& d_out) { backward_input(d_out); }

std::vector<Param*> Mlp::params() {
  std::vector<Param*> out;
  for (Layer& l : layers_) {
    out.push_back(&l.w);
    out.push_back(&l.b);
    if (l.hidden && cfg_.batch_norm) {
      out.push_back(&l.gamma);
      out.push_back(&l.beta);
    }
  }
  return out;
}

std::vector<Eigen::MatrixXd*> Mlp::buffers() {
  std::vector<Eigen::MatrixXd*> out;
  for (Layer& l : layers_)
    if (l.hidden && cfg_.batch_norm) {
      out.push_back(&l.running_mean);
      out.push_back(&l.running_var);
    }
  return out;
}

nlohmann::json Mlp::config() const {
  return {{"inputs", inputs_}, {"outputs", outputs_}, {"mlp", mlp_config_json(cfg_)}};
}

// ---------------------------------------------------------------- LSTM

Lstm::Lstm(int inputs, int outputs, LstmConfig cfg, std::uint64_t seed) : inputs_(inputs), outputs_(outputs), cfg_(std::move(cfg)) {
  require(inputs > 0 && outputs > 0, ErrorKind::Config, "lstm: input and output sizes must be positive");
  require(cfg_.layers >= 1 && cfg_.hidden >= 1, ErrorKind::Config, "lstm: needs at least one layer of positive width");
  require(cfg_.sequence >= 1, ErrorKind::Config, "lstm: sequence length must be at least 1");
  std::mt19937_64 rng(seed);
  const int h = cfg_.hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  for (int l = 0; l < cfg_.layers; ++l) {
    Layer layer;
    const std::string p = "lstm" + std::to_string(l) + ".";
    layer.w = make_param(p + "w", l == 0 ? inputs : h, 4 * h);
    layer.u = make_param(p + "u", h, 4 * h);
    layer.b = make_param(p + "b", 1, 4 * h);
    fill_uniform(layer.w.value, bound, rng);
    fill_uniform(layer.u.value, bound, rng);
    fill_uniform(layer.b.value, bound, rng);
    layers_.push_back(std::move(layer));
  }
  decoder_ = std::make_unique<Mlp>(h, outputs, cfg_.decoder, rng());
  for (Param* q : decoder_->params()) q->name = "dec." + q->name;
}

Eigen::MatrixXd Lstm::forward(const Eigen::MatrixXd& features, std::span<const int> rows, Mode mode, std::mt19937_64* rng) {
  require(!rows.empty(), ErrorKind::Shape, "lstm: empty batch");
  require(features.cols() == inputs_, ErrorKind::Shape,
          "lstm: expected " + std::to_string(inputs_) + " input features, got " + std::to_string(features.cols()));
  const int s = cfg_.sequence;
  std::vector<Eigen::MatrixXd> steps(static_cast<size_t>(s), Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), inputs_));
  for (size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < features.rows(), ErrorKind::Shape, "network input row out of range");
    for (int t = 0; t < s; ++t) steps[static_cast<size_t>(t)].row(static_cast<Eigen::Index>(i)) = features.row(std::max(rows[i] - (s - 1 - t), 0));
  }
  return forward_steps(steps, mode, rng);
}

Eigen::MatrixXd Lstm::forward_steps(const std::vector<Eigen::MatrixXd>& steps, Mode mode, std::mt19937_64* rng) {
  require(!steps.empty(), ErrorKind::Shape, "lstm: empty input sequence");
  const int h = cfg_.hidden;
  const Eigen::Index batch = steps.front().rows();
  std::vector<Eigen::MatrixXd> seq = steps;
  for (Layer& layer : layers_) {
    layer.steps.clear();
    Eigen::MatrixXd hp = Eigen::MatrixXd::Zero(batch, h), cp = Eigen::MatrixXd::Zero(batch, h);
    for (auto& x : seq) {
      require(x.rows() == batch && x.cols() == layer.w.value.rows(), ErrorKind::Shape, "lstm: step shape mismatch");
      const Eigen::MatrixXd z = ((x * layer.w.value + hp * layer.u.value).rowwise() + layer.b.value.row(0)).eval();
      Step st;
      st.x = x;
      st.h_prev = hp;
      st.c_prev = cp;
      st.i = sigmoid(z.middleCols(0, h));
      st.f = sigmoid(z.middleCols(h, h));
      st.g = z.middleCols(2 * h, h).array().tanh().matrix();
      st.o = sigmoid(z.middleCols(3 * h, h));
      st.c = st.f.cwiseProduct(cp) + st.i.cwiseProduct(st.g);
      st.tanh_c = st.c.array().tanh().matrix();
      hp = st.o.cwiseProduct(st.tanh_c);
      cp = st.c;
      x = hp;
      layer.steps.push_back(std::move(st));
    }
  }
  return decoder_->forward_matrix(seq.back(), mode, rng);
}

void Lstm::backward(const Eigen::MatrixXd& d_out) {
  const int h = cfg_.hidden;
  const Eigen::MatrixXd d_last = decoder_->backward_input(d_out);
  const size_t steps = layers_.front().steps.size();
  std::vector<Eigen::MatrixXd> dh_seq(steps, Eigen::MatrixXd::Zero(d_last.rows(), h));
  dh_seq.back() = d_last;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    Layer& layer = *it;
    std::vector<Eigen::MatrixXd> dx_seq(steps);
    Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(d_last.rows(), h), dc_next = dh_next;
    Eigen::MatrixXd dz(d_last.rows(), 4 * h);
    for (size_t t = steps; t-- > 0;) {
      const Step& st = layer.steps[t];
      const Eigen::MatrixXd dh = dh_seq[t] + dh_next;
      const Eigen::ArrayXXd dc = dh.array() * st.o.array() * (1.0 - st.tanh_c.array().square()) + dc_next.array();
      dz.middleCols(0, h) = (dc * st.g.array() * st.i.array() * (1.0 - st.i.array())).matrix();
      dz.middleCols(h, h) = (dc * st.c_prev.array() * st.f.array() * (1.0 - st.f.array())).matrix();
      dz.middleCols(2 * h, h) = (dc * st.i.array() * (1.0 - st.g.array().square())).matrix();
      dz.middleCols(3 * h, h) = (dh.array() * st.tanh_c.array() * st.o.array() * (1.0 - st.o.array())).matrix();
      dc_next = (dc * st.f.array()).matrix();
      layer.w.grad += st.x.transpose() * dz;
      layer.u.grad += st.h_prev.transpose() * dz;
      layer.b.grad += dz.colwise().sum();
      dx_seq[t] = dz * layer.w.value.transpose();
      dh_next = dz * layer.u.value.transpose();
    }
    dh_seq = std::move(dx_seq);
  }
}

std::vector<Param*> Lstm::params() {
  std::vector<Param*> out;
  for (Layer& l : layers_) {
    out.push_back(&l.w);
    out.push_back(&l.u);
    out.push_back(&l.b);
  }
  for (Param* p : decoder_->params()) out.push_back(p);
  return out;
}

std::vector<Eigen::MatrixXd*> Lstm::buffers() { return decoder_->buffers(); }

nlohmann::json Lstm::config() const {
  return {{"inputs", inputs_},
          {"outputs", outputs_},
          {"layers", cfg_.layers},
          {"hidden", cfg_.hidden},
          {"sequence", cfg_.sequence},
          {"decoder", mlp_config_json(cfg_.decoder)}};
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& path, Network& net, const nlohmann::json& meta) {
  Container c("checkpoint");
  c.meta()["network"] = net.kind();
  c.meta()["config"] = net.config();
  c.meta()["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
  for (Param* p : net.params()) c.add(p->name, p->value);
  const auto bufs = net.buffers();
  for (size_t i = 0; i < bufs.size(); ++i) c.add("buffer" + std::to_string(i), *bufs[i]);
  c.save(path);
}

std::unique_ptr<Network> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  const Container c = Container::load(path, "checkpoint");
  std::unique_ptr<Network> net;
  try {
    const auto& j = c.meta().at("config");
    const std::string kind = c.meta().at("network").get<std::string>();
    if (kind == "mlp") {
      net = std::make_unique<Mlp>(j.at("inputs").get<int>(), j.at("outputs").get<int>(), mlp_config_from(j.at("mlp")), 0);
    } else if (kind == "lstm") {
      LstmConfig lc;
      lc.layers = j.at("layers").get<int>();
      lc.hidden = j.at("hidden").get<int>();
      lc.sequence = j.at("sequence").get<int>();
      lc.decoder = mlp_config_from(j.at("decoder"));
      net = std::make_unique<Lstm>(j.at("inputs").get<int>(), j.at("outputs").get<int>(), lc, 0);
    } else {
      fail(ErrorKind::Config, "checkpoint " + path.string() + ": unknown network kind '" + kind + "'");
    }
    if (meta) *meta = c.meta().value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "checkpoint " + path.string() + ": malformed header (" + e.what() + ")");
  }
  auto assign = [&](const std::string& name, Eigen::MatrixXd& dst) {
    const Eigen::MatrixXd m = c.get(name).matrix();
    require(m.rows() == dst.rows() && m.cols() == dst.cols(), ErrorKind::Config,
            "checkpoint " + path.string() + ": tensor '" + name + "' has the wrong shape");
    dst = m;
  };
  for (Param* p : net->params()) assign(p->name, p->value);
  const auto bufs = net->buffers();
  for (size_t i = 0; i < bufs.size(); ++i) assign("buffer" + std::to_string(i), *bufs[i]);
  return net;
}

}  // namespace egodir
