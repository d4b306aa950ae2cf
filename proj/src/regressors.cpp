#include "egodir/regressors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "egodir/error.hpp"

namespace egodir {

std::string TargetSpec::name() const {
  std::string s = domain == TargetDomain::Coeffs ? "y_A" : "y_D";
  if (deviation) s += "+e";
  if (freq_weight) s += "+fw";
  if (sign_weight) s += "+sw";
  return s;
}

TargetSpec TargetSpec::parse(const std::string& name) {
  TargetSpec t;
  std::stringstream ss(name);
  std::string part;
  bool first = true;
  while (std::getline(ss, part, '+')) {
    if (first) {
      if (part == "y_A") t.domain = TargetDomain::Coeffs;
      else if (part == "y_D") t.domain = TargetDomain::Decoded;
      else fail(ErrorKind::Config, "unknown target domain '" + part + "' (expected y_A or y_D)");
      first = false;
    } else if (part == "e") t.deviation = true;
    else if (part == "fw") t.freq_weight = true;
    else if (part == "sw") t.sign_weight = true;
    else fail(ErrorKind::Config, "unknown target flag '" + part + "' in '" + name + "'");
  }
  require(!first, ErrorKind::Config, "empty target spec");
  return t;
}

std::vector<TargetSpec> TargetSpec::grid() {
  std::vector<TargetSpec> out;
  for (int d = 0; d < 2; ++d)
    for (int e = 0; e < 2; ++e)
      for (int fw = 0; fw < 2; ++fw)
        for (int sw = 0; sw < 2; ++sw) {
          TargetSpec t;
          t.domain = d ? TargetDomain::Decoded : TargetDomain::Coeffs;
          t.deviation = e;
          t.freq_weight = fw;
          t.sign_weight = sw;
          out.push_back(t);
        }
  return out;
}

Eigen::VectorXd frequency_weights(int bands, double max_weight) {
  require(bands >= 1, ErrorKind::Config, "frequency weights need at least one band");
  Eigen::VectorXd w = Eigen::VectorXd::Ones(bands);
  if (bands == 1) {
    w(0) = max_weight;
    return w;
  }
  for (int c = 0; c < bands; ++c) w(c) = 1.0 + (bands - 1.0 - c) * (max_weight - 1.0) / (bands - 1.0);
  return w;
}

double sign_agreement(std::span<const double> y, std::span<const double> y_hat, double eps) {
  require(y.size() == y_hat.size() && !y.empty(), ErrorKind::Shape, "sign_agreement: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    const double a = y[i] >= 0.0 ? 1.0 : -1.0;
    const double b = y_hat[i] >= 0.0 ? 1.0 : -1.0;
    s += 1.0 + a * b;
  }
  return eps + s / (2.0 * static_cast<double>(y.size()));
}

namespace {

// rows x (J * C) -> J x (rows * C)
Eigen::MatrixXd to_columns(const Eigen::MatrixXd& rows, int coeffs, int bands) {
  Eigen::MatrixXd out(coeffs, rows.rows() * bands);
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (int j = 0; j < coeffs; ++j)
      for (int c = 0; c < bands; ++c) out(j, r * bands + c) = rows(r, j * bands + c);
  return out;
}

// P x (rows * C) -> rows x (P * C)
Eigen::MatrixXd to_rows(const Eigen::MatrixXd& cols, int bands) {
  const Eigen::Index n = cols.cols() / bands;
  Eigen::MatrixXd out(n, cols.rows() * bands);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index p = 0; p < cols.rows(); ++p)
      for (int c = 0; c < bands; ++c) out(r, p * bands + c) = cols(p, r * bands + c);
  return out;
}

}  // namespace

Eigen::MatrixXd decode_rows(const Eigen::MatrixXd& coeffs, const Eigen::MatrixXd& t, int bands) {
  require(bands > 0 && coeffs.cols() == t.cols() * bands, ErrorKind::Shape, "decode_rows: coefficient layout mismatch");
  return to_rows(t * to_columns(coeffs, static_cast<int>(t.cols()), bands), bands);
}

Objective::Objective(TargetSpec spec, TargetLayout layout, Eigen::MatrixXd decode, Eigen::RowVectorXd expected)
    : spec_(spec), layout_(layout), decode_(std::move(decode)), expected_(std::move(expected)) {
  require(layout_.bands > 0 && layout_.coeffs > 0, ErrorKind::Config, "objective: empty target layout");
  require(decode_.cols() == layout_.coeffs, ErrorKind::Shape, "objective: decode matrix does not match the coefficient count");
  if (expected_.size() == 0) expected_ = Eigen::RowVectorXd::Zero(layout_.size());
  require(expected_.size() == layout_.size(), ErrorKind::Shape, "objective: E[y] size mismatch");
  weights_ = spec_.freq_weight ? frequency_weights(layout_.bands, spec_.max_weight) : Eigen::VectorXd::Ones(layout_.bands);
}

Eigen::MatrixXd Objective::model_targets(const Eigen::MatrixXd& y) const {
  if (!spec_.deviation) return y;
  return y.rowwise() - expected_;
}

Eigen::MatrixXd Objective::to_coeffs(const Eigen::MatrixXd& out) const {
  if (!spec_.deviation) return out;
  return out.rowwise() + expected_;
}

double Objective::loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, Eigen::MatrixXd* grad) const {
  require(pred.rows() == target.rows() && pred.cols() == layout_.size() && target.cols() == layout_.size(), ErrorKind::Shape,
          "loss: prediction and target shapes differ from the layout");
  const int bands = layout_.bands;
  const Eigen::Index n = pred.rows();
  const bool decoded = spec_.domain == TargetDomain::Decoded;
  const Eigen::MatrixXd diff = pred - target;
  const Eigen::MatrixXd e = decoded ? decode_rows(diff, decode_, bands) : diff;

  Eigen::VectorXd s = Eigen::VectorXd::Ones(n);
  if (spec_.sign_weight) {
    const Eigen::MatrixXd yp = decoded ? decode_rows(pred, decode_, bands) : pred;
    const Eigen::MatrixXd yt = decoded ? decode_rows(target, decode_, bands) : target;
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::RowVectorXd a = yt.row(r), b = yp.row(r);
      s(r) = sign_agreement(std::span<const double>(a.data(), static_cast<size_t>(a.size())),
                            std::span<const double>(b.data(), static_cast<size_t>(b.size())), spec_.sign_epsilon);
    }
  }
  Eigen::RowVectorXd w(e.cols());
  for (Eigen::Index i = 0; i < e.cols(); ++i) w(i) = weights_(i % bands);

  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) total += (e.row(r).array().square() * w.array()).sum() / s(r);
  if (grad) {
    Eigen::MatrixXd ge(e.rows(), e.cols());
    for (Eigen::Index r = 0; r < n; ++r) ge.row(r) = 2.0 * e.row(r).cwiseProduct(w) / (s(r) * static_cast<double>(n));
    if (decoded) {
      // D = T M^T per row, so dM^T = T^T dD
      Eigen::MatrixXd gd(decode_.rows(), n * bands);
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index g = 0; g < decode_.rows(); ++g)
          for (int c = 0; c < bands; ++c) gd(g, r * bands + c) = ge(r, g * bands + c);
      *grad = to_rows(decode_.transpose() * gd, bands);
    } else {
      *grad = std::move(ge);
    }
  }
  return total / static_cast<double>(std::max<Eigen::Index>(n, 1));
}

double evaluate_dd(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& targets, const Eigen::MatrixXd& t, int bands) {
  require(predicted.rows() == targets.rows() && predicted.cols() == targets.cols(), ErrorKind::Shape,
          "evaluate_dd: prediction and target shapes differ");
  require(predicted.rows() > 0, ErrorKind::Shape, "evaluate_dd: no rows");
  return decode_rows(predicted - targets, t, bands).cwiseAbs().mean();
}

NaiveBaseline NaiveBaseline::fit(const Eigen::MatrixXd& targets, NaiveKind kind) {
  require(targets.rows() > 0, ErrorKind::Config, "naive baseline: empty training set");
  NaiveBaseline b;
  b.kind = kind;
  if (kind == NaiveKind::Mean) {
    b.value = targets.colwise().mean();
  } else {
    b.value.resize(targets.cols());
    std::vector<double> col(static_cast<size_t>(targets.rows()));
    for (Eigen::Index j = 0; j < targets.cols(); ++j) {
      for (Eigen::Index i = 0; i < targets.rows(); ++i) col[static_cast<size_t>(i)] = targets(i, j);
      std::sort(col.begin(), col.end());
      const size_t n = col.size();
      b.value(j) = n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
    }
  }
  return b;
}

Eigen::MatrixXd NaiveBaseline::predict(Eigen::Index rows) const { return value.replicate(rows, 1); }

std::string to_string(LinearKind kind) {
  switch (kind) {
    case LinearKind::Ols: return "ols";
    case LinearKind::Lasso: return "lasso";
    case LinearKind::Ridge: return "ridge";
  }
  return "?";
}

double default_alpha(LinearKind kind) {
  switch (kind) {
    case LinearKind::Lasso: return 0.1;
    case LinearKind::Ridge: return 0.9;
    default: return 0.0;
  }
}

Eigen::MatrixXd LinearModel::predict(const Eigen::MatrixXd& x) const {
  require(x.cols() == weights.rows(), ErrorKind::Shape, "linear model: feature dimension mismatch");
  return (x * weights).rowwise() + bias;
}

LinearModel linear_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, LinearKind kind, double alpha) {
  require(x.rows() == y.rows() && x.rows() > 0, ErrorKind::Shape, "linear_fit: feature and target row counts differ");
  LinearModel m;
  m.kind = kind;
  m.alpha = alpha < 0.0 ? default_alpha(kind) : alpha;
  const Eigen::RowVectorXd xm = x.colwise().mean();
  const Eigen::RowVectorXd ym = y.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - xm;
  const Eigen::MatrixXd yc = y.rowwise() - ym;
  const Eigen::Index d = x.cols();
  const double n = static_cast<double>(x.rows());

  if (kind == LinearKind::Ols) {
    require(d <= x.rows(), ErrorKind::Config, "OLS needs at least as many samples as features");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
    require(qr.rank() == d, ErrorKind::Numeric,
            "OLS: feature matrix is rank deficient (rank " + std::to_string(qr.rank()) + " < " + std::to_string(d) + " features)");
    m.weights = qr.solve(yc);
  } else if (kind == LinearKind::Ridge) {
    Eigen::MatrixXd a = xc.transpose() * xc;
    a.diagonal().array() += m.alpha;
    m.weights = a.ldlt().solve(xc.transpose() * yc);
  } else {
    const Eigen::MatrixXd gram = xc.transpose() * xc / n;
    const Eigen::MatrixXd corr = xc.transpose() * yc / n;
    m.weights = Eigen::MatrixXd::Zero(d, y.cols());
    for (Eigen::Index k = 0; k < y.cols(); ++k) {
      Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
      Eigen::VectorXd q = Eigen::VectorXd::Zero(d);  // gram * w
      for (int sweep = 0; sweep < 10000; ++sweep) {
        double max_delta = 0.0, max_w = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
          const double gjj = gram(j, j);
          if (gjj <= 0.0) continue;
          const double rho = corr(j, k) - q(j) + gjj * w(j);
          const double next = (rho > m.alpha ? rho - m.alpha : rho < -m.alpha ? rho + m.alpha : 0.0) / gjj;
          const double delta = next - w(j);
          if (delta != 0.0) {
            q += gram.col(j) * delta;
            w(j) = next;
          }
          max_delta = std::max(max_delta, std::abs(delta) * std::sqrt(gjj));
          max_w = std::max(max_w, std::abs(w(j)) * std::sqrt(gjj));
        }
        if (max_delta <= 1e-6 * std::max(max_w, 1e-12)) break;
      }
      m.weights.col(k) = w;
    }
  }
  m.bias = ym - xm * m.weights;
  return m;
}

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingInput, "cannot write " + path.string());
  out << "model,train_dd,val_dd,note\n" << std::setprecision(6) << std::fixed;
  for (const auto& r : rows) out << r.model << ',' << r.train_dd << ',' << r.val_dd << ',' << r.note << '\n';
}

std::string format_report(const std::vector<ReportRow>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(24) << "model" << std::right << std::setw(12) << "train dD" << std::setw(12) << "val dD" << "\n";
  s << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    s << std::left << std::setw(24) << r.model << std::right << std::setw(12) << r.train_dd << std::setw(12) << r.val_dd;
    if (!r.note.empty()) s << "  " << r.note;
    s << "\n";
  }
  return s.str();
}

ResynthResult resynthesize(std::span<const double> reference, const std::vector<Eigen::MatrixXd>& d_frames,
                           const BandTable& bands, const StftConfig& cfg) {
  const Eigen::MatrixXcd x = stft(reference, cfg);
  require(static_cast<Eigen::Index>(d_frames.size()) == x.rows(), ErrorKind::Shape,
          "resynthesize: " + std::to_string(d_frames.size()) + " D' frames for " + std::to_string(x.rows()) + " STFT frames");
  require(!d_frames.empty(), ErrorKind::Shape, "resynthesize: no frames");
  const Eigen::Index points = d_frames.front().rows();
  for (const auto& d : d_frames)
    require(d.rows() == points && d.cols() == bands.size(), ErrorKind::Shape, "resynthesize: D' frame shape mismatch");
  std::vector<int> band(static_cast<size_t>(cfg.bins()));
  for (int b = 0; b < cfg.bins(); ++b) {
    const double f = cfg.bin_frequency(b);
    int c = bands.band_of(f);
    if (c < 0) c = f < bands.lower.front() ? 0 : bands.size() - 1;
    band[static_cast<size_t>(b)] = c;
  }
  ResynthResult out;
  for (const auto& d : d_frames) out.clamped += (d.array() < 0.0).count();
  out.signals.resize(static_cast<size_t>(points));
  for (Eigen::Index g = 0; g < points; ++g) {
    Eigen::MatrixXcd y(x.rows(), x.cols());
    for (Eigen::Index tau = 0; tau < x.rows(); ++tau) {
      const Eigen::MatrixXd& d = d_frames[static_cast<size_t>(tau)];
      for (int b = 0; b < cfg.bins(); ++b) y(tau, b) = x(tau, b) * std::sqrt(std::max(0.0, d(g, band[static_cast<size_t>(b)])));
    }
    out.signals[static_cast<size_t>(g)] = istft(y, cfg, reference.size());
  }
  return out;
}

}  // namespace egodir
