#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "egodir/error.hpp"
#include "egodir/regressors.hpp"

namespace egodir {

PlateauSchedule::PlateauSchedule(const TrainConfig& cfg)
    : lr_(cfg.learning_rate), decay_(cfg.decay), stop_(cfg.stop_learning_rate), patience_(cfg.patience) {
  require(cfg.learning_rate > 0.0 && cfg.decay > 1.0 && cfg.stop_learning_rate > 0.0 && cfg.patience >= 1, ErrorKind::Config,
          "train: learning rate, decay (> 1), stop rate and patience must be positive");
}

bool PlateauSchedule::step(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    bad_ = 0;
    return true;
  }
  if (++bad_ >= patience_) {
    lr_ /= decay_;
    ++decays_;
    bad_ = 0;
  }
  return false;
}

bool PlateauSchedule::finished() const { return lr_ <= stop_ * (1.0 + 1e-9); }

namespace {

struct Snapshot {
  std::vector<Eigen::MatrixXd> params, buffers;

  static Snapshot take(Network& net) {
    Snapshot s;
    for (Param* p : net.params()) s.params.push_back(p->value);
    for (Eigen::MatrixXd* b : net.buffers()) s.buffers.push_back(*b);
    return s;
  }
  void restore(Network& net) const {
    const auto ps = net.params();
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = params[i];
    const auto bs = net.buffers();
    for (size_t i = 0; i < bs.size(); ++i) *bs[i] = buffers[i];
  }
};

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, std::span<const int> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

TrainResult train(Network& net, const Objective& objective, const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                  const DatasetSplit& split, const TrainConfig& cfg) {
  require(cfg.batch >= 2 && cfg.max_epochs >= 1, ErrorKind::Config, "train: batch must be >= 2 and max_epochs >= 1");
  require(!split.train.empty() && !split.validation.empty(), ErrorKind::Config, "train: empty train or validation partition");
  require(features.rows() == targets.rows(), ErrorKind::Shape, "train: feature and target row counts differ");
  require(targets.cols() == objective.layout().size() && net.outputs() == targets.cols(), ErrorKind::Shape,
          "train: target width does not match the network output");
  {
    std::vector<int> a = split.train, b = split.validation;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<int> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    require(both.empty(), ErrorKind::Config, "train: train and validation partitions overlap");
  }

  const Eigen::MatrixXd y_model = objective.model_targets(targets);
  const Eigen::MatrixXd y_val = take_rows(y_model, split.validation);
  const Eigen::MatrixXd a_val = take_rows(targets, split.validation);

  PlateauSchedule schedule(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order = split.train;
  TrainResult result;
  Snapshot best = Snapshot::take(net);
  Snapshot last = best;
  std::int64_t t = 0;
  const auto params = net.params();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = schedule.learning_rate();
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    size_t count = 0;
    for (size_t start = 0; start + 2 <= order.size(); start += static_cast<size_t>(cfg.batch)) {
      const size_t n = std::min(static_cast<size_t>(cfg.batch), order.size() - start);
      if (n < 2) break;
      const std::span<const int> rows(order.data() + start, n);
      const Eigen::MatrixXd pred = net.forward(features, rows, Mode::Train, &rng);
      Eigen::MatrixXd grad;
      const double l = objective.loss(pred, take_rows(y_model, rows), &grad);
      if (!std::isfinite(l)) {
        sum = l;
        break;
      }
      sum += l * static_cast<double>(n);
      count += n;
      net.zero_grad();
      net.backward(grad);
      ++t;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      for (Param* p : params) {
        p->m = cfg.beta1 * p->m + (1.0 - cfg.beta1) * p->grad;
        p->v = cfg.beta2 * p->v + (1.0 - cfg.beta2) * p->grad.cwiseAbs2();
        p->value.array() -= lr * (p->m.array() / c1) / ((p->v.array() / c2).sqrt() + cfg.adam_epsilon);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.train_loss = count ? sum / static_cast<double>(count) : sum;
    if (std::isfinite(rec.train_loss)) {
      const Eigen::MatrixXd pred = net.predict(features, split.validation);
      rec.val_loss = objective.loss(pred, y_val);
      rec.val_dd = evaluate_dd(objective.to_coeffs(pred), a_val, objective.decode(), objective.layout().bands);
    } else {
      rec.val_loss = rec.val_dd = std::numeric_limits<double>::quiet_NaN();
    }
    result.history.push_back(rec);
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      last.restore(net);
      result.diverged = true;
      result.message = "training diverged at epoch " + std::to_string(epoch) + " (non-finite loss); kept the state after epoch " +
                       std::to_string(epoch - 1);
      break;
    }
    last = Snapshot::take(net);
    if (schedule.step(rec.val_loss)) {
      best = last;
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
    }
    if (schedule.finished()) break;
  }
  result.decays = schedule.decays();
  result.schedule_finished = schedule.finished();
  if (!result.diverged && result.best_epoch > 0) best.restore(net);
  if (result.message.empty())
    result.message = result.schedule_finished ? "learning rate reached the stop rate" : "epoch limit reached";
  return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingInput, "cannot write " + path.string());
  out << "epoch,lr,train_loss,val_loss,val_dd\n" << std::setprecision(9);
  for (const auto& r : history)
    out << r.epoch << ',' << r.learning_rate << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_dd << '\n';
}

}  // namespace egodir
