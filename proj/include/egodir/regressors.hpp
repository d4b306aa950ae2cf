#pragma once
// Stage-2 models: naive and linear baselines, MLP and LSTM encoder-decoder with manual
// backpropagation, the objective-function variants, training and evaluation.
//
// Targets are flattened SH coefficient matrices, index j * C + c for coefficient j and
// band c. Decoding through T (grid points x coefficients) gives D per point and band.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "egodir/container.hpp"
#include "egodir/directivity.hpp"
#include "egodir/features.hpp"
#include "egodir/stft.hpp"

namespace egodir {

enum class TargetDomain { Coeffs, Decoded };

struct TargetSpec {
  TargetDomain domain = TargetDomain::Coeffs;
  bool deviation = false;    // predict y - E[y]
  bool freq_weight = false;  // band weights, M at the lowest band
  bool sign_weight = false;  // divide by the sign-agreement score
  double max_weight = 4.0;
  double sign_epsilon = 1e-3;

  /// "y_A", "y_D+e+fw+sw", ...
  std::string name() const;
  /// Inverse of name(). Throws Error(Config).
  static TargetSpec parse(const std::string& name);
  /// The 16 combinations of domain x deviation x frequency weight x sign weight.
  static std::vector<TargetSpec> grid();
};

struct TargetLayout {
  int bands = 0;
  int coeffs = 0;
  int size() const { return bands * coeffs; }
};

/// w_c = 1 + (C - 1 - c)(M - 1)/(C - 1): M at band 0 (lowest), 1 at the highest.
Eigen::VectorXd frequency_weights(int bands, double max_weight);

/// eps + (1/2K) sum_i (1 + sgn(y_i) sgn(y'_i)) with sgn(0) = +1.
double sign_agreement(std::span<const double> y, std::span<const double> y_hat, double eps = 1e-3);

/// Rows of flattened coefficients -> rows of decoded D, index g * C + c.
Eigen::MatrixXd decode_rows(const Eigen::MatrixXd& coeffs, const Eigen::MatrixXd& t, int bands);

/// Objective for one TargetSpec. Model outputs live in coefficient space (deviations
/// from E[y] for deviation targets).
class Objective {
 public:
  Objective(TargetSpec spec, TargetLayout layout, Eigen::MatrixXd decode, Eigen::RowVectorXd expected);

  const TargetSpec& spec() const { return spec_; }
  const TargetLayout& layout() const { return layout_; }
  const Eigen::MatrixXd& decode() const { return decode_; }
  const Eigen::RowVectorXd& expected() const { return expected_; }

  /// Raw coefficient targets -> model space.
  Eigen::MatrixXd model_targets(const Eigen::MatrixXd& y) const;
  /// Model outputs -> raw coefficient predictions (adds E[y] back for deviation targets).
  Eigen::MatrixXd to_coeffs(const Eigen::MatrixXd& out) const;
  /// Mean over rows of the per-row loss; `grad` receives d loss / d pred when non-null.
  double loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, Eigen::MatrixXd* grad = nullptr) const;

 private:
  TargetSpec spec_;
  TargetLayout layout_;
  Eigen::MatrixXd decode_;
  Eigen::RowVectorXd expected_;
  Eigen::VectorXd weights_;
};

/// mean |T A_hat - T A| over grid points, bands and rows. Both inputs are raw coefficients.
double evaluate_dd(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& targets, const Eigen::MatrixXd& t, int bands);

// ---------------------------------------------------------------- baselines

enum class NaiveKind { Mean, Median };

struct NaiveBaseline {
  NaiveKind kind = NaiveKind::Mean;
  Eigen::RowVectorXd value;

  /// Throws Error(Config) for an empty training set.
  static NaiveBaseline fit(const Eigen::MatrixXd& targets, NaiveKind kind);
  Eigen::MatrixXd predict(Eigen::Index rows) const;
};

enum class LinearKind { Ols, Lasso, Ridge };

std::string to_string(LinearKind kind);
double default_alpha(LinearKind kind);  // lasso 0.1, ridge 0.9

/// y = x W + b. Lasso minimizes (1/2n)||Y - XW - b||^2 + alpha |W|_1 per output column,
/// ridge ||Y - XW - b||^2 + alpha ||W||^2; the intercept is never penalized.
struct LinearModel {
  LinearKind kind = LinearKind::Ols;
  double alpha = 0.0;
  Eigen::MatrixXd weights;
  Eigen::RowVectorXd bias;

  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const;
};

/// OLS throws Error(Numeric) naming the rank deficiency when X^T X is singular.
LinearModel linear_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, LinearKind kind, double alpha = -1.0);

// ---------------------------------------------------------------- networks

enum class Mode { Train, Eval };

struct Param {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd m;  // Adam moments
  Eigen::MatrixXd v;
};

struct MlpConfig {
  std::vector<int> hidden{64, 128, 256, 512, 1024, 2048, 4096};
  double slope = 0.01;
  double dropout = 0.2;
  bool batch_norm = true;
  double momentum = 0.1;
  double bn_epsilon = 1e-5;
};

struct LstmConfig {
  int layers = 5;
  int hidden = 64;
  int sequence = 20;
  MlpConfig decoder{{128, 256, 512, 1024, 2048}};  // 6 linear layers with the output
};

class Network {
 public:
  virtual ~Network() = default;
  virtual std::string kind() const = 0;
  virtual int inputs() const = 0;
  virtual int outputs() const = 0;
  /// Prediction for the given feature rows (rows = frame indices into `features`).
  virtual Eigen::MatrixXd forward(const Eigen::MatrixXd& features, std::span<const int> rows, Mode mode,
                                  std::mt19937_64* rng = nullptr) = 0;
  /// Accumulates parameter gradients for the last forward call.
  virtual void backward(const Eigen::MatrixXd& d_out) = 0;
  virtual std::vector<Param*> params() = 0;
  /// Non-trainable state (batch-norm running statistics).
  virtual std::vector<Eigen::MatrixXd*> buffers() = 0;
  virtual nlohmann::json config() const = 0;

  void zero_grad();
  Eigen::MatrixXd predict(const Eigen::MatrixXd& features, std::span<const int> rows);
};

/// Fully connected stack: linear -> batch norm -> leaky ReLU -> dropout per hidden layer.
class Mlp : public Network {
 public:
  Mlp(int inputs, int outputs, MlpConfig cfg, std::uint64_t seed);

  std::string kind() const override { return "mlp"; }
  int inputs() const override { return inputs_; }
  int outputs() const override { return outputs_; }
  Eigen::MatrixXd forward(const Eigen::MatrixXd& features, std::span<const int> rows, Mode mode,
                          std::mt19937_64* rng = nullptr) override;
  void backward(const Eigen::MatrixXd& d_out) override;
  std::vector<Param*> params() override;
  std::vector<Eigen::MatrixXd*> buffers() override;
  nlohmann::json config() const override;

  /// Dense input version used by the LSTM decoder; returns d input from backward_input.
  Eigen::MatrixXd forward_matrix(const Eigen::MatrixXd& x, Mode mode, std::mt19937_64* rng);
  Eigen::MatrixXd backward_input(const Eigen::MatrixXd& d_out);
  Param& output_weight() { return layers_.back().w; }
  Param& output_bias() { return layers_.back().b; }
  const MlpConfig& mlp_config() const { return cfg_; }

 private:
  struct Layer {
    Param w, b, gamma, beta;
    Eigen::MatrixXd running_mean, running_var;
    bool hidden = true;
    // forward cache
    Eigen::MatrixXd input, xhat, pre_act, mask;
    Eigen::RowVectorXd inv_std;
    bool batch_stats = false;
  };
  int inputs_, outputs_;
  MlpConfig cfg_;
  std::vector<Layer> layers_;
};

/// Stacked LSTM encoder over the s frames ending at each row (left-padded with row 0),
/// last hidden state of the top layer fed to an MLP decoder.
class Lstm : public Network {
 public:
  Lstm(int inputs, int outputs, LstmConfig cfg, std::uint64_t seed);

  std::string kind() const override { return "lstm"; }
  int inputs() const override { return inputs_; }
  int outputs() const override { return outputs_; }
  Eigen::MatrixXd forward(const Eigen::MatrixXd& features, std::span<const int> rows, Mode mode,
                          std::mt19937_64* rng = nullptr) override;
  void backward(const Eigen::MatrixXd& d_out) override;
  std::vector<Param*> params() override;
  std::vector<Eigen::MatrixXd*> buffers() override;
  nlohmann::json config() const override;

  /// Explicit sequence input: steps[t] is batch x inputs.
  Eigen::MatrixXd forward_steps(const std::vector<Eigen::MatrixXd>& steps, Mode mode, std::mt19937_64* rng);
  const LstmConfig& lstm_config() const { return cfg_; }

 private:
  struct Step {
    Eigen::MatrixXd x, h_prev, c_prev, i, f, g, o, c, tanh_c;
  };
  struct Layer {
    Param w, u, b;
    std::vector<Step> steps;
  };
  int inputs_, outputs_;
  LstmConfig cfg_;
  std::vector<Layer> layers_;
  std::unique_ptr<Mlp> decoder_;
};

/// Checkpoint: kind + config + named float32 tensors, plus caller metadata.
void save_checkpoint(const std::filesystem::path& path, Network& net, const nlohmann::json& meta = {});
/// Throws Error(MissingInput) when absent, Error(Config) when malformed.
std::unique_ptr<Network> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

// ---------------------------------------------------------------- training

struct TrainConfig {
  int batch = 64;
  double learning_rate = 1e-3;
  double decay = 10.0;
  int patience = 5;
  double stop_learning_rate = 1e-7;
  int max_epochs = 200;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

/// Reduce-on-plateau: divide by `decay` after `patience` epochs without improvement;
/// finished once the rate has come down to the stop rate.
class PlateauSchedule {
 public:
  explicit PlateauSchedule(const TrainConfig& cfg);
  /// Records a validation loss; returns true if it is a new best.
  bool step(double val_loss);
  double learning_rate() const { return lr_; }
  int decays() const { return decays_; }
  bool finished() const;

 private:
  double lr_, decay_, stop_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
  int decays_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_dd = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  int decays = 0;
  bool schedule_finished = false;
  bool diverged = false;
  std::string message;
};

/// Adam with the plateau schedule; the best-validation parameters are restored at the
/// end. On a non-finite loss training stops, the last finite state is kept and
/// `diverged` is set.
TrainResult train(Network& net, const Objective& objective, const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                  const DatasetSplit& split, const TrainConfig& cfg);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

// ---------------------------------------------------------------- reporting / resynthesis

struct ReportRow {
  std::string model;
  double train_dd = 0.0;
  double val_dd = 0.0;
  std::string note;
};

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows);
std::string format_report(const std::vector<ReportRow>& rows);

struct ResynthResult {
  MultiSignal signals;
  long clamped = 0;  // negative D' values set to zero
};

/// Per grid point, scales the reference STFT by sqrt(D'_g(tau, band)) (bins outside every
/// band take the nearest band) and overlap-adds. d_frames[tau] is points x bands; the frame
/// count must match the reference STFT.
ResynthResult resynthesize(std::span<const double> reference, const std::vector<Eigen::MatrixXd>& d_frames,
                           const BandTable& bands, const StftConfig& stft);

}  // namespace egodir
