#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dvlcal/core.hpp"
#include "dvlcal/random.hpp"

namespace dvlcal {

/// Dense parameter or buffer with a row-major shape.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<int> shape);
  std::size_t numel() const { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

/// A measurement window as the network sees it.
///
/// `stacked` is 6 x n row-major (DVL x, y, z then GNSS x, y, z), `sub` is the
/// 3 x n row-major DVL-minus-GNSS difference.
class WindowTensor {
 public:
  WindowTensor() = default;

  /// Throws kShapeMismatch unless stacked.size() == 6 * n with n >= 1.
  WindowTensor(int n, std::vector<double> stacked);

  static WindowTensor from_samples(std::span<const VelocitySample> samples);

  int n() const { return n_; }
  std::span<const double> stacked() const { return stacked_; }
  std::span<const double> sub() const { return sub_; }
  double stacked_at(int row, int i) const { return stacked_[static_cast<std::size_t>(row * n_ + i)]; }

 private:
  int n_ = 0;
  std::vector<double> stacked_;
  std::vector<double> sub_;
};

struct LabeledWindow {
  WindowTensor window;
  Eigen::VectorXd target;
};

struct TrainConfig {
  static constexpr double kDropout = 0.2;

  double learning_rate = 1e-3;
  int batch_size = 256;
  int max_epochs = 50;
  int patience = 5;
  double dropout = kDropout;
  std::uint64_t seed = 1;

  /// Throws kConfiguration for non-positive values or a dropout other than 0.2.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

enum class Mode { kEval, kTrain };

/// Layer widths shared by every error model.
struct Architecture {
  static constexpr int kConv2dChannels[3] = {8, 16, 32};
  static constexpr int kConv1dChannels[2] = {8, 16};
  static constexpr int kHiddenWidths[3] = {128, 64, 32};
  static constexpr int kKernelTime = 3;
  static constexpr int kKernelRows = 2;
  static constexpr int kFirstRowDilation = 3;
  static constexpr double kLeakySlope = 0.01;
  static constexpr double kBatchNormEps = 1e-8;
  static constexpr double kBatchNormMomentum = 0.1;
  /// Smallest window the three undilated-in-time 2D layers accept.
  static constexpr int kMinWindow = 1 + 3 * (kKernelTime - 1);
};

/// Multi-head regressor: a 2D convolution head over the stacked 6 x n input
/// (first layer dilated by 3 along rows so DVL and GNSS rows of the same axis
/// are paired), a 1D convolution head over the 3 x n difference, and a
/// four-layer fully connected head producing the error-model parameters.
class CalibrationNet {
 public:
  /// Throws kConfiguration when n is below the receptive field.
  static CalibrationNet build(EmTag tag, int n, RngSeed seed);

  EmTag em_tag() const { return tag_; }
  int window_n() const { return n_; }
  int output_dim() const { return dvlcal::output_dim(tag_); }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return param_names_; }
  std::vector<Tensor>& buffers() { return buffers_; }
  const std::vector<Tensor>& buffers() const { return buffers_; }
  const std::vector<std::string>& buffer_names() const { return buffer_names_; }

  /// Fixed per-output multiplier applied after the last layer. Training sets it
  /// to the RMS of the targets so the network works in normalized units.
  const Eigen::VectorXd& output_scale() const { return output_scale_; }
  void set_output_scale(const Eigen::VectorXd& scale);

  std::size_t parameter_count() const;

  // Layer descriptors reference params_/buffers_ by index.
  struct BatchNormLayer {
    int channels;
    std::size_t gamma, beta, running_mean, running_var;
  };
  struct ConvLayer {
    int cin, cout, kh, kw, dil_h;
    std::size_t weight, bias;
  };
  struct LinearLayer {
    int in, out;
    std::size_t weight, bias;
  };

  const std::vector<BatchNormLayer>& bn2d() const { return bn2d_; }
  const std::vector<ConvLayer>& conv2d() const { return conv2d_; }
  const std::vector<BatchNormLayer>& bn1d() const { return bn1d_; }
  const std::vector<ConvLayer>& conv1d() const { return conv1d_; }
  const std::vector<LinearLayer>& fc() const { return fc_; }

 private:
  std::size_t add_param(const std::string& name, std::vector<int> shape);
  std::size_t add_buffer(const std::string& name, std::vector<int> shape, double fill);
  BatchNormLayer add_batch_norm(const std::string& prefix, int channels);
  ConvLayer add_conv(const std::string& prefix, int cin, int cout, int kh, int kw, int dil_h);
  LinearLayer add_linear(const std::string& prefix, int in, int out);
  void initialize(RngSeed seed);

  EmTag tag_ = EmTag::kEm4;
  int n_ = 0;
  std::vector<Tensor> params_;
  std::vector<std::string> param_names_;
  std::vector<Tensor> buffers_;
  std::vector<std::string> buffer_names_;
  Eigen::VectorXd output_scale_;

  std::vector<BatchNormLayer> bn2d_;
  std::vector<ConvLayer> conv2d_;
  std::vector<BatchNormLayer> bn1d_;
  std::vector<ConvLayer> conv1d_;
  std::vector<LinearLayer> fc_;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Intermediate values kept by a forward pass for the backward pass.
struct ForwardTape {
  struct BatchNormCache {
    RowMatrix xhat;
    Eigen::VectorXd inv_std;
    Eigen::VectorXd batch_mean;
    Eigen::VectorXd batch_var;  // biased
  };
  struct ConvCache {
    int n, h, w, ho, wo;
    RowMatrix cols;
    RowMatrix pre_activation;
  };

  Mode mode = Mode::kEval;
  int batch = 0;
  std::vector<BatchNormCache> bn2d, bn1d;
  std::vector<ConvCache> conv2d, conv1d;
  std::vector<RowMatrix> fc_inputs;   // input of each linear layer
  std::vector<RowMatrix> tanh_out;    // per hidden layer
  std::vector<RowMatrix> drop_mask;   // per hidden layer (empty in eval mode)
};

/// Runs the network on a batch and returns a batch x output_dim matrix.
///
/// In training mode batch normalization uses batch statistics and dropout masks
/// are drawn from `dropout_rng` (required). Eval mode is deterministic. Throws
/// kShapeMismatch when a window length differs from net.window_n().
RowMatrix forward(const CalibrationNet& net, std::span<const WindowTensor* const> batch, Mode mode,
                  Rng* dropout_rng = nullptr, ForwardTape* tape = nullptr);

RowMatrix forward(const CalibrationNet& net, std::span<const WindowTensor> batch, Mode mode,
                  Rng* dropout_rng = nullptr, ForwardTape* tape = nullptr);

/// Gradients of a loss w.r.t. every parameter, given dLoss/dOutput.
std::vector<Tensor> backward(const CalibrationNet& net, const ForwardTape& tape,
                             const RowMatrix& d_output);

/// Single window, eval mode.
Eigen::VectorXd predict(const CalibrationNet& net, const WindowTensor& window);

/// Folds the batch statistics of a training-mode tape into the running buffers.
void update_running_stats(CalibrationNet& net, const ForwardTape& tape);

/// Mean over batch and outputs of the squared error, with its gradient.
double mse_loss(const RowMatrix& prediction, const RowMatrix& target, RowMatrix* d_prediction);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double best_val_loss = 0.0;
};

/// Optimizer and bookkeeping needed to resume training.
struct TrainState {
  int epochs_completed = 0;
  std::int64_t step = 0;
  std::vector<Tensor> adam_m;
  std::vector<Tensor> adam_v;
  std::vector<EpochRecord> history;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
};

struct TrainResult {
  CalibrationNet best;  ///< parameters with the lowest validation loss
  CalibrationNet last;  ///< parameters after the final epoch
  TrainState state;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam on mean squared error with early stopping on validation loss.
///
/// A fresh run evaluates the initial parameters as epoch 0 of the history and
/// sets the output scale from the training targets. With `resume`, training
/// continues from `init` with the saved optimizer state for up to
/// cfg.max_epochs further epochs. Throws DivergenceError on a non-finite loss.
TrainResult train(CalibrationNet init, std::span<const LabeledWindow> train_set,
                  std::span<const LabeledWindow> val_set, const TrainConfig& cfg,
                  const TrainState* resume = nullptr, const EpochCallback& on_epoch = {});

/// Eval-mode mean squared error over a labeled set.
double evaluate_loss(const CalibrationNet& net, std::span<const LabeledWindow> set,
                     int batch_size = 256);

/// Averages eval-mode estimates over consecutive non-overlapping windows of
/// length window_n. Throws kInsufficientData when fewer than window_n samples.
ErrorModel estimate_error_term(const CalibrationNet& net, std::span<const VelocitySample> samples,
                               int window_n);

/// Everything needed to restore a trained model and continue training.
struct Checkpoint {
  CalibrationNet net;
  TrainConfig train_config;
  std::string dataset_fingerprint;
  bool has_state = false;
  TrainState state;
  std::vector<Tensor> last_params;  // resume point when has_state
  std::vector<Tensor> last_buffers;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& text);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dvlcal
