#include "dvlcal/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dvlcal {

using RowVector = Eigen::RowVectorXd;
using Arch = Architecture;

Tensor Tensor::zeros(std::vector<int> shape) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  return Tensor{std::move(shape), std::vector<double>(count, 0.0)};
}

WindowTensor::WindowTensor(int n, std::vector<double> stacked) : n_(n), stacked_(std::move(stacked)) {
  if (n < 1 || stacked_.size() != static_cast<std::size_t>(6 * n)) {
    throw Error(ErrorKind::kShapeMismatch, "window needs 6 x n values with n >= 1");
  }
  sub_.resize(static_cast<std::size_t>(3 * n));
  for (int r = 0; r < 3; ++r) {
    for (int i = 0; i < n; ++i) sub_[static_cast<std::size_t>(r * n + i)] = stacked_at(r, i) - stacked_at(r + 3, i);
  }
}

WindowTensor WindowTensor::from_samples(std::span<const VelocitySample> samples) {
  const int n = static_cast<int>(samples.size());
  std::vector<double> stacked(static_cast<std::size_t>(6 * n));
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < 3; ++r) {
      stacked[static_cast<std::size_t>(r * n + i)] = samples[static_cast<std::size_t>(i)].v_dvl[r];
      stacked[static_cast<std::size_t>((r + 3) * n + i)] = samples[static_cast<std::size_t>(i)].v_gnss[r];
    }
  }
  return WindowTensor(n, std::move(stacked));
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size <= 0 || max_epochs <= 0 || patience <= 0) {
    throw Error(ErrorKind::kConfiguration, "training needs positive learning rate, batch, epochs, patience");
  }
  if (dropout != kDropout) {
    throw Error(ErrorKind::kConfiguration, "dropout probability is fixed at 0.2");
  }
}

// ---------------------------------------------------------------------------
// Construction

std::size_t CalibrationNet::add_param(const std::string& name, std::vector<int> shape) {
  params_.push_back(Tensor::zeros(std::move(shape)));
  param_names_.push_back(name);
  return params_.size() - 1;
}

std::size_t CalibrationNet::add_buffer(const std::string& name, std::vector<int> shape, double fill) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::fill(t.data.begin(), t.data.end(), fill);
  buffers_.push_back(std::move(t));
  buffer_names_.push_back(name);
  return buffers_.size() - 1;
}

CalibrationNet::BatchNormLayer CalibrationNet::add_batch_norm(const std::string& prefix, int channels) {
  BatchNormLayer l{channels, 0, 0, 0, 0};
  l.gamma = add_param(prefix + ".gamma", {channels});
  l.beta = add_param(prefix + ".beta", {channels});
  l.running_mean = add_buffer(prefix + ".running_mean", {channels}, 0.0);
  l.running_var = add_buffer(prefix + ".running_var", {channels}, 1.0);
  return l;
}

CalibrationNet::ConvLayer CalibrationNet::add_conv(const std::string& prefix, int cin, int cout, int kh,
                                                   int kw, int dil_h) {
  ConvLayer l{cin, cout, kh, kw, dil_h, 0, 0};
  l.weight = add_param(prefix + ".weight", {cout, kh, kw, cin});
  l.bias = add_param(prefix + ".bias", {cout});
  return l;
}

CalibrationNet::LinearLayer CalibrationNet::add_linear(const std::string& prefix, int in, int out) {
  LinearLayer l{in, out, 0, 0};
  l.weight = add_param(prefix + ".weight", {out, in});
  l.bias = add_param(prefix + ".bias", {out});
  return l;
}

CalibrationNet CalibrationNet::build(EmTag tag, int n, RngSeed seed) {
  if (n < Arch::kMinWindow) {
    throw Error(ErrorKind::kConfiguration, "window length " + std::to_string(n) +
                                               " is below the receptive field " +
                                               std::to_string(Arch::kMinWindow));
  }
  CalibrationNet net;
  net.tag_ = tag;
  net.n_ = n;

  int cin = 1;
  for (int l = 0; l < 3; ++l) {
    const std::string p = "head2d." + std::to_string(l);
    net.bn2d_.push_back(net.add_batch_norm(p + ".bn", cin));
    const int dil = l == 0 ? Arch::kFirstRowDilation : 1;
    net.conv2d_.push_back(
        net.add_conv(p + ".conv", cin, Arch::kConv2dChannels[l], Arch::kKernelRows, Arch::kKernelTime, dil));
    cin = Arch::kConv2dChannels[l];
  }
  const int flat2d = cin * (n - 3 * (Arch::kKernelTime - 1));

  cin = 3;
  for (int l = 0; l < 2; ++l) {
    const std::string p = "head1d." + std::to_string(l);
    net.bn1d_.push_back(net.add_batch_norm(p + ".bn", cin));
    net.conv1d_.push_back(net.add_conv(p + ".conv", cin, Arch::kConv1dChannels[l], 1, Arch::kKernelTime, 1));
    cin = Arch::kConv1dChannels[l];
  }
  const int flat1d = cin * (n - 2 * (Arch::kKernelTime - 1));

  int in = flat2d + flat1d;
  for (int l = 0; l < 3; ++l) {
    net.fc_.push_back(net.add_linear("fc." + std::to_string(l), in, Arch::kHiddenWidths[l]));
    in = Arch::kHiddenWidths[l];
  }
  net.fc_.push_back(net.add_linear("fc.3", in, dvlcal::output_dim(tag)));

  net.output_scale_ = Eigen::VectorXd::Ones(dvlcal::output_dim(tag));
  net.initialize(derive_seed(seed, Stream::kInit));
  return net;
}

void CalibrationNet::initialize(RngSeed seed) {
  Rng rng = make_rng(seed);
  auto fill_uniform = [&](Tensor& t, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.data) v = dist(rng);
  };
  auto init_bn = [&](const BatchNormLayer& l) {
    std::fill(params_[l.gamma].data.begin(), params_[l.gamma].data.end(), 1.0);
  };
  auto init_conv = [&](const ConvLayer& l) {
    fill_uniform(params_[l.weight], l.cin * l.kh * l.kw);
    fill_uniform(params_[l.bias], l.cin * l.kh * l.kw);
  };
  for (std::size_t l = 0; l < conv2d_.size(); ++l) {
    init_bn(bn2d_[l]);
    init_conv(conv2d_[l]);
  }
  for (std::size_t l = 0; l < conv1d_.size(); ++l) {
    init_bn(bn1d_[l]);
    init_conv(conv1d_[l]);
  }
  for (const auto& l : fc_) {
    fill_uniform(params_[l.weight], l.in);
    fill_uniform(params_[l.bias], l.in);
  }
}

void CalibrationNet::set_output_scale(const Eigen::VectorXd& scale) {
  if (scale.size() != output_dim() || !scale.allFinite() || (scale.array() <= 0.0).any()) {
    throw Error(ErrorKind::kShapeMismatch, "output scale must have output_dim positive entries");
  }
  output_scale_ = scale;
}

std::size_t CalibrationNet::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.numel();
  return total;
}

// ---------------------------------------------------------------------------
// Layer kernels. Activations are (batch * h * w) x channels, row-major, so a
// sample's flattened feature vector is contiguous.

namespace {

using ConstMap = Eigen::Map<const RowMatrix>;
using ConstVecMap = Eigen::Map<const RowVector>;

ConstMap as_matrix(const Tensor& t, int rows, int cols) { return ConstMap(t.data.data(), rows, cols); }
ConstVecMap as_row(const Tensor& t) { return ConstVecMap(t.data.data(), static_cast<Eigen::Index>(t.numel())); }

void add_row(Tensor& t, const RowVector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data[static_cast<std::size_t>(i)] += v[i];
}

void add_matrix(Tensor& t, const RowMatrix& m) {
  Eigen::Map<RowMatrix>(t.data.data(), m.rows(), m.cols()) += m;
}

RowMatrix batch_norm_forward(const CalibrationNet& net, const CalibrationNet::BatchNormLayer& l,
                             const RowMatrix& x, Mode mode, ForwardTape::BatchNormCache* cache) {
  RowVector mean;
  RowVector var;
  if (mode == Mode::kTrain) {
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().mean();
  } else {
    mean = as_row(net.buffers()[l.running_mean]);
    var = as_row(net.buffers()[l.running_var]);
  }
  const RowVector inv_std = (var.array() + Arch::kBatchNormEps).rsqrt();
  RowMatrix xhat = ((x.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  RowMatrix y = (xhat.array().rowwise() * as_row(net.params()[l.gamma]).array()).matrix();
  y.rowwise() += as_row(net.params()[l.beta]);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std.transpose();
    cache->batch_mean = mean.transpose();
    cache->batch_var = var.transpose();
  }
  return y;
}

RowMatrix batch_norm_backward(const CalibrationNet& net, const CalibrationNet::BatchNormLayer& l,
                              const ForwardTape::BatchNormCache& cache, Mode mode, const RowMatrix& dy,
                              std::vector<Tensor>& grads, bool need_dx) {
  add_row(grads[l.gamma], (dy.array() * cache.xhat.array()).colwise().sum().matrix());
  add_row(grads[l.beta], dy.colwise().sum());
  if (!need_dx) return {};
  const RowVector inv_std = cache.inv_std.transpose();
  const RowMatrix dxhat = (dy.array().rowwise() * as_row(net.params()[l.gamma]).array()).matrix();
  if (mode == Mode::kEval) {
    return (dxhat.array().rowwise() * inv_std.array()).matrix();
  }
  const RowVector mean_dxhat = dxhat.colwise().mean();
  const RowVector mean_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().mean();
  RowMatrix centered = dxhat.rowwise() - mean_dxhat;
  centered.array() -= cache.xhat.array().rowwise() * mean_dxhat_xhat.array();
  return (centered.array().rowwise() * inv_std.array()).matrix();
}

struct Shape {
  int n, h, w;
};

RowMatrix im2col(const RowMatrix& x, Shape in, const CalibrationNet::ConvLayer& l, int ho, int wo) {
  const int c = l.cin;
  RowMatrix cols(static_cast<Eigen::Index>(in.n) * ho * wo, l.kh * l.kw * c);
  for (int b = 0; b < in.n; ++b) {
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        const Eigen::Index row = (static_cast<Eigen::Index>(b) * ho + i) * wo + j;
        for (int ki = 0; ki < l.kh; ++ki) {
          for (int kj = 0; kj < l.kw; ++kj) {
            const Eigen::Index src = (static_cast<Eigen::Index>(b) * in.h + i + ki * l.dil_h) * in.w + j + kj;
            cols.row(row).segment((ki * l.kw + kj) * c, c) = x.row(src);
          }
        }
      }
    }
  }
  return cols;
}

RowMatrix col2im(const RowMatrix& dcols, Shape in, const CalibrationNet::ConvLayer& l, int ho, int wo) {
  const int c = l.cin;
  RowMatrix dx = RowMatrix::Zero(static_cast<Eigen::Index>(in.n) * in.h * in.w, c);
  for (int b = 0; b < in.n; ++b) {
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        const Eigen::Index row = (static_cast<Eigen::Index>(b) * ho + i) * wo + j;
        for (int ki = 0; ki < l.kh; ++ki) {
          for (int kj = 0; kj < l.kw; ++kj) {
            const Eigen::Index dst = (static_cast<Eigen::Index>(b) * in.h + i + ki * l.dil_h) * in.w + j + kj;
            dx.row(dst) += dcols.row(row).segment((ki * l.kw + kj) * c, c);
          }
        }
      }
    }
  }
  return dx;
}

double leaky(double v) { return v > 0.0 ? v : Arch::kLeakySlope * v; }
double leaky_grad(double v) { return v > 0.0 ? 1.0 : Arch::kLeakySlope; }

/// BN -> conv -> LeakyReLU. Returns the activation and updates `shape`.
RowMatrix conv_block_forward(const CalibrationNet& net, const CalibrationNet::BatchNormLayer& bn,
                             const CalibrationNet::ConvLayer& conv, const RowMatrix& x, Shape& shape, Mode mode,
                             ForwardTape::BatchNormCache* bn_cache, ForwardTape::ConvCache* conv_cache) {
  const RowMatrix normed = batch_norm_forward(net, bn, x, mode, bn_cache);
  const int ho = shape.h - (conv.kh - 1) * conv.dil_h;
  const int wo = shape.w - (conv.kw - 1);
  RowMatrix cols = im2col(normed, shape, conv, ho, wo);
  RowMatrix pre = cols * as_matrix(net.params()[conv.weight], conv.cout, conv.kh * conv.kw * conv.cin).transpose();
  pre.rowwise() += as_row(net.params()[conv.bias]);
  RowMatrix out = pre.unaryExpr(&leaky);
  if (conv_cache) {
    *conv_cache = {shape.n, shape.h, shape.w, ho, wo, std::move(cols), std::move(pre)};
  }
  shape = {shape.n, ho, wo};
  return out;
}

/// Backward through LeakyReLU -> conv -> BN; returns d(input of BN) if needed.
RowMatrix conv_block_backward(const CalibrationNet& net, const CalibrationNet::BatchNormLayer& bn,
                              const CalibrationNet::ConvLayer& conv, const ForwardTape::BatchNormCache& bn_cache,
                              const ForwardTape::ConvCache& cc, Mode mode, const RowMatrix& dy,
                              std::vector<Tensor>& grads, bool need_dx) {
  const RowMatrix dpre = (dy.array() * cc.pre_activation.unaryExpr(&leaky_grad).array()).matrix();
  const int k = conv.kh * conv.kw * conv.cin;
  add_matrix(grads[conv.weight], dpre.transpose() * cc.cols);
  add_row(grads[conv.bias], dpre.colwise().sum());
  const RowMatrix dcols = dpre * as_matrix(net.params()[conv.weight], conv.cout, k);
  const RowMatrix dnormed = col2im(dcols, {cc.n, cc.h, cc.w}, conv, cc.ho, cc.wo);
  return batch_norm_backward(net, bn, bn_cache, mode, dnormed, grads, need_dx);
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward / backward

RowMatrix forward(const CalibrationNet& net, std::span<const WindowTensor* const> batch, Mode mode,
                  Rng* dropout_rng, ForwardTape* tape) {
  const int nb = static_cast<int>(batch.size());
  const int n = net.window_n();
  if (nb == 0) throw Error(ErrorKind::kEmptyInput, "forward needs a non-empty batch");
  if (mode == Mode::kTrain && dropout_rng == nullptr) {
    throw Error(ErrorKind::kConfiguration, "training-mode forward needs a dropout generator");
  }
  for (const WindowTensor* w : batch) {
    if (w->n() != n) {
      throw Error(ErrorKind::kShapeMismatch, "window length " + std::to_string(w->n()) +
                                                 " does not match model length " + std::to_string(n));
    }
  }

  RowMatrix x2(static_cast<Eigen::Index>(nb) * 6 * n, 1);
  RowMatrix x1(static_cast<Eigen::Index>(nb) * n, 3);
  for (int b = 0; b < nb; ++b) {
    const auto stacked = batch[static_cast<std::size_t>(b)]->stacked();
    const auto sub = batch[static_cast<std::size_t>(b)]->sub();
    for (int r = 0; r < 6; ++r) {
      for (int i = 0; i < n; ++i) x2((static_cast<Eigen::Index>(b) * 6 + r) * n + i, 0) = stacked[static_cast<std::size_t>(r * n + i)];
    }
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) x1(static_cast<Eigen::Index>(b) * n + i, c) = sub[static_cast<std::size_t>(c * n + i)];
    }
  }

  if (tape) {
    *tape = ForwardTape{};
    tape->mode = mode;
    tape->batch = nb;
    tape->bn2d.resize(net.bn2d().size());
    tape->conv2d.resize(net.conv2d().size());
    tape->bn1d.resize(net.bn1d().size());
    tape->conv1d.resize(net.conv1d().size());
  }

  Shape s2{nb, 6, n};
  RowMatrix a2 = std::move(x2);
  for (std::size_t l = 0; l < net.conv2d().size(); ++l) {
    a2 = conv_block_forward(net, net.bn2d()[l], net.conv2d()[l], a2, s2, mode, tape ? &tape->bn2d[l] : nullptr,
                            tape ? &tape->conv2d[l] : nullptr);
  }
  Shape s1{nb, 1, n};
  RowMatrix a1 = std::move(x1);
  for (std::size_t l = 0; l < net.conv1d().size(); ++l) {
    a1 = conv_block_forward(net, net.bn1d()[l], net.conv1d()[l], a1, s1, mode, tape ? &tape->bn1d[l] : nullptr,
                            tape ? &tape->conv1d[l] : nullptr);
  }

  const Eigen::Index f2 = a2.size() / nb;
  const Eigen::Index f1 = a1.size() / nb;
  RowMatrix h(nb, f2 + f1);
  h.leftCols(f2) = Eigen::Map<const RowMatrix>(a2.data(), nb, f2);
  h.rightCols(f1) = Eigen::Map<const RowMatrix>(a1.data(), nb, f1);

  const auto& fc = net.fc();
  std::bernoulli_distribution keep(1.0 - TrainConfig::kDropout);
  const double keep_scale = 1.0 / (1.0 - TrainConfig::kDropout);
  for (std::size_t l = 0; l + 1 < fc.size(); ++l) {
    RowMatrix z = h * as_matrix(net.params()[fc[l].weight], fc[l].out, fc[l].in).transpose();
    z.rowwise() += as_row(net.params()[fc[l].bias]);
    RowMatrix act = z.array().tanh().matrix();
    if (tape) {
      tape->fc_inputs.push_back(std::move(h));
      tape->tanh_out.push_back(act);
    }
    if (mode == Mode::kTrain) {
      RowMatrix mask(act.rows(), act.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*dropout_rng) ? keep_scale : 0.0;
      act.array() *= mask.array();
      if (tape) tape->drop_mask.push_back(std::move(mask));
    }
    h = std::move(act);
  }
  const auto& last = fc.back();
  RowMatrix out = h * as_matrix(net.params()[last.weight], last.out, last.in).transpose();
  out.rowwise() += as_row(net.params()[last.bias]);
  out.array().rowwise() *= net.output_scale().transpose().array();
  if (tape) tape->fc_inputs.push_back(std::move(h));
  return out;
}

RowMatrix forward(const CalibrationNet& net, std::span<const WindowTensor> batch, Mode mode, Rng* dropout_rng,
                  ForwardTape* tape) {
  std::vector<const WindowTensor*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& w : batch) ptrs.push_back(&w);
  return forward(net, std::span<const WindowTensor* const>(ptrs), mode, dropout_rng, tape);
}

std::vector<Tensor> backward(const CalibrationNet& net, const ForwardTape& tape, const RowMatrix& d_output) {
  const int nb = tape.batch;
  if (d_output.rows() != nb || d_output.cols() != net.output_dim()) {
    throw Error(ErrorKind::kShapeMismatch, "output gradient shape does not match the forward batch");
  }
  std::vector<Tensor> grads;
  grads.reserve(net.params().size());
  for (const auto& p : net.params()) grads.push_back(Tensor::zeros(p.shape));

  const auto& fc = net.fc();
  RowMatrix dh = (d_output.array().rowwise() * net.output_scale().transpose().array()).matrix();
  for (std::size_t li = fc.size(); li-- > 0;) {
    const auto& l = fc[li];
    if (li + 1 < fc.size()) {
      if (tape.mode == Mode::kTrain) dh.array() *= tape.drop_mask[li].array();
      dh.array() *= 1.0 - tape.tanh_out[li].array().square();
    }
    add_matrix(grads[l.weight], dh.transpose() * tape.fc_inputs[li]);
    add_row(grads[l.bias], dh.colwise().sum());
    dh = dh * as_matrix(net.params()[l.weight], l.out, l.in);
  }

  const auto& c2 = tape.conv2d.back();
  const auto& c1 = tape.conv1d.back();
  const Eigen::Index f2 = static_cast<Eigen::Index>(c2.ho) * c2.wo * net.conv2d().back().cout;
  const Eigen::Index f1 = static_cast<Eigen::Index>(c1.ho) * c1.wo * net.conv1d().back().cout;

  const RowMatrix flat2 = dh.leftCols(f2);
  RowMatrix d2 = Eigen::Map<const RowMatrix>(flat2.data(), static_cast<Eigen::Index>(nb) * c2.ho * c2.wo,
                                             net.conv2d().back().cout);
  for (std::size_t l = net.conv2d().size(); l-- > 0;) {
    d2 = conv_block_backward(net, net.bn2d()[l], net.conv2d()[l], tape.bn2d[l], tape.conv2d[l], tape.mode, d2, grads,
                             l > 0);
  }

  const RowMatrix flat1 = dh.rightCols(f1);
  RowMatrix d1 = Eigen::Map<const RowMatrix>(flat1.data(), static_cast<Eigen::Index>(nb) * c1.ho * c1.wo,
                                             net.conv1d().back().cout);
  for (std::size_t l = net.conv1d().size(); l-- > 0;) {
    d1 = conv_block_backward(net, net.bn1d()[l], net.conv1d()[l], tape.bn1d[l], tape.conv1d[l], tape.mode, d1, grads,
                             l > 0);
  }
  return grads;
}

Eigen::VectorXd predict(const CalibrationNet& net, const WindowTensor& window) {
  const WindowTensor* ptr = &window;
  return forward(net, std::span<const WindowTensor* const>(&ptr, 1), Mode::kEval).row(0).transpose();
}

void update_running_stats(CalibrationNet& net, const ForwardTape& tape) {
  if (tape.mode != Mode::kTrain) return;
  auto fold = [&](const CalibrationNet::BatchNormLayer& l, const ForwardTape::BatchNormCache& c) {
    const double m = static_cast<double>(c.xhat.rows());
    const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
    auto& rm = net.buffers()[l.running_mean].data;
    auto& rv = net.buffers()[l.running_var].data;
    const double mom = Arch::kBatchNormMomentum;
    for (int ch = 0; ch < l.channels; ++ch) {
      rm[static_cast<std::size_t>(ch)] = (1.0 - mom) * rm[static_cast<std::size_t>(ch)] + mom * c.batch_mean[ch];
      rv[static_cast<std::size_t>(ch)] =
          (1.0 - mom) * rv[static_cast<std::size_t>(ch)] + mom * c.batch_var[ch] * unbias;
    }
  };
  for (std::size_t l = 0; l < net.bn2d().size(); ++l) fold(net.bn2d()[l], tape.bn2d[l]);
  for (std::size_t l = 0; l < net.bn1d().size(); ++l) fold(net.bn1d()[l], tape.bn1d[l]);
}

double mse_loss(const RowMatrix& prediction, const RowMatrix& target, RowMatrix* d_prediction) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "prediction and target shapes differ");
  }
  const RowMatrix diff = prediction - target;
  const double count = static_cast<double>(diff.size());
  if (d_prediction) *d_prediction = diff * (2.0 / count);
  return diff.squaredNorm() / count;
}

// ---------------------------------------------------------------------------
// Training

namespace {

void check_set(const CalibrationNet& net, std::span<const LabeledWindow> set, const char* name) {
  if (set.empty()) throw Error(ErrorKind::kInsufficientData, std::string(name) + " set is empty");
  for (const auto& s : set) {
    if (s.window.n() != net.window_n() || s.target.size() != net.output_dim()) {
      throw Error(ErrorKind::kShapeMismatch, std::string(name) + " set does not match the model shape");
    }
  }
}

RowMatrix gather_targets(std::span<const LabeledWindow> set, std::span<const std::size_t> idx, int dim) {
  RowMatrix t(static_cast<Eigen::Index>(idx.size()), dim);
  for (std::size_t i = 0; i < idx.size(); ++i) t.row(static_cast<Eigen::Index>(i)) = set[idx[i]].target.transpose();
  return t;
}

void adam_step(CalibrationNet& net, const std::vector<Tensor>& grads, TrainState& st, double lr) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  ++st.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.step));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    auto& w = net.params()[p].data;
    auto& m = st.adam_m[p].data;
    auto& v = st.adam_v[p].data;
    const auto& g = grads[p].data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
    }
  }
}

}  // namespace

double evaluate_loss(const CalibrationNet& net, std::span<const LabeledWindow> set, int batch_size) {
  if (set.empty()) throw Error(ErrorKind::kInsufficientData, "cannot evaluate an empty set");
  double sse = 0.0;
  std::vector<const WindowTensor*> ptrs;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(set.size(), start + static_cast<std::size_t>(batch_size));
    ptrs.clear();
    idx.clear();
    for (std::size_t i = start; i < end; ++i) {
      ptrs.push_back(&set[i].window);
      idx.push_back(i);
    }
    const RowMatrix pred = forward(net, std::span<const WindowTensor* const>(ptrs), Mode::kEval);
    sse += (pred - gather_targets(set, idx, net.output_dim())).squaredNorm();
  }
  return sse / static_cast<double>(set.size() * static_cast<std::size_t>(net.output_dim()));
}

TrainResult train(CalibrationNet init, std::span<const LabeledWindow> train_set,
                  std::span<const LabeledWindow> val_set, const TrainConfig& cfg, const TrainState* resume,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  CalibrationNet net = std::move(init);
  check_set(net, train_set, "training");
  check_set(net, val_set, "validation");
  const int dim = net.output_dim();

  TrainState st;
  if (resume) {
    st = *resume;
    st.epochs_since_best = 0;
    if (st.adam_m.size() != net.params().size() || st.adam_v.size() != net.params().size()) {
      throw Error(ErrorKind::kShapeMismatch, "optimizer state does not match the model");
    }
  } else {
    Eigen::VectorXd rms = Eigen::VectorXd::Zero(dim);
    for (const auto& s : train_set) rms += s.target.cwiseAbs2();
    rms = (rms / static_cast<double>(train_set.size())).cwiseSqrt().cwiseMax(1e-6);
    net.set_output_scale(rms);
    for (const auto& p : net.params()) {
      st.adam_m.push_back(Tensor::zeros(p.shape));
      st.adam_v.push_back(Tensor::zeros(p.shape));
    }
  }

  TrainResult result{net, net, {}};
  const double init_val = evaluate_loss(net, val_set);
  if (!resume) {
    st.best_val_loss = init_val;
    EpochRecord rec{0, evaluate_loss(net, train_set), init_val, init_val};
    st.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  } else if (!(st.best_val_loss <= init_val)) {
    st.best_val_loss = init_val;
  }

  std::vector<std::size_t> order(train_set.size());
  std::vector<const WindowTensor*> ptrs;
  ForwardTape tape;
  RowMatrix d_pred;
  for (int e = 0; e < cfg.max_epochs; ++e) {
    const int epoch = st.epochs_completed + 1;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng(derive_seed(RngSeed{cfg.seed}, Stream::kShuffle, {static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng dropout_rng = make_rng(derive_seed(RngSeed{cfg.seed}, Stream::kDropout, {static_cast<std::uint64_t>(epoch)}));

    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      ptrs.clear();
      for (std::size_t i : idx) ptrs.push_back(&train_set[i].window);
      const RowMatrix pred = forward(net, std::span<const WindowTensor* const>(ptrs), Mode::kTrain, &dropout_rng, &tape);
      const double loss = mse_loss(pred, gather_targets(train_set, idx, dim), &d_pred);
      if (!std::isfinite(loss)) {
        throw DivergenceError(epoch, batch_index,
                              "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index));
      }
      loss_sum += loss * static_cast<double>(idx.size());
      adam_step(net, backward(net, tape, d_pred), st, cfg.learning_rate);
      update_running_stats(net, tape);
    }

    const double val = evaluate_loss(net, val_set);
    if (!std::isfinite(val)) {
      throw DivergenceError(epoch, batch_index, "non-finite validation loss at epoch " + std::to_string(epoch));
    }
    if (val < st.best_val_loss) {
      st.best_val_loss = val;
      st.epochs_since_best = 0;
      result.best = net;
    } else {
      ++st.epochs_since_best;
    }
    st.epochs_completed = epoch;
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), val, st.best_val_loss};
    st.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (st.epochs_since_best >= cfg.patience) break;
  }
  result.last = std::move(net);
  result.state = std::move(st);
  return result;
}

ErrorModel estimate_error_term(const CalibrationNet& net, std::span<const VelocitySample> samples, int window_n) {
  if (window_n != net.window_n()) {
    throw Error(ErrorKind::kShapeMismatch, "window length differs from the model's");
  }
  const std::size_t windows = samples.size() / static_cast<std::size_t>(window_n);
  if (windows == 0) {
    throw Error(ErrorKind::kInsufficientData, "series of " + std::to_string(samples.size()) +
                                                  " epochs is shorter than one window of " +
                                                  std::to_string(window_n));
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(net.output_dim());
  for (std::size_t w = 0; w < windows; ++w) {
    const auto slice = samples.subspan(w * static_cast<std::size_t>(window_n), static_cast<std::size_t>(window_n));
    sum += predict(net, WindowTensor::from_samples(slice));
  }
  const Eigen::VectorXd mean = sum / static_cast<double>(windows);
  return ErrorModel::from_parameters(net.em_tag(), std::span<const double>(mean.data(), static_cast<std::size_t>(mean.size())));
}

}  // namespace dvlcal
