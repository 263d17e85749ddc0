#include <gtest/gtest.h>

#include <cmath>

#include "dvlcal/network.hpp"
#include "../support/grad_check.hpp"

using namespace dvlcal;
using dvlcal::testing::check_gradients;
using dvlcal::testing::random_windows;

TEST(NetworkTest, BuildShapesAndNames) {
  const auto net = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1});
  EXPECT_EQ(net.output_dim(), 3);
  EXPECT_EQ(net.params().size(), net.param_names().size());
  EXPECT_EQ(net.buffers().size(), net.buffer_names().size());
  EXPECT_EQ(net.param_names().front(), "head2d.0.bn.gamma");
  EXPECT_EQ(net.fc().size(), 4u);
  EXPECT_EQ(net.fc()[0].in, 32 * (10 - 6) + 16 * (10 - 4));
  EXPECT_EQ(net.fc().back().out, 3);
  EXPECT_EQ(CalibrationNet::build(EmTag::kEm1, 10, RngSeed{1}).output_dim(), 1);
  EXPECT_EQ(CalibrationNet::build(EmTag::kEm2, 10, RngSeed{1}).output_dim(), 3);
  EXPECT_THROW(CalibrationNet::build(EmTag::kEm4, 6, RngSeed{1}), Error);
  std::size_t total = 0;
  for (const auto& p : net.params()) total += p.numel();
  EXPECT_EQ(net.parameter_count(), total);
}

TEST(NetworkTest, InitIsSeededAndBounded) {
  const auto a = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1});
  const auto b = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1});
  const auto c = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{2});
  EXPECT_EQ(a.params(), b.params());
  EXPECT_NE(a.params(), c.params());
  const auto& fc0 = a.params()[a.fc()[0].weight];
  const double bound = 1.0 / std::sqrt(static_cast<double>(a.fc()[0].in));
  for (double w : fc0.data) EXPECT_LE(std::abs(w), bound);
}

TEST(NetworkTest, GradientsMatchFiniteDifferencesEvalMode) {
  auto net = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{3});
  const auto batch = random_windows(4, 10, RngSeed{4});
  const auto res = check_gradients(net, batch, Mode::kEval, RngSeed{5}, 1e-5, 1e-6, 7);
  EXPECT_LT(res.max_rel, 1e-3) << res.worst;
  EXPECT_GT(res.checked, 1000u);
}

TEST(NetworkTest, GradientsMatchFiniteDifferencesTrainMode) {
  for (EmTag tag : {EmTag::kEm1, EmTag::kEm4}) {
    auto net = CalibrationNet::build(tag, 10, RngSeed{6});
    const auto batch = random_windows(5, 10, RngSeed{7});
    const auto res = check_gradients(net, batch, Mode::kTrain, RngSeed{8}, 1e-5, 1e-6, 7);
    EXPECT_LT(res.max_rel, 1e-3) << to_string(tag) << " " << res.worst;
  }
}

TEST(NetworkTest, BatchNormNormalizesBatch) {
  const auto net = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1});
  const auto batch = random_windows(8, 10, RngSeed{2});
  Rng rng = make_rng(RngSeed{3});
  ForwardTape tape;
  forward(net, batch, Mode::kTrain, &rng, &tape);
  for (const auto* caches : {&tape.bn2d, &tape.bn1d}) {
    for (const auto& c : *caches) {
      const Eigen::VectorXd mean = c.xhat.colwise().mean();
      const Eigen::VectorXd var = (c.xhat.rowwise() - mean.transpose()).array().square().colwise().mean();
      for (Eigen::Index ch = 0; ch < mean.size(); ++ch) {
        EXPECT_NEAR(mean[ch], 0.0, 1e-10);
        EXPECT_NEAR(var[ch], 1.0, 1e-6);
      }
    }
  }
}

TEST(NetworkTest, RunningStatsUseMomentumAndUnbiasedVariance) {
  auto net = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1});
  const auto batch = random_windows(6, 10, RngSeed{2});
  Rng rng = make_rng(RngSeed{3});
  ForwardTape tape;
  forward(net, batch, Mode::kTrain, &rng, &tape);
  const auto& layer = net.bn1d()[0];
  const auto& c = tape.bn1d[0];
  update_running_stats(net, tape);
  const double count = static_cast<double>(c.xhat.rows());
  for (int ch = 0; ch < layer.channels; ++ch) {
    EXPECT_NEAR(net.buffers()[layer.running_mean].data[static_cast<std::size_t>(ch)], 0.1 * c.batch_mean[ch], 1e-15);
    EXPECT_NEAR(net.buffers()[layer.running_var].data[static_cast<std::size_t>(ch)],
                0.9 + 0.1 * c.batch_var[ch] * count / (count - 1.0), 1e-12);
  }
}

TEST(NetworkTest, DropoutKeepsEightyPercentAndRescales) {
  const auto net = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1});
  const auto batch = random_windows(64, 10, RngSeed{2});
  Rng rng = make_rng(RngSeed{3});
  ForwardTape tape;
  forward(net, batch, Mode::kTrain, &rng, &tape);
  double kept = 0.0, total = 0.0;
  for (const auto& m : tape.drop_mask) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double v = m.data()[i];
      EXPECT_TRUE(v == 0.0 || std::abs(v - 1.25) < 1e-15);
      kept += v > 0.0 ? 1.0 : 0.0;
      total += 1.0;
    }
  }
  EXPECT_NEAR(kept / total, 0.8, 0.01);
  ForwardTape eval_tape;
  forward(net, batch, Mode::kEval, nullptr, &eval_tape);
  EXPECT_TRUE(eval_tape.drop_mask.empty());
}

TEST(NetworkTest, EvalModeIsDeterministicAndBatchIndependent) {
  const auto net = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1});
  const auto batch = random_windows(5, 10, RngSeed{2});
  const RowMatrix a = forward(net, batch, Mode::kEval);
  const RowMatrix b = forward(net, batch, Mode::kEval);
  EXPECT_EQ(a, b);
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXd p = predict(net, batch[static_cast<std::size_t>(i)]);
    EXPECT_LE((p - a.row(i).transpose()).norm(), 1e-14);
  }
}

TEST(NetworkTest, ShapeErrors) {
  const auto net = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1});
  const auto wrong = random_windows(2, 12, RngSeed{2});
  EXPECT_THROW(forward(net, wrong, Mode::kEval), Error);
  EXPECT_THROW(WindowTensor(10, std::vector<double>(59, 0.0)), Error);
  const auto ok = random_windows(2, 10, RngSeed{2});
  EXPECT_THROW(forward(net, ok, Mode::kTrain), Error);  // no dropout generator
}

TEST(NetworkTest, MseLossAndGradient) {
  RowMatrix p(2, 3), t(2, 3), d;
  p << 1, 2, 3, 4, 5, 6;
  t << 1, 2, 4, 4, 3, 6;
  EXPECT_DOUBLE_EQ(mse_loss(p, t, &d), 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(d(0, 2), 2.0 * -1.0 / 6.0);
  EXPECT_DOUBLE_EQ(d(1, 1), 2.0 * 2.0 / 6.0);
}

TEST(NetworkTest, WindowTensorSubIsDvlMinusGnss) {
  std::vector<VelocitySample> s;
  for (int i = 0; i < 10; ++i) s.push_back({double(i), Vec3(2.0 + i, 0.1, -0.2), Vec3(1.0 + i, 0.3, 0.0)});
  const auto w = WindowTensor::from_samples(s);
  ASSERT_EQ(w.n(), 10);
  EXPECT_DOUBLE_EQ(w.stacked_at(0, 3), 5.0);
  EXPECT_DOUBLE_EQ(w.stacked_at(3, 3), 4.0);
  EXPECT_DOUBLE_EQ(w.sub()[0], 1.0);
  EXPECT_NEAR(w.sub()[10], -0.2, 1e-15);
  EXPECT_NEAR(w.sub()[20], -0.2, 1e-15);
}

namespace {

std::vector<LabeledWindow> constant_set(int count, const Eigen::VectorXd& target) {
  std::vector<LabeledWindow> out;
  std::vector<double> stacked(60);
  for (int r = 0; r < 6; ++r) {
    for (int i = 0; i < 10; ++i) stacked[static_cast<std::size_t>(r * 10 + i)] = r < 3 ? 2.01 : 2.0;
  }
  for (int i = 0; i < count; ++i) out.push_back({WindowTensor(10, stacked), target});
  return out;
}

}  // namespace

TEST(TrainingTest, FitsConstantTarget) {
  const Eigen::Vector3d c(0.01, -0.02, 0.005);
  const auto train_set = constant_set(512, c);
  const auto val_set = constant_set(64, c);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.patience = cfg.max_epochs;
  const auto res = train(CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1}), train_set, val_set, cfg);
  EXPECT_LT(evaluate_loss(res.best, val_set), 1e-6);
  EXPECT_LE((predict(res.best, val_set[0].window) - c).squaredNorm(), 3e-6);
  EXPECT_EQ(res.state.history.front().epoch, 0);
  EXPECT_LE(res.state.best_val_loss, res.state.history.front().val_loss);
}

TEST(TrainingTest, DeterministicAndResumable) {
  Rng rng = make_rng(RngSeed{9});
  std::normal_distribution<double> g(0.0, 0.01);
  std::vector<LabeledWindow> train_set, val_set;
  const auto windows = random_windows(96, 10, RngSeed{10});
  for (std::size_t i = 0; i < windows.size(); ++i) {
    (i < 80 ? train_set : val_set).push_back({windows[i], Eigen::VectorXd::Constant(1, g(rng))});
  }
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.max_epochs = 3;
  cfg.patience = 10;
  const auto init = CalibrationNet::build(EmTag::kEm1, 10, RngSeed{1});
  const auto a = train(init, train_set, val_set, cfg);
  const auto b = train(init, train_set, val_set, cfg);
  EXPECT_EQ(a.last.params(), b.last.params());
  ASSERT_EQ(a.state.history.size(), 4u);

  // 3 + 3 epochs with a resume equal 6 straight epochs.
  CalibrationNet resumed = init;
  resumed.params() = a.last.params();
  resumed.buffers() = a.last.buffers();
  resumed.set_output_scale(a.last.output_scale());
  std::vector<int> epochs;
  const auto c = train(resumed, train_set, val_set, cfg, &a.state, [&](const EpochRecord& r) { epochs.push_back(r.epoch); });
  EXPECT_EQ(epochs, (std::vector<int>{4, 5, 6}));
  cfg.max_epochs = 6;
  const auto straight = train(init, train_set, val_set, cfg);
  EXPECT_EQ(c.last.params(), straight.last.params());
  EXPECT_EQ(c.state.step, straight.state.step);
}

TEST(TrainingTest, NonFiniteLossRaisesDivergence) {
  std::vector<double> stacked(60, 1.0);
  stacked[5] = std::nan("");
  std::vector<LabeledWindow> bad = {{WindowTensor(10, stacked), Eigen::VectorXd::Zero(1)},
                                    {WindowTensor(10, std::vector<double>(60, 0.5)), Eigen::VectorXd::Zero(1)}};
  std::vector<LabeledWindow> val = {{WindowTensor(10, std::vector<double>(60, 0.5)), Eigen::VectorXd::Ones(1)}};
  TrainConfig cfg;
  cfg.batch_size = 2;
  try {
    train(CalibrationNet::build(EmTag::kEm1, 10, RngSeed{1}), bad, val, cfg);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1);
    EXPECT_EQ(e.batch(), 0);
  }
}

TEST(TrainingTest, ConfigValidation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.dropout = 0.5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(EstimateTest, AveragesNonOverlappingWindows) {
  const auto net = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1});
  std::vector<VelocitySample> s;
  for (int i = 0; i < 25; ++i) s.push_back({double(i), Vec3(2.0 + 0.01 * i, 0.1, 0.0), Vec3(2.0, 0.1 * i, 0.0)});
  const auto em = estimate_error_term(net, s, 10);
  const Eigen::VectorXd expected =
      0.5 * (predict(net, WindowTensor::from_samples(std::span(s).subspan(0, 10))) +
             predict(net, WindowTensor::from_samples(std::span(s).subspan(10, 10))));
  EXPECT_LE((em.bias() - expected).norm(), 1e-15);
  EXPECT_THROW(estimate_error_term(net, std::span(s).subspan(0, 9), 10), Error);
}

TEST(CheckpointTest, SaveLoadSaveIsIdentical) {
  auto net = CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1});
  net.set_output_scale(Eigen::Vector3d(0.0123456789012345, 1.0 / 3.0, 2e-7));
  Checkpoint ck{net, TrainConfig{}, "abc123", false, {}, {}, {}};
  const std::string text = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(text);
  EXPECT_EQ(back.net.params(), net.params());
  EXPECT_EQ(back.net.buffers(), net.buffers());
  EXPECT_EQ(back.net.output_scale(), net.output_scale());
  EXPECT_EQ(serialize_checkpoint(back), text);

  const auto batch = random_windows(3, 10, RngSeed{2});
  EXPECT_EQ(forward(back.net, batch, Mode::kEval), forward(net, batch, Mode::kEval));
}

TEST(CheckpointTest, StateRoundTripAndErrors) {
  std::vector<LabeledWindow> set;
  for (const auto& w : random_windows(20, 10, RngSeed{3})) set.push_back({w, Eigen::VectorXd::Constant(3, 0.01)});
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 1;
  const auto res = train(CalibrationNet::build(EmTag::kEm4, 10, RngSeed{1}), set, set, cfg);
  Checkpoint ck{res.best, cfg, "fp", true, res.state, res.last.params(), res.last.buffers()};
  const std::string text = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(text);
  EXPECT_TRUE(back.has_state);
  EXPECT_EQ(back.state.adam_m, res.state.adam_m);
  EXPECT_EQ(back.state.adam_v, res.state.adam_v);
  EXPECT_EQ(back.state.history.size(), res.state.history.size());
  EXPECT_EQ(back.last_params, res.last.params());
  EXPECT_EQ(back.last_buffers, res.last.buffers());
  EXPECT_EQ(serialize_checkpoint(back), text);

  EXPECT_THROW(deserialize_checkpoint("{not json"), Error);
  std::string tampered = text;
  tampered.replace(tampered.find("\"window_n\": 10"), 14, "\"window_n\": 11");
  EXPECT_THROW(deserialize_checkpoint(tampered), Error);
}
