#include <gtest/gtest.h>

#include "dvlcal/config.hpp"

using namespace dvlcal;

TEST(ConfigTest, DefaultsAreReferenceProtocol) {
  const ExperimentConfig c;
  EXPECT_EQ(c.grid.trajectory_count(), 31752);
  EXPECT_EQ(c.eval.runs, 200);
  EXPECT_EQ(c.eval.nn_windows, (std::vector<double>{10, 20, 50, 80, 100}));
  EXPECT_EQ(c.suite.dvl_types.size(), 4u);
  EXPECT_EQ(c.train.batch_size, 256);
  EXPECT_NO_THROW(c.validate());
}

TEST(ConfigTest, RoundTrip) {
  ExperimentConfig c;
  c.seed = 77;
  c.grid.augment_yz = true;
  c.grid.scale.count = 3;
  c.suite.eval_velocities = {Vec3(1.0, 0.25, 0.125)};
  c.suite.dvl_types[1].noise = 0.00123;
  c.train.max_epochs = 7;
  c.eval.nn_windows = {10, 30};
  c.eval.residual = {120.0, 180.0};
  c.scale_fraction = 0.3;
  c.out_dir = "results";
  const std::string text = config_to_json(c);
  const ExperimentConfig back = parse_config(text);
  EXPECT_EQ(back, c);
  EXPECT_EQ(config_to_json(back), text);
  EXPECT_EQ(parse_config(config_to_json(ExperimentConfig{})), ExperimentConfig{});
}

TEST(ConfigTest, PartialOverridesKeepDefaults) {
  const auto c = parse_config(R"({"seed": 5, "grid": {"repeats": 2, "scale": {"count": 3}}, "eval": {"runs": 10}})");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.grid.repeats, 2);
  EXPECT_EQ(c.grid.scale.count, 3);
  EXPECT_EQ(c.grid.scale.lower, 0.002);
  EXPECT_EQ(c.grid.noise.count, 9);
  EXPECT_EQ(c.eval.runs, 10);
  EXPECT_EQ(c.train.learning_rate, 1e-3);
}

TEST(ConfigTest, InvalidInputIsConfigurationError) {
  for (const char* bad : {"{", "[1,2]", R"({"seed": "x"})", R"({"eval": {"runs": 0}})",
                          R"({"scale_fraction": 2.0})", R"({"train": {"dropout": 0.3}})",
                          R"({"grid": {"traj_seconds": 10.5}})"}) {
    try {
      parse_config(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kConfiguration) << bad;
    }
  }
}

TEST(ConfigTest, HashIgnoresThreadsAndOutput) {
  ExperimentConfig a, b;
  b.threads = 7;
  b.out_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
}
