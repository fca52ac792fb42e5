#include <gtest/gtest.h>

#include "bwrf/config.hpp"

namespace bwrf {
namespace {

TEST(RunConfig, DefaultsValidate) {
  const RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.lr, 4e-2f);
  EXPECT_EQ(cfg.weight_decay, 1e-4f);
  EXPECT_EQ(cfg.epochs, 300);
  EXPECT_EQ(cfg.milestones, (std::vector<int>{150, 225}));
  EXPECT_EQ(cfg.cos_samples, 1024);
}

TEST(RunConfig, ParsesCommentsListsAndBooleans) {
  const auto cfg = RunConfig::parse(
      "# run\n"
      "bits = 2   # low\n"
      "alpha = 0.5, 0.25\n"
      "use_fp_kd = off\n"
      "milestones = 30,45\n"
      "\n"
      "data_dir = /data/cifar\n");
  EXPECT_EQ(cfg.bits, 2);
  EXPECT_EQ(cfg.alpha, (std::vector<float>{0.5f, 0.25f}));
  EXPECT_FALSE(cfg.use_fp_kd);
  EXPECT_EQ(cfg.milestones, (std::vector<int>{30, 45}));
  EXPECT_EQ(cfg.data_dir, "/data/cifar");
}

TEST(RunConfig, UnknownKeyAndBadValuesRejected) {
  EXPECT_THROW(RunConfig::parse("learning_rate = 0.1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("bits = four\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("use_fp_kd = maybe\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("just text\n"), ConfigError);
  try {
    RunConfig::parse("bits = 4\nfoo = 1\n");
  } catch (const ConfigError &e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, OverridesAndValidation) {
  RunConfig cfg;
  cfg.apply_override("bits=3");
  EXPECT_EQ(cfg.bits, 3);
  EXPECT_THROW(cfg.apply_override("bits"), ConfigError);
  cfg.apply_override("bits=5");
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.apply_override("alpha=1,2,3");
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.apply_override("arch=resnet21");
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.apply_override("subset=0");
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.apply_override("branches=3");
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(RunConfig, ResolvedTextReproducesConfig) {
  RunConfig cfg;
  cfg.apply_override("lr=0.0123");
  cfg.apply_override("alpha=0.1,0.7");
  cfg.apply_override("temperature=3.3");
  cfg.apply_override("seed=18446744073709551615");
  cfg.apply_override("branches=1");
  const std::string text = cfg.to_text();
  const RunConfig back = RunConfig::parse(text);
  EXPECT_EQ(back.to_text(), text);
  EXPECT_EQ(back.lr, cfg.lr);
  EXPECT_EQ(back.alpha, cfg.alpha);
  EXPECT_EQ(back.seed, cfg.seed);
  for (const auto &key : RunConfig::keys()) EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
}

}  // namespace
}  // namespace bwrf
