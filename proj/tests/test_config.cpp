#include <gtest/gtest.h>

#include "trident/trident.hpp"

using namespace trident;

namespace {

nlohmann::json base() { return config_to_json(default_config()); }

std::string error_of(const nlohmann::json& j) {
  try {
    config_from_json(j);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultRoundTrips) {
  auto j = base();
  EXPECT_EQ(j.at("schema_version"), kConfigSchemaVersion);
  auto back = config_from_json(j);
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.ranges(), default_config().ranges());
  EXPECT_TRUE(std::isinf(back.ranges()[2].upper));
}

TEST(Config, MinimalDocumentUsesDefaults) {
  auto cfg = config_from_json({{"schema_version", 1}});
  EXPECT_EQ(cfg.num_branches(), 3u);
  EXPECT_EQ(cfg.training.epochs, TrainConfig{}.epochs);
}

TEST(Config, UnknownKeysRejectedWithPath) {
  auto j = base();
  j["training"]["learning_rate"] = 0.1;
  EXPECT_NE(error_of(j).find("config.training.learning_rate"), std::string::npos) << error_of(j);
  j = base();
  j["extra"] = true;
  EXPECT_NE(error_of(j).find("config.extra"), std::string::npos);
}

TEST(Config, SchemaVersionRequiredAndChecked) {
  auto j = base();
  j.erase("schema_version");
  EXPECT_NE(error_of(j).find("schema_version"), std::string::npos);
  j["schema_version"] = 2;
  EXPECT_NE(error_of(j).find("unsupported"), std::string::npos);
}

TEST(Config, TypeErrorsNameTheField) {
  auto j = base();
  j["training"]["lr"] = "fast";
  EXPECT_NE(error_of(j).find("config.training.lr"), std::string::npos) << error_of(j);
}

TEST(Config, InfinityAcceptsNullOrString) {
  auto j = base();
  j["ranges"][2] = {90, "inf"};
  EXPECT_TRUE(std::isinf(config_from_json(j).ranges()[2].upper));
  j["ranges"][2] = {90, nullptr};
  EXPECT_TRUE(std::isinf(config_from_json(j).ranges()[2].upper));
}

TEST(Config, RangeCountMustMatchBranches) {
  auto j = base();
  j["ranges"].erase(2);
  EXPECT_FALSE(error_of(j).empty());
}

TEST(Config, FastModeNeedsSeveralBranches) {
  auto cfg = default_config();
  cfg.set_branches({1}, {ValidRange{}});
  cfg.inference.mode = InferenceMode::fast;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.inference.mode = InferenceMode::full;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, SeedDrivesEverySplit) {
  auto cfg = default_config();
  cfg.apply_seed(4);
  EXPECT_EQ(cfg.training.seed, 4u);
  EXPECT_EQ(cfg.data.train.seed, 1004u);
  EXPECT_EQ(cfg.data.val.seed, 5004u);
}

TEST(Config, LearningRateSchedule) {
  TrainConfig t;
  t.epochs = 20;
  EXPECT_DOUBLE_EQ(t.lr_at(0), t.lr);
  EXPECT_DOUBLE_EQ(t.lr_at(13), t.lr);
  EXPECT_DOUBLE_EQ(t.lr_at(14), t.lr * 0.1);
  EXPECT_NEAR(t.lr_at(18), t.lr * 0.01, 1e-15);
  t.epochs = 1;
  EXPECT_DOUBLE_EQ(t.lr_at(0), t.lr);
}

TEST(Ablation, SuitesHaveTheExpectedRows) {
  auto base_cfg = default_config();
  auto names = [&](const std::string& s) {
    std::vector<std::string> out;
    for (const auto& v : ablation_variants(s, base_cfg)) out.push_back(v.name);
    return out;
  };
  EXPECT_EQ(names("branches"), (std::vector<std::string>{"branches=1", "branches=2", "branches=3", "branches=4"}));
  EXPECT_EQ(names("dilation-pilot"), (std::vector<std::string>{"d=1", "d=2", "d=3"}));
  EXPECT_EQ(names("ranges"), (std::vector<std::string>{"baseline", "ranges=(b)", "ranges=(c)", "ranges=(d)"}));
  EXPECT_EQ(names("stage").size(), 4u);
  EXPECT_EQ(names("blocks").size(), 4u);
  for (const auto& s : ablation_suites())
    for (const auto& v : ablation_variants(s, base_cfg)) EXPECT_NO_THROW(v.config.validate()) << v.name;
  EXPECT_THROW(ablation_variants("nope", base_cfg), Error);
}
