#include <gtest/gtest.h>

#include "wetsam/config.hpp"

using namespace wetsam;

TEST(KeyValueConfig, ParsesCommentsAndWhitespace) {
    const auto kv = KeyValueConfig::parse("# run\n  epochs = 7  # short\n\nlambda_a=0.5\nmodel.heads = 2\n");
    RunConfig cfg;
    apply_config(kv, cfg);
    EXPECT_EQ(cfg.train.epochs, 7u);
    EXPECT_DOUBLE_EQ(cfg.train.lambda_a, 0.5);
    EXPECT_EQ(cfg.train.model.heads, 2u);
}

TEST(KeyValueConfig, DuplicateKeyNamesLine) {
    try {
        KeyValueConfig::parse("seed = 1\nseed = 2\n");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(KeyValueConfig, MissingEqualsRejected) { EXPECT_THROW(KeyValueConfig::parse("epochs 5\n"), ConfigError); }

TEST(KeyValueConfig, UnknownKeyAndBadValuesRejected) {
    RunConfig cfg;
    EXPECT_THROW(apply_config(KeyValueConfig::parse("epoch = 5\n"), cfg), ConfigError);
    EXPECT_THROW(apply_config(KeyValueConfig::parse("epochs = five\n"), cfg), ConfigError);
    EXPECT_THROW(apply_config(KeyValueConfig::parse("epochs = 5x\n"), cfg), ConfigError);
    EXPECT_THROW(apply_config(KeyValueConfig::parse("densify = maybe\n"), cfg), ConfigError);
}

TEST(KeyValueConfig, BooleansAndSceneKeys) {
    RunConfig cfg;
    apply_config(KeyValueConfig::parse("densify = off\naugment = yes\nscene.timestamps = 4\nscene.noise = 0.1\n"), cfg);
    EXPECT_FALSE(cfg.train.densify);
    EXPECT_TRUE(cfg.train.augment);
    EXPECT_EQ(cfg.scene.T, 4u);
    EXPECT_DOUBLE_EQ(cfg.scene.noise_sigma, 0.1);
}

TEST(KeyValueConfig, SetOverridesFileValue) {
    auto kv = KeyValueConfig::parse("tau = 0.8\n");
    kv.set("tau", "0.7");
    RunConfig cfg;
    apply_config(kv, cfg);
    EXPECT_DOUBLE_EQ(cfg.train.grow.tau, 0.7);
}

TEST(KeyValueConfig, EveryKnownKeyIsSettable) {
    for (const auto& key : known_config_keys()) {
        RunConfig cfg;
        const bool is_bool = key == "densify" || key == "augment" || key == "deterministic";
        EXPECT_NO_THROW(apply_config(KeyValueConfig::parse(key + " = " + (is_bool ? "true" : "2") + "\n"), cfg)) << key;
    }
}

TEST(KeyValueConfig, MissingFileIsIoError) { EXPECT_THROW(KeyValueConfig::load("/nonexistent/run.cfg"), IoError); }
