#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "support.hpp"

using namespace mhgnn;
using testing_support::TempDir;

TEST(Config, DefaultsValidate) {
    RunConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.train.batch_size, 8u);
    EXPECT_EQ(c.train.max_epochs, 100u);
    EXPECT_EQ(c.train.patience, 10u);
    EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-3);
    EXPECT_EQ(c.train.optimizer, OptimizerKind::adam);
    EXPECT_FALSE(c.train.class_weighting);
    EXPECT_EQ(c.protocol.folds, 5u);
}

TEST(Config, KeysAreUniqueAndRoundTrip) {
    std::set<std::string_view> names;
    for (const auto& k : config_keys()) EXPECT_TRUE(names.insert(k.name).second) << k.name;
    for (const char* required : {"seed", "out", "model.epsilon", "model.gnn_kind", "train.learning_rate",
                                 "protocol.kind", "synth.signal_strength", "data.manifest"})
        EXPECT_TRUE(names.contains(required)) << required;

    RunConfig c;
    c.model.gnn_kind = GnnKind::conv;
    c.train.patience = 3;
    c.synth.carriers = {false, true, true};
    c.protocol.kind = EvalProtocol::Kind::holdout;
    const auto j = config_to_json(c);
    RunConfig back;
    apply_config_json(back, nlohmann::json::parse(j.dump()));
    EXPECT_EQ(config_to_json(back), j);
    EXPECT_EQ(j["model.gnn_kind"], "degree-normalized-conv");
    EXPECT_EQ(j["synth.carriers"], "audio,text");
}

TEST(Config, RejectsUnknownAndMistyped) {
    RunConfig c;
    EXPECT_THROW(apply_config_json(c, {{"model.nope", 1}}), ConfigError);
    EXPECT_THROW(apply_config_json(c, {{"model", {{"d", 3}}}}), ConfigError);
    EXPECT_THROW(apply_config_json(c, {{"train.batch_size", "8"}}), ConfigError);
    EXPECT_THROW(apply_config_json(c, {{"train.batch_size", -1}}), ConfigError);
    EXPECT_THROW(apply_config_json(c, {{"train.class_weighting", 1}}), ConfigError);
    EXPECT_THROW(apply_config_json(c, {{"model.gnn_kind", "gcn"}}), ConfigError);
    EXPECT_THROW(apply_config_json(c, nlohmann::json::array()), ConfigError);
    apply_config_json(c, {{"model.epsilon", 1}});
    EXPECT_DOUBLE_EQ(c.model.epsilon, 1.0);
}

TEST(Config, FlagParsing) {
    const auto* lr = find_config_key("train.learning_rate");
    ASSERT_NE(lr, nullptr);
    EXPECT_DOUBLE_EQ(parse_flag_value(*lr, "0.01").get<double>(), 0.01);
    EXPECT_THROW((void)parse_flag_value(*lr, "0.01x"), ConfigError);
    const auto* bs = find_config_key("train.batch_size");
    EXPECT_EQ(parse_flag_value(*bs, "16").get<std::uint64_t>(), 16u);
    EXPECT_THROW((void)parse_flag_value(*bs, "-2"), ConfigError);
    EXPECT_THROW((void)parse_flag_value(*bs, "2.5"), ConfigError);
    const auto* cw = find_config_key("train.class_weighting");
    EXPECT_TRUE(parse_flag_value(*cw, "true").get<bool>());
    EXPECT_THROW((void)parse_flag_value(*cw, "yes"), ConfigError);
    EXPECT_EQ(find_config_key("bogus"), nullptr);
}

TEST(Config, FileErrors) {
    TempDir dir("cfg");
    RunConfig c;
    EXPECT_THROW(apply_config_file(c, dir.path() / "missing.json"), ConfigError);
    std::ofstream(dir.path() / "bad.json") << "{ not json";
    EXPECT_THROW(apply_config_file(c, dir.path() / "bad.json"), ConfigError);
    std::ofstream(dir.path() / "ok.json") << R"({"seed": 7, "model.n_segments": 12, "model.n_instances": 4})";
    apply_config_file(c, dir.path() / "ok.json");
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.model.n_instances, 4u);
    EXPECT_NO_THROW(c.validate());
    c.model.n_instances = 5;
    EXPECT_THROW(c.validate(), ConfigError);
}
