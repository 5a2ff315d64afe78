#include "ngf/config.hpp"
#include "ngf/errors.hpp"
#include "ngf/hash.hpp"

#include "test_util.hpp"

#include <json.hpp>
#include <gtest/gtest.h>

using namespace ngf;

namespace {

void expect_config_error(const std::string& doc, const std::string& key) {
    try {
        parse_config(doc);
        FAIL() << "accepted " << doc;
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
}

} // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
    const TrainConfig c = parse_config("{}");
    const TrainConfig d;
    EXPECT_EQ(config_to_json(c), config_to_json(d));
    EXPECT_EQ(c.update_period, 10);
    EXPECT_TRUE(c.decoder);
    EXPECT_NO_THROW(d.validate());
}

TEST(Config, OverridesNestedKeys) {
    const TrainConfig c = parse_config(R"({"iterations":5,"lr":{"delta":0.5},"renderer":{"decoder":false},
        "loss_weights":{"expression":0.1},"background":[0,0.5,1],"face_aware":{"size":64},"update_period":"inf"})");
    EXPECT_EQ(c.iterations, 5);
    EXPECT_EQ(c.lr.delta, 0.5);
    EXPECT_EQ(c.lr.features, LearningRates{}.features);
    EXPECT_FALSE(c.decoder);
    EXPECT_EQ(c.weights.expression, 0.1);
    EXPECT_EQ(c.background, Vec3<double>(0, 0.5, 1));
    EXPECT_EQ(c.face_aware.size, 64);
    EXPECT_EQ(c.update_period, kNeverUpdate);
}

TEST(Config, UnknownKeysNameTheirPath) {
    expect_config_error(R"({"iteratons":5})", "iteratons");
    expect_config_error(R"({"lr":{"feature":1}})", "lr.feature");
    expect_config_error(R"({"raster":{"tile":8}})", "raster.tile");
}

TEST(Config, RangeAndTypeChecks) {
    expect_config_error(R"({"iterations":-1})", "iterations");
    expect_config_error(R"({"iterations":1.5})", "iterations");
    expect_config_error(R"({"lr":{"opacity":0}})", "lr.opacity");
    expect_config_error(R"({"adam":{"beta1":1}})", "adam.beta1");
    expect_config_error(R"({"edit_lr_scale":0})", "edit_lr_scale");
    expect_config_error(R"({"update_period":0})", "update_period");
    expect_config_error(R"({"update_period":"never"})", "update_period");
    expect_config_error(R"({"background":[0,0,2]})", "background");
    expect_config_error(R"({"background":[0,0]})", "background");
    expect_config_error(R"({"loss_weights":{"mask":-1}})", "loss_weights.mask");
    expect_config_error(R"({"field":{"resolution":1}})", "field.resolution");
    expect_config_error(R"({"renderer":{"decoder":1}})", "renderer.decoder");
    expect_config_error(R"({"raster":{"alpha_min":0.995}})", "raster.alpha_min");
    expect_config_error(R"({"lr":3})", "lr");
    expect_config_error("[1]", "config");
    expect_config_error("{oops", "config");
}

TEST(Config, CanonicalDocumentRoundTrips) {
    TrainConfig c;
    c.iterations = 77;
    c.update_period = kNeverUpdate;
    c.seed = 123456789;
    c.weights.stable = 0.25;
    c.raster.tile_size = 8;
    c.face_aware.enabled = false;
    const std::string doc = config_to_json(c);
    EXPECT_EQ(config_to_json(parse_config(doc)), doc);
    const auto j = nlohmann::json::parse(doc);
    EXPECT_EQ(j["update_period"], "inf");
    EXPECT_EQ(j.dump(), doc);
}

TEST(Config, LoadFromFile) {
    ngf::testing::TempDir dir("config");
    write_text_file(dir / "c.json", R"({"seed":4})");
    EXPECT_EQ(load_config((dir / "c.json").string()).seed, 4u);
    write_text_file(dir / "bad.json", R"({"sed":4})");
    try {
        load_config((dir / "bad.json").string());
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("bad.json"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("sed"), std::string::npos);
    }
    EXPECT_THROW(load_config((dir / "missing.json").string()), ConfigError);
}
