#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vflhlp/cli.hpp"
#include "vflhlp/config.hpp"

using namespace vflhlp;
namespace fs = std::filesystem;

namespace {

/// Fresh scratch directory per test, removed afterwards.
class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / ("vflhlp-cli-" + std::string(info->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        unsetenv("VFLHLP_OUT_DIR");
    }
    void TearDown() override {
        unsetenv("VFLHLP_OUT_DIR");
        fs::remove_all(dir_);
    }

    fs::path write_config(const json& j, const std::string& name = "config.json") {
        const fs::path p = dir_ / name;
        std::ofstream(p) << j.dump(2);
        return p;
    }

    int run(std::vector<std::string> args) {
        out_.str({});
        err_.str({});
        return run_cli(args, out_, err_);
    }

    fs::path dir_;
    std::ostringstream out_, err_;
};

/// Two parties, a few hundred rows, one epoch everywhere.
json small_config() {
    return json::parse(R"({
        "preset": "standard",
        "dataset": {"synthetic": {"pool": 800, "validation": 100, "test": 300,
                                  "parties": [{"categorical": 4, "numerical": 0}, {"categorical": 3, "numerical": 1}],
                                  "party_weights": [1.5, 1.0]}},
        "partition": {"parties": 2, "local_count": 300, "aligned_counts": [20, 40], "seeds": [1]},
        "model": {"encoders": [{"hidden": [8], "rep_dim": 4}, {"hidden": [8], "rep_dim": 4}]},
        "pretrain": {"ssl": {"epochs": 1}, "supervised": {"epochs": 1}},
        "downstream": {"modes": ["vanilla_vfl", "vflhlp"], "epochs": 1}
    })");
}

std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Config, PresetsAreValidAndRoundTrip) {
    for (const auto& name : preset_names()) {
        const RunConfig c = preset(name);
        EXPECT_NO_THROW(validate(c)) << name;
        const RunConfig back = parse_config(dump_config(c));
        EXPECT_EQ(back, c) << name;
        EXPECT_EQ(dump_config(back), dump_config(c)) << name;
        EXPECT_EQ(config_hash(back), config_hash(c)) << name;
    }
}

TEST(Config, PresetNamesDescribeTheirShape) {
    EXPECT_EQ(preset("avazu-like").model.head_input, 48u);
    EXPECT_EQ(preset("criteo-like").partition.parties, 2u);
    EXPECT_THROW(preset("imagenet"), ConfigError);
}

TEST(Config, PartialOverrideKeepsPresetDefaults) {
    const RunConfig c = parse_config(R"({"preset": "standard", "downstream": {"epochs": 3}})");
    RunConfig expected = preset("standard");
    expected.downstream.train.epochs = 3;
    EXPECT_EQ(c, expected);
}

TEST(Config, UnknownKeysAreRejected) {
    try {
        parse_config(R"({"preset": "standard", "downstream": {"epoch": 3}})");
        FAIL() << "expected a ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_config(R"({"preset": "standard", "extra": 1})"), ConfigError);
}

TEST(Config, BadValuesAreRejected) {
    EXPECT_THROW(parse_config("{not json"), ConfigError);
    EXPECT_THROW(parse_config(R"({"preset": "standard", "pretrain": {"ssl": {"temperature": 0}}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"preset": "standard", "downstream": {"beta": -1}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"preset": "standard", "downstream": {"modes": ["fedavg"]}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"preset": "standard", "partition": {"aligned_counts": [9000]}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"preset": "standard", "downstream": {"epochs": -2}})"), ConfigError);
}

TEST(Config, FieldOnMissingPartyNamesTheField) {
    const json j = json::parse(R"({
        "dataset": {"kind": "csv", "csv": {"train": "train.csv", "fields": [
            {"name": "a", "party": 1}, {"name": "b", "party": 2}, {"name": "c", "party": 3},
            {"name": "site_id", "party": 4}]}},
        "partition": {"parties": 3, "local_count": 10, "aligned_counts": [5], "seeds": [1]},
        "model": {"embed_dim": 2, "encoders": [{"hidden": [], "rep_dim": 2}, {"hidden": [], "rep_dim": 2},
                                               {"hidden": [], "rep_dim": 2}]}
    })");
    try {
        parse_config(j);
        FAIL() << "expected a ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("site_id"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("party 4"), std::string::npos) << e.what();
    }
}

TEST(Config, HashIgnoresOutputLocation) {
    RunConfig a = preset("standard");
    RunConfig b = a;
    b.output_dir = "/elsewhere";
    b.threads = 4;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.downstream.train.beta = 0.5;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST_F(CliTest, ParseErrorsAreConfigErrors) {
    EXPECT_EQ(run({}), kExitConfig);
    EXPECT_EQ(run({"fly", "--config", "x.json"}), kExitConfig);
    EXPECT_EQ(run({"prepare"}), kExitConfig);
    EXPECT_EQ(run({"--version"}), kExitOk);
    EXPECT_NE(out_.str().find(VFLHLP_VERSION), std::string::npos);
}

TEST_F(CliTest, BadConfigExitsWithTwo) {
    EXPECT_EQ(run({"prepare", "--config", (dir_ / "absent.json").string()}), kExitConfig);
    json j = small_config();
    j["downstream"]["optimizer"] = "lbfgs";
    EXPECT_EQ(run({"prepare", "--config", write_config(j).string()}), kExitConfig);
    EXPECT_NE(err_.str().find("lbfgs"), std::string::npos) << err_.str();
    EXPECT_EQ(run({"train", "--config", write_config(small_config()).string(), "--mode", "fedavg"}), kExitConfig);
}

TEST_F(CliTest, MissingCacheOrCheckpointExitsWithThree) {
    const std::string cfg = write_config(small_config()).string();
    const std::string out = (dir_ / "out").string();
    EXPECT_EQ(run({"pretrain", "--config", cfg, "--out", out}), kExitData);
    EXPECT_NE(err_.str().find("prepare"), std::string::npos) << err_.str();
    ASSERT_EQ(run({"prepare", "--config", cfg, "--out", out}), kExitOk);
    EXPECT_EQ(run({"train", "--config", cfg, "--out", out, "--mode", "vflhlp"}), kExitData);
    EXPECT_NE(err_.str().find("party 1"), std::string::npos) << err_.str();
}

TEST_F(CliTest, PrepareIsIdempotent) {
    const std::string cfg = write_config(small_config()).string();
    const fs::path out = dir_ / "out";
    ASSERT_EQ(run({"prepare", "--config", cfg, "--out", out.string()}), kExitOk);
    EXPECT_NE(out_.str().find("cache written"), std::string::npos);
    std::map<std::string, std::string> first;
    for (const auto& e : fs::directory_iterator(out / "cache")) first[e.path().filename().string()] = read(e.path());
    ASSERT_EQ(run({"prepare", "--config", cfg, "--out", out.string()}), kExitOk);
    EXPECT_NE(out_.str().find("cache up to date"), std::string::npos);
    std::map<std::string, std::string> second;
    for (const auto& e : fs::directory_iterator(out / "cache")) second[e.path().filename().string()] = read(e.path());
    EXPECT_EQ(first, second);
}

TEST_F(CliTest, PretrainWritesOneCheckpointPerParty) {
    const std::string cfg = write_config(small_config()).string();
    const fs::path out = dir_ / "out";
    ASSERT_EQ(run({"prepare", "--config", cfg, "--out", out.string()}), kExitOk);
    ASSERT_EQ(run({"pretrain", "--config", cfg, "--out", out.string()}), kExitOk) << err_.str();
    const fs::path seed_dir = out / "checkpoints" / "seed-1";
    std::size_t n = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(seed_dir)) ++n;
    EXPECT_EQ(n, 2u);
    const std::string p1 = read(seed_dir / "party-1.json");
    const std::string p2 = read(seed_dir / "party-2.json");
    ASSERT_EQ(run({"pretrain", "--config", cfg, "--out", out.string()}), kExitOk);
    EXPECT_EQ(read(seed_dir / "party-1.json"), p1);
    EXPECT_EQ(read(seed_dir / "party-2.json"), p2);
}

TEST_F(CliTest, PassiveOnlySkipsTheActiveParty) {
    const std::string cfg = write_config(small_config()).string();
    const fs::path out = dir_ / "out";
    ASSERT_EQ(run({"prepare", "--config", cfg, "--out", out.string()}), kExitOk);
    ASSERT_EQ(run({"pretrain", "--config", cfg, "--out", out.string(), "--passive-only"}), kExitOk);
    EXPECT_FALSE(fs::exists(out / "checkpoints" / "seed-1" / "party-1.json"));
    EXPECT_TRUE(fs::exists(out / "checkpoints" / "seed-1" / "party-2.json"));
    EXPECT_EQ(run({"train", "--config", cfg, "--out", out.string(), "--mode", "vflhlp_p"}), kExitOk) << err_.str();
}

TEST_F(CliTest, VanillaTrainsWithoutCheckpointsAndEvalReproduces) {
    const std::string cfg = write_config(small_config()).string();
    const fs::path out = dir_ / "out";
    ASSERT_EQ(run({"prepare", "--config", cfg, "--out", out.string()}), kExitOk);
    ASSERT_EQ(run({"train", "--config", cfg, "--out", out.string(), "--mode", "vanilla_vfl", "--aligned", "20"}),
              kExitOk)
        << err_.str();
    const fs::path run_dir = out / "runs" / "vanilla_vfl-a20-s1";
    for (const char* f : {"history.jsonl", "model.json", "result.json"}) EXPECT_TRUE(fs::exists(run_dir / f)) << f;
    EXPECT_FALSE(fs::exists(out / "runs" / "vanilla_vfl-a40-s1"));
    const json result = json::parse(read(run_dir / "result.json"));
    EXPECT_EQ(result["aligned"], 20);
    EXPECT_EQ(run({"eval", "--config", cfg, "--out", out.string(), "--mode", "vanilla_vfl", "--aligned", "20"}),
              kExitOk)
        << err_.str();
}

TEST_F(CliTest, EnvironmentOverridesConfiguredOutputDir) {
    json j = small_config();
    j["output_dir"] = (dir_ / "configured").string();
    const std::string cfg = write_config(j).string();
    setenv("VFLHLP_OUT_DIR", (dir_ / "from-env").string().c_str(), 1);
    ASSERT_EQ(run({"prepare", "--config", cfg}), kExitOk);
    EXPECT_TRUE(fs::exists(dir_ / "from-env" / "cache"));
    EXPECT_FALSE(fs::exists(dir_ / "configured"));
    ASSERT_EQ(run({"prepare", "--config", cfg, "--out", (dir_ / "flag").string()}), kExitOk);
    EXPECT_TRUE(fs::exists(dir_ / "flag" / "cache"));
}

TEST_F(CliTest, GridWritesTablesAndRuns) {
    const std::string cfg = write_config(small_config()).string();
    const fs::path out = dir_ / "out";
    ASSERT_EQ(run({"grid", "--config", cfg, "--out", out.string()}), kExitOk) << err_.str();
    for (const char* f : {"table.md", "table.csv", "cells.csv", "results.json"}) {
        EXPECT_TRUE(fs::exists(out / "results" / f)) << f;
    }
    EXPECT_NE(out_.str().find("| delta vflhlp |"), std::string::npos) << out_.str();
    EXPECT_TRUE(fs::exists(out / "runs" / "vflhlp-a40-s1" / "model.json"));
    EXPECT_TRUE(fs::exists(out / "checkpoints" / "seed-1" / "party-2.json"));
}

TEST_F(CliTest, GridWithFailedCellsExitsWithFour) {
    json j = small_config();
    j["downstream"]["optimizer"] = "sgd";
    j["downstream"]["server_lr"] = 1e300;
    j["downstream"]["modes"] = {"vanilla_vfl"};
    const fs::path out = dir_ / "out";
    EXPECT_EQ(run({"grid", "--config", write_config(j).string(), "--out", out.string()}), kExitTraining);
    EXPECT_NE(err_.str().find("missing cell"), std::string::npos) << err_.str();
    EXPECT_TRUE(fs::exists(out / "results" / "cells.csv"));
}
