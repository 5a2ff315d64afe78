#include "ngf/hash.hpp"

#include "test_util.hpp"

#include <json.hpp>
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace ngf;
namespace fs = std::filesystem;

namespace {

// Runs the CLI through the shell; output goes to <dir>/out.txt.
int run(const ngf::testing::TempDir& dir, const std::string& args) {
    const std::string cmd = std::string(NGF_CLI_PATH) + " " + args + " > " + (dir / "out.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string output(const ngf::testing::TempDir& dir) { return read_text_file(dir / "out.txt"); }

void small_dataset(const ngf::testing::TempDir& dir) {
    write_text_file(dir / "spec.json", R"({"n_frames":3,"resolution":40,"seed":1})");
    ASSERT_EQ(run(dir, "synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "ds").string()), 0)
        << output(dir);
    write_text_file(dir / "cfg.json", R"({"field":{"resolution":12,"features":4},"renderer":{"hidden":4},
        "face_aware":{"size":16},"preview_every":0})");
}

} // namespace

TEST(Cli, HelpAndUsageErrors) {
    ngf::testing::TempDir dir("cli_usage");
    EXPECT_EQ(run(dir, "--help"), 0);
    EXPECT_NE(output(dir).find("reconstruct"), std::string::npos);
    EXPECT_EQ(run(dir, "reconstruct --help"), 0);
    EXPECT_EQ(run(dir, ""), 2);
    EXPECT_EQ(run(dir, "reconstruct --dataset /tmp"), 2);
    EXPECT_EQ(run(dir, "frobnicate"), 2);
    EXPECT_EQ(run(dir, "bench --gaussians 10 --res 16 16 --repeats 3"), 2);
}

TEST(Cli, ConfigAndValidationErrorsExitTwo) {
    ngf::testing::TempDir dir("cli_config");
    small_dataset(dir);
    const std::string ds = (dir / "ds").string(), rig = (dir / "ds/rig.json").string();
    write_text_file(dir / "bad.json", R"({"iteratons":3})");
    EXPECT_EQ(run(dir, "reconstruct --dataset " + ds + " --rig " + rig + " --out " + (dir / "m.ngf").string() +
                           " --config " + (dir / "bad.json").string()),
              2);
    EXPECT_NE(output(dir).find("iteratons"), std::string::npos);
    fs::remove(dir / "ds/masks/00001.png");
    EXPECT_EQ(run(dir, "reconstruct --dataset " + ds + " --rig " + rig + " --out " + (dir / "m.ngf").string()), 2);
    EXPECT_NE(output(dir).find("masks/00001.png"), std::string::npos);
    write_text_file(dir / "spec2.json", R"({"width":40})");
    EXPECT_EQ(run(dir, "synth --spec " + (dir / "spec2.json").string() + " --out " + (dir / "x").string()), 2);
}

TEST(Cli, RigHashMismatchIsRejected) {
    ngf::testing::TempDir dir("cli_righash");
    small_dataset(dir);
    const fs::path ckpt = dir / "m.ngf";
    ASSERT_EQ(run(dir, "reconstruct --dataset " + (dir / "ds").string() + " --rig " + (dir / "ds/rig.json").string() +
                           " --out " + ckpt.string() + " --config " + (dir / "cfg.json").string() + " --iterations 1"),
              0)
        << output(dir);
    std::ofstream(dir / "ds/rig.json", std::ios::app) << "\n";
    EXPECT_EQ(run(dir, "render --ckpt " + ckpt.string() + " --dataset " + (dir / "ds").string() + " --out " +
                           (dir / "r").string()),
              2);
    EXPECT_NE(output(dir).find("SHA-256"), std::string::npos);
}

TEST(Cli, DeterministicRunsAreByteIdentical) {
    ngf::testing::TempDir dir("cli_det");
    small_dataset(dir);
    const std::string ds = (dir / "ds").string(), rig = (dir / "ds/rig.json").string();
    const std::string cfg = " --config " + (dir / "cfg.json").string();
    for (const char* tag : {"a", "b"}) {
        const std::string out = (dir / (std::string(tag) + ".ngf")).string();
        ASSERT_EQ(run(dir, "--deterministic reconstruct --dataset " + ds + " --rig " + rig + " --out " + out + cfg +
                               " --iterations 12"),
                  0)
            << output(dir);
        ASSERT_EQ(run(dir, "--deterministic edit --ckpt " + out + " --dataset " + ds + " --builtin lut:sepia" +
                               " --prompt sepia --out " + (dir / (std::string(tag) + "_e.ngf")).string() + cfg +
                               " --iterations 6 --update-period 2"),
                  0)
            << output(dir);
        ASSERT_EQ(run(dir, "--deterministic render --ckpt " + (dir / (std::string(tag) + "_e.ngf")).string() +
                               " --dataset " + ds + " --out " + (dir / (std::string(tag) + "_r")).string() +
                               " --report " + (dir / (std::string(tag) + "_r.json")).string()),
                  0)
            << output(dir);
    }
    EXPECT_EQ(sha256_file(dir / "a.ngf"), sha256_file(dir / "b.ngf"));
    EXPECT_EQ(sha256_file(dir / "a_e.ngf"), sha256_file(dir / "b_e.ngf"));
    for (int i = 0; i < 3; ++i) {
        const std::string f = "0000" + std::to_string(i) + ".png";
        EXPECT_EQ(sha256_file(dir / "a_r" / f), sha256_file(dir / "b_r" / f)) << f;
    }
    // Loss log: one record per step.
    std::ifstream log(dir / "a.ngf.losses.jsonl");
    std::string line;
    int n = 0;
    while (std::getline(log, line)) {
        EXPECT_EQ(nlohmann::json::parse(line)["phase"], "reconstruct");
        ++n;
    }
    EXPECT_EQ(n, 12);
    const auto report = nlohmann::json::parse(read_text_file(dir / "a_r.json"));
    EXPECT_EQ(report["frames"], 3);
}

TEST(Cli, PluginFailureExitsFour) {
    ngf::testing::TempDir dir("cli_plugin");
    small_dataset(dir);
    const std::string ds = (dir / "ds").string();
    ASSERT_EQ(run(dir, "reconstruct --dataset " + ds + " --rig " + (dir / "ds/rig.json").string() + " --out " +
                           (dir / "m.ngf").string() + " --config " + (dir / "cfg.json").string() + " --iterations 1"),
              0);
    EXPECT_EQ(run(dir, "edit --ckpt " + (dir / "m.ngf").string() + " --dataset " + ds +
                           " --plugin /nonexistent/plugin --prompt x --out " + (dir / "e.ngf").string()),
              4);
    EXPECT_EQ(run(dir, "edit --ckpt " + (dir / "m.ngf").string() + " --dataset " + ds + " --prompt x --out " +
                           (dir / "e.ngf").string()),
              2);
}

TEST(Cli, BenchAndGradcheckReports) {
    ngf::testing::TempDir dir("cli_bench");
    ASSERT_EQ(run(dir, "bench --gaussians 200 --res 64 48 --repeats 10 --report " + (dir / "b.json").string()), 0);
    const auto b = nlohmann::json::parse(read_text_file(dir / "b.json"));
    EXPECT_EQ(b["gaussian_count"], 200);
    ASSERT_EQ(run(dir, "gradcheck --probes 3 --filter covariance --report " + (dir / "g.json").string()), 0)
        << output(dir);
    EXPECT_EQ(nlohmann::json::parse(read_text_file(dir / "g.json"))["passed"], true);
}
