#include "ngf/errors.hpp"
#include "ngf/hash.hpp"
#include "ngf/losses.hpp"
#include "ngf/plugin.hpp"
#include "ngf/png_io.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <sstream>

using namespace ngf;
namespace fs = std::filesystem;

namespace {

const std::string kCli = NGF_CLI_PATH;

ImageU8 random_u8(int c, int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ImageU8 img(c, h, w);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() & 0xff);
    return img;
}

std::string script(const ngf::testing::TempDir& dir, const std::string& name, const std::string& body) {
    const fs::path p = dir / name;
    write_text_file(p, "#!/bin/sh\n" + body);
    return "sh " + p.string();
}

PluginOptions options_in(const fs::path& dir) {
    PluginOptions o;
    o.workdir = dir / "work";
    o.handshake_timeout_s = 20;
    o.request_timeout_s = 20;
    return o;
}

} // namespace

TEST(Plugin, BuiltinIdentityOverTheWire) {
    ngf::testing::TempDir dir("plugin_identity");
    PluginEditor editor(kCli + " plugin --builtin identity --embed", options_in(dir.path()));
    EXPECT_EQ(editor.capabilities(), (std::set<std::string>{"edit", "embed"}));
    EditInput in;
    in.render = random_u8(3, 20, 24, 1);
    in.source = random_u8(3, 20, 24, 2);
    in.face_render = random_u8(3, 16, 16, 3);
    in.face_source = random_u8(3, 16, 16, 4);
    in.prompt = "keep it";
    const EditOutput out = editor.edit(in);
    EXPECT_EQ(out.edited, in.render);
    ASSERT_TRUE(out.face_edited.has_value());
    EXPECT_EQ(*out.face_edited, *in.face_render);

    in.face_render.reset();
    in.face_source.reset();
    EXPECT_FALSE(editor.edit(in).face_edited.has_value());

    const ImageU8 crop = random_u8(3, 32, 32, 5);
    const Eigen::VectorXd remote = editor.embed(crop);
    const Eigen::VectorXd local = PixelMomentEmbedder().embed(to_float<double>(crop));
    ASSERT_EQ(remote.size(), local.size());
    for (Eigen::Index i = 0; i < local.size(); ++i) EXPECT_DOUBLE_EQ(remote[i], local[i]);
}

TEST(Plugin, EmbedWithoutCapabilityIsRefused) {
    ngf::testing::TempDir dir("plugin_noembed");
    PluginEditor editor(kCli + " plugin --builtin posterize:4,2", options_in(dir.path()));
    EXPECT_THROW(editor.embed(random_u8(3, 8, 8, 1)), ProtocolError);
}

TEST(Plugin, MissingExecutableIsSpawnError) {
    ngf::testing::TempDir dir("plugin_missing");
    try {
        PluginEditor editor("/nonexistent/editor-plugin --flag", options_in(dir.path()));
        FAIL();
    } catch (const SpawnError& e) {
        // The child's stderr is quoted.
        EXPECT_NE(std::string(e.what()).find("nonexistent"), std::string::npos) << e.what();
    }
}

TEST(Plugin, BadHandshakeIsSpawnError) {
    ngf::testing::TempDir dir("plugin_badhs");
    const std::string cmd = script(dir, "p.sh", "read l\necho '{\"v\":2,\"capabilities\":[\"edit\"]}'\n");
    EXPECT_THROW(PluginEditor(cmd, options_in(dir.path())), SpawnError);
}

TEST(Plugin, MismatchedIdIsProtocolError) {
    ngf::testing::TempDir dir("plugin_id");
    const std::string cmd = script(dir, "p.sh",
                                   "read l\necho '{\"capabilities\":[\"edit\"],\"v\":1}'\n"
                                   "while read l; do echo '{\"edited_path\":\"/x.png\",\"id\":999,\"v\":1}'; done\n");
    PluginEditor editor(cmd, options_in(dir.path()));
    EditInput in{random_u8(3, 4, 4, 1), random_u8(3, 4, 4, 2), {}, {}, ""};
    try {
        editor.edit(in);
        FAIL();
    } catch (const ProtocolError& e) {
        EXPECT_NE(std::string(e.what()).find("999"), std::string::npos) << e.what();
    }
}

TEST(Plugin, ReportedErrorPropagates) {
    ngf::testing::TempDir dir("plugin_err");
    const std::string cmd = script(dir, "p.sh",
                                   "read l\necho '{\"capabilities\":[\"edit\"],\"v\":1}'\n"
                                   "while read l; do echo '{\"error\":\"out of memory\",\"id\":1,\"v\":1}'; done\n");
    PluginEditor editor(cmd, options_in(dir.path()));
    EditInput in{random_u8(3, 4, 4, 1), random_u8(3, 4, 4, 2), {}, {}, ""};
    try {
        editor.edit(in);
        FAIL();
    } catch (const ProtocolError& e) {
        EXPECT_NE(std::string(e.what()).find("out of memory"), std::string::npos);
    }
}

TEST(Plugin, CrashIsRetriedOnce) {
    ngf::testing::TempDir dir("plugin_crash");
    const fs::path marker = dir / "crashed";
    // First instance dies on its first request; the restarted one is a real editor.
    const std::string cmd = script(dir, "p.sh",
                                   "if [ -e " + marker.string() + " ]; then exec " + kCli +
                                       " plugin --builtin identity; fi\n"
                                       "touch " + marker.string() + "\n"
                                       "read l\necho '{\"capabilities\":[\"edit\"],\"v\":1}'\nread l\nexit 3\n");
    PluginEditor editor(cmd, options_in(dir.path()));
    EditInput in{random_u8(3, 6, 5, 1), random_u8(3, 6, 5, 2), {}, {}, ""};
    EXPECT_EQ(editor.edit(in).edited, in.render);
}

TEST(Plugin, RepeatedCrashPropagates) {
    ngf::testing::TempDir dir("plugin_crash2");
    const fs::path count = dir / "starts";
    const std::string cmd = script(dir, "p.sh",
                                   "echo x >> " + count.string() +
                                       "\nread l\necho '{\"capabilities\":[\"edit\"],\"v\":1}'\nread l\nexit 3\n");
    PluginEditor editor(cmd, options_in(dir.path()));
    EditInput in{random_u8(3, 4, 4, 1), random_u8(3, 4, 4, 2), {}, {}, ""};
    EXPECT_THROW(editor.edit(in), ProtocolError);
    EXPECT_EQ(read_text_file(count), "x\nx\n");
}

TEST(Plugin, SilentPluginTimesOut) {
    ngf::testing::TempDir dir("plugin_timeout");
    const std::string cmd =
        script(dir, "p.sh", "read l\necho '{\"capabilities\":[\"edit\"],\"v\":1}'\nread l\nexec sleep 30\n");
    PluginOptions o = options_in(dir.path());
    o.request_timeout_s = 0.3;
    PluginEditor editor(cmd, o);
    EditInput in{random_u8(3, 4, 4, 1), random_u8(3, 4, 4, 2), {}, {}, ""};
    EXPECT_THROW(editor.edit(in), PluginTimeout);
}

TEST(Plugin, WrongSizedEditIsRejected) {
    ngf::testing::TempDir dir("plugin_size");
    // The constant editor resamples to the input size, so the plugin side
    // cannot produce a wrong size on its own; fake one with a script.
    const fs::path img = dir / "small.png";
    write_png(img, random_u8(3, 2, 2, 1));
    const std::string cmd = script(dir, "p.sh",
                                   "read l\necho '{\"capabilities\":[\"edit\"],\"v\":1}'\n"
                                   "read l\necho '{\"edited_path\":\"" + img.string() + "\",\"id\":1,\"v\":1}'\n");
    PluginEditor editor(cmd, options_in(dir.path()));
    EditInput in{random_u8(3, 4, 4, 1), random_u8(3, 4, 4, 2), {}, {}, ""};
    EXPECT_THROW(editor.edit(in), ProtocolError);
}

TEST(ServePlugin, AnswersAndSurvivesBadLines) {
    ngf::testing::TempDir dir("serve");
    const fs::path render = dir / "r.png", source = dir / "s.png";
    const ImageU8 img = random_u8(3, 5, 7, 9);
    write_png(render, img);
    write_png(source, img);
    IdentityEditor identity;
    std::istringstream in(R"({"v":1,"verb":"handshake"})"
                          "\n\ngarbage\n"
                          R"({"v":1,"verb":"edit","id":5,"render_path":")" +
                          render.string() + R"(","source_path":")" + source.string() +
                          R"(","prompt":""})"
                          "\n" R"({"v":1,"verb":"edit","id":6,"render_path":"/missing.png","source_path":"/m.png"})"
                          "\n");
    std::ostringstream out;
    serve_plugin(identity, in, out);
    std::istringstream lines(out.str());
    std::string l;
    std::vector<EditResponse> resp;
    while (std::getline(lines, l)) resp.push_back(parse_response(l));
    ASSERT_EQ(resp.size(), 4u);
    EXPECT_EQ(*resp[0].capabilities, std::vector<std::string>{"edit"});
    EXPECT_EQ(*resp[1].id, -1);
    EXPECT_TRUE(resp[1].error.has_value());
    EXPECT_EQ(*resp[2].id, 5);
    EXPECT_EQ(read_png(*resp[2].edited_path, 3), img);
    EXPECT_EQ(*resp[3].id, 6);
    EXPECT_NE(resp[3].error->find("/missing.png"), std::string::npos);
}

TEST(Plugin, GoldenTranscript) {
    // Paths are fixed so that the transcript is byte-stable across runs.
    const fs::path work = "/tmp/ngf-golden-transcript";
    fs::remove_all(work);
    PluginOptions o;
    o.workdir = work;
    o.transcript = work.string() + ".jsonl";
    fs::remove(o.transcript);
    {
        PluginEditor editor(kCli + " plugin --builtin posterize:4,2 --embed", o);
        EditInput in{random_u8(3, 6, 8, 1), random_u8(3, 6, 8, 2), random_u8(3, 4, 4, 3), random_u8(3, 4, 4, 4),
                     "poster style"};
        editor.edit(in);
        in.face_render.reset();
        in.face_source.reset();
        editor.edit(in);
        editor.embed(random_u8(3, 16, 16, 5));
    }
    const std::string got = read_text_file(o.transcript);
    const fs::path golden = fs::path(NGF_TEST_DATA_DIR) / "golden_transcript.jsonl";
    if (std::getenv("NGF_UPDATE_GOLDEN")) write_text_file(golden, got);
    EXPECT_EQ(got, read_text_file(golden));
    // Every recorded line is canonical.
    std::istringstream lines(got);
    std::string l;
    int n = 0;
    while (std::getline(lines, l)) {
        if (n % 2 == 0)
            EXPECT_EQ(to_line(parse_request(l)), l);
        else
            EXPECT_EQ(to_line(parse_response(l)), l);
        ++n;
    }
    EXPECT_EQ(n, 8);
    fs::remove_all(work);
    fs::remove(o.transcript);
}
