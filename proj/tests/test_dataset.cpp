#include "ngf/dataset.hpp"
#include "ngf/errors.hpp"
#include "ngf/hash.hpp"
#include "ngf/png_io.hpp"
#include "ngf/synthetic.hpp"

#include "test_util.hpp"

#include <json.hpp>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace ngf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

SynthSpec small_spec(std::uint64_t seed = 5) {
    SynthSpec s;
    s.n_frames = 4;
    s.width = 64;
    s.height = 48;
    s.seed = seed;
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Point-sampled silhouette: a sub-sample is covered when it lies in any
// projected triangle. No depth test is needed for coverage.
ImageU8 silhouette_mask(const Rig& rig, const Vertices<double>& posed, const Camera& cam, int S) {
    std::vector<Vec2<double>> q(posed.rows());
    const Mat3<double> R = cam.rotation();
    const Vec3<double> t = cam.translation();
    for (Eigen::Index v = 0; v < posed.rows(); ++v) {
        const Vec3<double> p = R * posed.row(v).transpose() + t;
        q[v] = {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
    }
    std::vector<int> hits(size_t(cam.width) * cam.height * S * S, 0);
    const int SW = cam.width * S, SH = cam.height * S;
    for (const auto& f : rig.faces) {
        const Vec2<double>& a = q[f[0]];
        const Vec2<double>& b = q[f[1]];
        const Vec2<double>& c = q[f[2]];
        const double x0 = std::min({a.x(), b.x(), c.x()}), x1 = std::max({a.x(), b.x(), c.x()});
        const double y0 = std::min({a.y(), b.y(), c.y()}), y1 = std::max({a.y(), b.y(), c.y()});
        for (int sy = std::max(0, int((y0 + 0.5) * S) - 1); sy < std::min(SH, int((y1 + 0.5) * S) + 2); ++sy)
            for (int sx = std::max(0, int((x0 + 0.5) * S) - 1); sx < std::min(SW, int((x1 + 0.5) * S) + 2); ++sx) {
                const Vec2<double> p(sx / S + (sx % S + 0.5) / S - 0.5, sy / S + (sy % S + 0.5) / S - 0.5);
                auto edge = [&](const Vec2<double>& u, const Vec2<double>& v) {
                    return (v.x() - u.x()) * (p.y() - u.y()) - (v.y() - u.y()) * (p.x() - u.x());
                };
                const double e0 = edge(a, b), e1 = edge(b, c), e2 = edge(c, a);
                if ((e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0)) hits[size_t(sy) * SW + sx] = 1;
            }
    }
    ImageU8 mask(1, cam.height, cam.width);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            int n = 0;
            for (int sy = 0; sy < S; ++sy)
                for (int sx = 0; sx < S; ++sx) n += hits[size_t(y * S + sy) * SW + x * S + sx];
            mask.at(y, x, 0) = 2 * n >= S * S ? 255 : 0;
        }
    return mask;
}

void edit_params(const fs::path& dir, const std::function<void(json&)>& change) {
    json doc = json::parse(read_text_file(dir / "params.json"));
    change(doc);
    write_text_file(dir / "params.json", doc.dump());
}

void expect_validation(const fs::path& dir, const std::string& needle) {
    try {
        load_dataset(dir);
        FAIL() << "expected ValidationError containing " << needle;
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
}

} // namespace

TEST(Synthetic, LoadsBackWithDeclaredShapes) {
    ngf::testing::TempDir dir("synth_load");
    make_synthetic(small_spec(), dir.path());
    const Rig rig = load_rig(dir / "rig.json");
    const Dataset ds = load_dataset(dir.path(), &rig);
    ASSERT_EQ(ds.size(), 4);
    EXPECT_EQ(ds.intrinsics.width, 64);
    EXPECT_EQ(ds.intrinsics.height, 48);
    EXPECT_EQ(ds.rig_sha256, sha256_file(dir / "rig.json"));
    for (int i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(ds.images[i].channels, 3);
        EXPECT_EQ(ds.masks[i].channels, 1);
        EXPECT_EQ(ds.head_torso[i].data, ds.masks[i].data);
        EXPECT_TRUE(ds.frames[i].face_box.inside(64, 48));
        EXPECT_EQ(ds.frames[i].params.theta.rows(), rig.num_joints());
    }
    // The shape code is shared by all frames, the motion is not.
    EXPECT_EQ(ds.frames[0].params.beta, ds.frames[3].params.beta);
    EXPECT_NE(ds.frames[0].params.psi, ds.frames[1].params.psi);
}

TEST(Synthetic, SameSeedGivesIdenticalBytes) {
    ngf::testing::TempDir a("synth_a"), b("synth_b"), c("synth_c");
    make_synthetic(small_spec(3), a.path());
    make_synthetic(small_spec(3), b.path());
    make_synthetic(small_spec(4), c.path());
    for (const char* rel : {"params.json", "rig.json", "frames/00000.png", "frames/00003.png", "masks/00002.png"})
        EXPECT_EQ(slurp(a / rel), slurp(b / rel)) << rel;
    EXPECT_NE(slurp(a / "params.json"), slurp(c / "params.json"));
}

TEST(Synthetic, MasksMatchIndependentSilhouette) {
    ngf::testing::TempDir dir("synth_mask");
    make_synthetic(small_spec(), dir.path());
    const Rig rig = load_rig(dir / "rig.json");
    const Dataset ds = load_dataset(dir.path(), &rig);
    for (int i = 0; i < ds.size(); ++i) {
        const auto posed =
            deformed_mesh(rig, ds.frames[i].params, Vertices<double>::Zero(rig.num_vertices(), 3).eval());
        const ImageU8 oracle = silhouette_mask(rig, posed, ds.camera(i), 4);
        EXPECT_EQ(oracle.data, ds.masks[i].data) << "frame " << i;
        int covered = 0;
        for (auto v : oracle.data) covered += v == 255;
        EXPECT_GT(covered, 64 * 48 / 10);
    }
}

TEST(Synthetic, StaticMotionRepeatsTheFirstFrame) {
    ngf::testing::TempDir dir("synth_static");
    SynthSpec s = small_spec();
    s.motion_preset = "static";
    make_synthetic(s, dir.path());
    EXPECT_EQ(slurp(dir / "frames/00000.png"), slurp(dir / "frames/00003.png"));
}

TEST(Synthetic, SpecParsing) {
    const SynthSpec s = parse_synth_spec(R"({"n_frames":3,"resolution":[40,30],"seed":9,"texture_preset":"flat"})");
    EXPECT_EQ(s.n_frames, 3);
    EXPECT_EQ(s.width, 40);
    EXPECT_EQ(s.height, 30);
    EXPECT_EQ(s.seed, 9u);
    EXPECT_EQ(parse_synth_spec(R"({"resolution":32})").height, 32);
    EXPECT_THROW(parse_synth_spec(R"({"width":32})"), ConfigError);
    EXPECT_THROW(parse_synth_spec(R"({"motion_preset":"wild"})"), InvalidParameter);
    EXPECT_THROW(parse_synth_spec(R"({"n_frames":0})"), InvalidParameter);
}

class DatasetErrors : public ::testing::Test {
protected:
    void SetUp() override { make_synthetic(small_spec(), dir.path()); }
    ngf::testing::TempDir dir{"ds_errors"};
};

TEST_F(DatasetErrors, MissingFrameIsNamed) {
    fs::remove(dir / "frames/00002.png");
    expect_validation(dir.path(), "frames/00002.png");
}

TEST_F(DatasetErrors, NonContiguousIndices) {
    fs::rename(dir / "masks/00001.png", dir / "masks/00007.png");
    expect_validation(dir.path(), "masks/00001.png");
}

TEST_F(DatasetErrors, ExtraFrameIsCountMismatch) {
    fs::copy_file(dir / "frames/00000.png", dir / "frames/00004.png");
    expect_validation(dir.path(), "count mismatch");
}

TEST_F(DatasetErrors, RgbMaskIsRejected) {
    fs::copy_file(dir / "frames/00001.png", dir / "masks/00001.png", fs::copy_options::overwrite_existing);
    expect_validation(dir.path(), "masks/00001.png");
}

TEST_F(DatasetErrors, SixteenBitMaskIsRejected) {
    ngf::testing::TempDir other("ds_16bit");
    SynthSpec s = small_spec();
    s.width = s.height = 64;
    make_synthetic(s, other.path());
    fs::copy_file(fs::path(NGF_TEST_DATA_DIR) / "gray16.png", other / "head_torso/00000.png",
                  fs::copy_options::overwrite_existing);
    expect_validation(other.path(), "head_torso/00000.png");
    fs::copy_file(fs::path(NGF_TEST_DATA_DIR) / "rgba.png", other / "frames/00000.png",
                  fs::copy_options::overwrite_existing);
    expect_validation(other.path(), "frames/00000.png");
}

TEST_F(DatasetErrors, WrongResolution) {
    write_png(dir / "frames/00001.png", ImageU8(3, 10, 10));
    expect_validation(dir.path(), "differs from the declared");
}

TEST_F(DatasetErrors, BoxOutsideFrame) {
    edit_params(dir.path(), [](json& d) { d["frames"][2]["face_bbox"] = {60, 0, 10, 10}; });
    expect_validation(dir.path(), "$.frames[2].face_bbox");
}

TEST_F(DatasetErrors, SchemaAndStructure) {
    edit_params(dir.path(), [](json& d) { d["schema"] = "ngf-ds/2"; });
    expect_validation(dir.path(), "$.schema");
    edit_params(dir.path(), [](json& d) {
        d["schema"] = "ngf-ds/1";
        d["frames"][1].erase("psi");
    });
    expect_validation(dir.path(), "$.frames[1].psi");
    edit_params(dir.path(), [](json& d) { d["frames"][1]["psi"] = {0.0, 0.0}; d["frames"][0]["pose"] = {1, 2}; });
    expect_validation(dir.path(), "$.frames[0].pose");
    write_text_file(dir / "params.json", "{ not json");
    expect_validation(dir.path(), "params.json");
}

TEST_F(DatasetErrors, ParameterSizesCheckedAgainstRig) {
    const Rig rig = load_rig(dir / "rig.json");
    edit_params(dir.path(), [](json& d) { d["frames"][3]["beta"] = {0.1}; });
    EXPECT_NO_THROW(load_dataset(dir.path(), nullptr, false));
    EXPECT_THROW(load_dataset(dir.path(), &rig, false), ValidationError);
}

TEST(Dataset, MissingDirectory) {
    EXPECT_THROW(load_dataset("/nonexistent/dataset"), ValidationError);
    EXPECT_EQ(frame_name(42), "00042.png");
}
