#include "ngf/editors.hpp"
#include "ngf/errors.hpp"
#include "ngf/png_io.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace ngf;

namespace {

ImageU8 random_u8(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ImageU8 img(3, h, w);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() & 0xff);
    return img;
}

const char* kSpecs[] = {"identity", "lut:sepia", "lut:1,0,0,0,1,0,0,0,1,0.1,0,0", "posterize:4,3",
                        "relight_gain:1,0,0.5"};

} // namespace

TEST(Editors, PreserveDimensionsAndAreReproducible) {
    for (const char* spec : kSpecs) {
        const auto a = make_builtin_editor(spec), b = make_builtin_editor(spec);
        for (auto [h, w] : std::vector<std::pair<int, int>>{{17, 23}, {1, 1}, {64, 32}}) {
            EditInput in{random_u8(h, w, 1), random_u8(h, w, 2), random_u8(9, 9, 3), random_u8(9, 9, 4), "p"};
            const EditOutput x = a->edit(in), y = b->edit(in);
            EXPECT_EQ(x.edited.width, w) << spec;
            EXPECT_EQ(x.edited.height, h) << spec;
            EXPECT_EQ(x.edited.channels, 3) << spec;
            ASSERT_TRUE(x.face_edited.has_value());
            EXPECT_EQ(x.face_edited->width, 9);
            EXPECT_EQ(x.edited, y.edited) << spec;
            EXPECT_EQ(*x.face_edited, *y.face_edited) << spec;
            in.face_render.reset();
            in.face_source.reset();
            EXPECT_FALSE(a->edit(in).face_edited.has_value());
        }
    }
}

TEST(Editors, IdentityAndUnitLutReturnTheInput) {
    const ImageU8 img = random_u8(12, 10, 5);
    EXPECT_EQ(make_builtin_editor("identity")->apply(img), img);
    EXPECT_EQ(make_builtin_editor("lut:1,0,0,0,1,0,0,0,1")->apply(img), img);
    EXPECT_EQ(make_builtin_editor("relight_gain:0,1,0")->apply(img), img);
}

TEST(Editors, PosterizeValuesAndBlocks) {
    const ImageU8 out = make_builtin_editor("posterize:3,4")->apply(random_u8(10, 10, 6));
    std::set<int> values(out.data.begin(), out.data.end());
    for (int v : values) EXPECT_TRUE(v == 0 || v == 128 || v == 255) << v;
    // Cells are aligned to the origin; the last ones are partial.
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(y, x, c), out.at(y / 4 * 4, x / 4 * 4, c));
}

TEST(Editors, RelightGainIsDirectional) {
    ImageU8 grey(3, 5, 9, 100);
    const ImageU8 out = make_builtin_editor("relight_gain:1,0,0.5")->apply(grey);
    EXPECT_EQ(out.at(2, 0, 0), 50);
    EXPECT_EQ(out.at(2, 4, 1), 100);
    EXPECT_EQ(out.at(2, 8, 2), 150);
    EXPECT_EQ(out.at(0, 8, 0), out.at(4, 8, 0));
}

TEST(Editors, ConstantReturnsTargetAtEverySize) {
    ngf::testing::TempDir dir("constant");
    const ImageU8 target = random_u8(16, 16, 7);
    write_png(dir / "t.png", target);
    const auto ed = make_builtin_editor("constant:" + (dir / "t.png").string());
    const ImageU8 a = ed->apply(random_u8(16, 16, 8)), b = ed->apply(random_u8(16, 16, 9));
    EXPECT_EQ(a, target);
    EXPECT_EQ(a, b);
    EXPECT_EQ(ed->apply(random_u8(8, 32, 1)).width, 32);
    ImageU8 flat(3, 8, 8, 77);
    EXPECT_EQ(resize_u8(flat, 20, 3), ImageU8(3, 3, 20, 77));
    EXPECT_EQ(resize_u8(flat, 5, 5), ImageU8(3, 5, 5, 77));
}

TEST(Editors, BuiltinSpecErrors) {
    for (const char* spec : {"blur", "lut:1,2", "lut:a,b,c,d,e,f,g,h,i", "posterize:1,2", "posterize:4",
                             "posterize:4.5,2", "posterize:4,0", "relight_gain:0,0,1", "relight_gain:1", "constant"})
        EXPECT_THROW(make_builtin_editor(spec), InvalidParameter) << spec;
    EXPECT_THROW(make_builtin_editor("constant:/nonexistent/target.png"), ValidationError);
}

TEST(Editors, EmbedIsUnsupportedByDefault) {
    IdentityEditor ed;
    EXPECT_EQ(ed.capabilities(), std::set<std::string>{"edit"});
    EXPECT_THROW(ed.embed(random_u8(4, 4, 1)), ProtocolError);
}
