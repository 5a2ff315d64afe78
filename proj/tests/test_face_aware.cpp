#include "ngf/editors.hpp"
#include "ngf/errors.hpp"
#include "ngf/face_aware.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ngf;

namespace {

ImageU8 random_u8(int c, int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ImageU8 img(c, h, w);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() & 0xff);
    return img;
}

// Disc-shaped head-torso mask.
ImageU8 disc_mask(int h, int w, double cx, double cy, double r) {
    ImageU8 m(1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.at(y, x, 0) = (x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r ? 255 : 0;
    return m;
}

// Records what it was asked and answers with fixed colors.
class SplitEditor final : public Editor {
public:
    EditOutput edit(const EditInput& in) override {
        last = in;
        EditOutput out;
        out.edited = ImageU8(3, in.render.height, in.render.width, 10);
        if (in.face_render) out.face_edited = ImageU8(3, in.face_render->height, in.face_render->width, 200);
        return out;
    }
    EditInput last;
};

} // namespace

TEST(FaceAware, ZeroMaskGivesThePortraitEdit) {
    const ImageU8 render = random_u8(3, 40, 50, 1), source = random_u8(3, 40, 50, 2);
    auto ed = make_builtin_editor("posterize:5,3");
    const FaceAwareSettings s{true, 64, 5};
    const ImageU8 out = face_aware_edit(*ed, render, source, {10, 8, 20, 16}, ImageU8(1, 40, 50), "", s);
    EXPECT_EQ(out, ed->apply(render));
}

TEST(FaceAware, IdentityEditorReturnsTheRender) {
    const ImageU8 render = random_u8(3, 48, 48, 3), source = random_u8(3, 48, 48, 4);
    IdentityEditor ed;
    for (int size : {20, 64, 512}) {
        const FaceAwareSettings s{true, size, 3};
        EXPECT_EQ(face_aware_edit(ed, render, source, {12, 10, 20, 20}, disc_mask(48, 48, 22, 20, 9), "", s), render)
            << size;
    }
}

TEST(FaceAware, BlendFollowsTheFeatheredMask) {
    SplitEditor ed;
    const PixelRect box{8, 6, 24, 24};
    const ImageU8 ht = disc_mask(40, 40, 20, 18, 10);
    const FaceAwareSettings s{true, 48, 4};
    const ImageU8 out = face_aware_edit(ed, random_u8(3, 40, 40, 5), random_u8(3, 40, 40, 6), box, ht, "x", s);
    ASSERT_TRUE(ed.last.face_render.has_value());
    EXPECT_EQ(ed.last.face_render->width, 48);
    EXPECT_EQ(ed.last.face_source->height, 48);
    EXPECT_EQ(ed.last.prompt, "x");
    const Image<double> m = feathered_mask(ht, box, 4);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) {
            const double w = m.at(0, y, x);
            EXPECT_GE(w, 0);
            EXPECT_LE(w, 1);
            if (x < box.x || y < box.y || x >= box.x + box.w || y >= box.y + box.h) EXPECT_EQ(w, 0);
            EXPECT_EQ(out.at(y, x, 1), std::lround(w * 200 + (1 - w) * 10));
        }
    EXPECT_EQ(m.at(0, 18, 20), 1.0);
}

TEST(FaceAware, DisabledSendsNoCrop) {
    SplitEditor ed;
    FaceAwareSettings s;
    s.enabled = false;
    const ImageU8 out = face_aware_edit(ed, random_u8(3, 10, 10, 1), random_u8(3, 10, 10, 2), {}, ImageU8(), "", s);
    EXPECT_FALSE(ed.last.face_render.has_value());
    EXPECT_EQ(out, ImageU8(3, 10, 10, 10));
}

TEST(FaceAware, RejectsBadInputs) {
    IdentityEditor ed;
    const ImageU8 r = random_u8(3, 20, 20, 1);
    const FaceAwareSettings s{true, 32, 2};
    EXPECT_THROW(face_aware_edit(ed, r, r, {15, 15, 10, 10}, ImageU8(1, 20, 20), "", s), ConfigError);
    EXPECT_THROW(face_aware_edit(ed, r, r, {0, 0, 10, 10}, ImageU8(1, 10, 10), "", s), ConfigError);
    EXPECT_THROW(face_aware_edit(ed, r, random_u8(3, 20, 21, 2), {0, 0, 10, 10}, ImageU8(1, 20, 20), "", s),
                 ConfigError);
    EXPECT_THROW(feathered_mask(ImageU8(3, 20, 20), {0, 0, 5, 5}, 2), ConfigError);
}
