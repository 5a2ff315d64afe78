#include "ngf/errors.hpp"
#include "ngf/parallel.hpp"
#include "ngf/splatter.hpp"

#include "naive_raster.hpp"
#include "test_util.hpp"

#include <json.hpp>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace ngf;

namespace {

Camera centered_camera(int w, int h) {
    Camera c;
    c.width = w;
    c.height = h;
    c.fx = c.fy = 50;
    c.cx = w / 2;
    c.cy = h / 2;
    return c;
}

// Gaussian on the optical axis at depth z, tiny isotropic covariance.
FrameGaussians<double> axis_gaussians(const std::vector<double>& depth, const std::vector<double>& opacity, int K) {
    const int n = static_cast<int>(depth.size());
    auto g = FrameGaussians<double>::zeros(n, K);
    for (int i = 0; i < n; ++i) {
        g.position.row(i) = Vec3<double>(0, 0, depth[i]).transpose();
        g.covariance[i] = 1e-6 * Mat3<double>::Identity();
        g.opacity[i] = opacity[i];
        for (int k = 0; k < K; ++k) g.features(i, k) = i + 1 + 0.25 * k;
    }
    return g;
}

template <typename T> double max_diff(const Image<T>& a, const Image<T>& b) {
    double m = 0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
    return m;
}

FrameGaussians<double> permuted(const FrameGaussians<double>& g, const std::vector<int>& perm) {
    auto out = FrameGaussians<double>::zeros(g.size(), g.num_features());
    for (int i = 0; i < g.size(); ++i) {
        out.position.row(i) = g.position.row(perm[i]);
        out.covariance[i] = g.covariance[perm[i]];
        out.opacity[i] = g.opacity[perm[i]];
        out.features.row(i) = g.features.row(perm[i]);
        out.valid[i] = g.valid[perm[i]];
    }
    return out;
}

} // namespace

TEST(Rasterize, EmptySceneIsZero) {
    const auto g = FrameGaussians<float>::zeros(0, 4);
    SplatWorkspace<float> ws;
    const auto img = rasterize_forward(g, centered_camera(20, 12), ws);
    EXPECT_EQ(img.channels, 5);
    for (float v : img.data) EXPECT_EQ(v, 0.0f);
}

TEST(Rasterize, SingleGaussianHalfAlpha) {
    const auto g = axis_gaussians({2.0}, {0.5}, 3);
    const Camera cam = centered_camera(32, 32);
    SplatWorkspace<double> ws;
    const auto img = rasterize_forward(g, cam, ws);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(img.at(k, 16, 16), 0.5 * g.features(0, k), 1e-15);
    EXPECT_NEAR(img.at(3, 16, 16), 0.5, 1e-15);
}

TEST(Rasterize, TwoCoincidentGaussiansFrontToBack) {
    // Listed back first to check that depth, not input order, decides.
    const auto g = axis_gaussians({3.0, 2.0}, {0.5, 0.5}, 2);
    SplatWorkspace<double> ws;
    const auto img = rasterize_forward(g, centered_camera(32, 32), ws);
    for (int k = 0; k < 2; ++k)
        EXPECT_NEAR(img.at(k, 16, 16), 0.5 * g.features(1, k) + 0.25 * g.features(0, k), 1e-15);
    EXPECT_NEAR(img.at(2, 16, 16), 0.75, 1e-15);
}

TEST(Rasterize, MatchesNaiveOracle) {
    for (const auto& [w, h, n] : std::vector<std::array<int, 3>>{{64, 64, 200}, {37, 21, 80}, {128, 96, 500}}) {
        const Camera cam = default_camera(w, h);
        const auto gd = random_scene(n, 5, cam, w * 7 + n);
        SplatWorkspace<double> wsd;
        EXPECT_LE(max_diff(rasterize_forward(gd, cam, wsd), ngf::testing::naive_rasterize(gd, cam)), 1e-12);
        const auto gf = gd.cast<float>();
        SplatWorkspace<float> wsf;
        EXPECT_LE(max_diff(rasterize_forward(gf, cam, wsf), ngf::testing::naive_rasterize(gf, cam)), 1e-5);
    }
}

TEST(Rasterize, PermutationInvariant) {
    const Camera cam = default_camera(48, 40);
    const auto g = random_scene(150, 4, cam, 3);
    std::vector<int> perm(g.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
    SplatWorkspace<double> a, b;
    const auto ia = rasterize_forward(g, cam, a);
    const auto ib = rasterize_forward(permuted(g, perm), cam, b);
    EXPECT_EQ(ia.data, ib.data);
}

TEST(Rasterize, DeterministicAcrossThreadCounts) {
    const Camera cam = default_camera(96, 80);
    const auto g = random_scene(400, 6, cam, 4).cast<float>();
    Image<float> grad(7, 80, 96);
    std::mt19937_64 rng(1);
    for (auto& v : grad.data) v = float(ngf::testing::uniform(rng, -1, 1));
    SplatWorkspace<float> a, b;
    set_max_threads(1);
    const auto ia = rasterize_forward(g, cam, a);
    const auto ga = rasterize_backward(g, cam, a, grad);
    set_max_threads(0);
    const auto ib = rasterize_forward(g, cam, b);
    const auto gb = rasterize_backward(g, cam, b, grad);
    EXPECT_EQ(ia.data, ib.data);
    EXPECT_TRUE((ga.position.array() == gb.position.array()).all());
    EXPECT_TRUE((ga.opacity.array() == gb.opacity.array()).all());
    EXPECT_TRUE((ga.features.array() == gb.features.array()).all());
    for (int i = 0; i < g.size(); ++i) EXPECT_TRUE(ga.covariance[i] == gb.covariance[i]);
}

TEST(Rasterize, AlphaInRangeAndTileListsSorted) {
    const Camera cam = default_camera(80, 64);
    const auto g = random_scene(300, 3, cam, 5);
    SplatWorkspace<double> ws;
    const auto img = rasterize_forward(g, cam, ws);
    for (size_t p = 0; p < img.plane_size(); ++p) {
        const double a = img.plane(3)[p];
        EXPECT_GE(a, 0);
        EXPECT_LE(a, 1);
        EXPECT_NEAR(a, 1 - ws.final_transmittance[p], 1e-15);
    }
    for (size_t t = 0; t + 1 < ws.tile_offsets.size(); ++t)
        for (auto p = ws.tile_offsets[t] + 1; p < ws.tile_offsets[t + 1]; ++p) {
            const int a = ws.tile_lists[p - 1], b = ws.tile_lists[p];
            const double da = ws.projected[a].depth, db = ws.projected[b].depth;
            EXPECT_TRUE(da < db || (da == db && a < b));
        }
}

TEST(Rasterize, TransmittanceNonIncreasing) {
    const Camera cam = default_camera(40, 40);
    const auto g = random_scene(120, 2, cam, 6);
    SplatWorkspace<double> ws;
    rasterize_forward(g, cam, ws);
    const auto st = blend_structure(ws);
    const RasterSettings s;
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) {
            double tr = 1;
            for (int e : st.pixels[y * 40 + x]) {
                if (e == std::numeric_limits<std::int32_t>::min()) break;
                const int i = e < 0 ? ~e : e;
                const auto& pg = ws.projected[i];
                const double alpha = std::min(s.alpha_clamp,
                                              g.opacity[i] * std::exp(gaussian_power(pg.conic, x - pg.mean.x(), y - pg.mean.y())));
                const double next = tr * (1 - alpha);
                EXPECT_LE(next, tr);
                tr = next;
            }
            EXPECT_NEAR(tr, ws.final_transmittance[y * 40 + x], 1e-12);
        }
}

TEST(Rasterize, CutoffRadiusReachesAlphaMin) {
    for (double o : {0.01, 0.1, 0.5, 0.99}) {
        const double r = cutoff_radius(o, 1.0 / 255);
        EXPECT_NEAR(o * std::exp(-0.5 * r * r), 1.0 / 255, 1e-12);
    }
    EXPECT_EQ(cutoff_radius(0.001, 1.0 / 255), 0.0);
}

TEST(RasterizeBackward, ZeroUpstreamGivesZeroGradients) {
    const Camera cam = default_camera(32, 32);
    const auto g = random_scene(50, 3, cam, 7);
    SplatWorkspace<double> ws;
    rasterize_forward(g, cam, ws);
    const auto gr = rasterize_backward(g, cam, ws, Image<double>(4, 32, 32));
    EXPECT_EQ(gr.position.cwiseAbs().maxCoeff(), 0);
    EXPECT_EQ(gr.opacity.cwiseAbs().maxCoeff(), 0);
    EXPECT_EQ(gr.features.cwiseAbs().maxCoeff(), 0);
}

TEST(RasterizeBackward, FeatureGradientIsAlpha) {
    const auto g = axis_gaussians({2.0}, {0.7}, 3);
    const Camera cam = centered_camera(32, 32);
    SplatWorkspace<double> ws;
    const auto img = rasterize_forward(g, cam, ws);
    Image<double> up(4, 32, 32);
    up.at(1, 16, 16) = 1;
    const auto gr = rasterize_backward(g, cam, ws, up);
    EXPECT_EQ(gr.features(0, 1), img.at(3, 16, 16));
    EXPECT_EQ(gr.features(0, 0), 0.0);
}

TEST(RasterizeBackward, RejectsForeignWorkspace) {
    const Camera cam = default_camera(32, 32);
    auto g = random_scene(20, 3, cam, 8);
    SplatWorkspace<double> ws;
    rasterize_forward(g, cam, ws);
    EXPECT_THROW(rasterize_backward(g, cam, ws, Image<double>(3, 32, 32)), ContractViolation);
    g.opacity[3] *= 0.5;
    EXPECT_THROW(rasterize_backward(g, cam, ws, Image<double>(4, 32, 32)), ContractViolation);
}

TEST(Benchmark, ReportIsWellFormed) {
    const Camera cam = default_camera(64, 64);
    const auto empty = FrameGaussians<float>::zeros(0, 8);
    const auto r = benchmark(empty, cam, 10);
    EXPECT_EQ(r.gaussian_count, 0);
    EXPECT_EQ(r.repeats, 10);
    EXPECT_GE(r.median_ms, 0);
    EXPECT_LE(r.median_ms, r.p95_ms);
    const auto j = nlohmann::json::parse(r.to_json());
    for (const char* key : {"resolution", "gaussian_count", "median_ms", "p95_ms", "fps"}) EXPECT_TRUE(j.contains(key));
}

TEST(Benchmark, DoublingGaussiansIsSubQuadratic) {
    const Camera cam = default_camera(128, 128);
    const auto a = random_scene(2000, 8, cam, 1).cast<float>();
    const auto b = random_scene(4000, 8, cam, 1).cast<float>();
    const double ta = benchmark(a, cam, 15).median_ms, tb = benchmark(b, cam, 15).median_ms;
    EXPECT_LE(tb / ta, 2.5) << ta << " ms vs " << tb << " ms";
}
