#include "ngf/errors.hpp"
#include "ngf/losses.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ngf;
using ngf::testing::uniform;

namespace {

Image<double> random_image(int c, int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Image<double> img(c, h, w);
    for (auto& v : img.data) v = uniform(rng, 0, 1);
    return img;
}

Image<double> shifted(Image<double> img, double d) {
    for (auto& v : img.data) v += d;
    return img;
}

double mean_abs(const Image<double>& a, const Image<double>& b, int channels) {
    double s = 0;
    int n = 0;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x, ++n) s += std::abs(a.at(c, y, x) - b.at(c, y, x));
    return s / n;
}

// Direct statement of the pyramid proxy.
double pyramid_oracle(Image<double> a, Image<double> b, int levels) {
    double total = 0;
    for (int l = 0; l < levels; ++l) {
        total += mean_abs(a, b, a.channels);
        double sx = 0, sy = 0;
        int nx = 0, ny = 0;
        for (int c = 0; c < a.channels; ++c)
            for (int y = 0; y < a.height; ++y)
                for (int x = 0; x < a.width; ++x) {
                    if (x + 1 < a.width) {
                        sx += std::abs((a.at(c, y, x + 1) - a.at(c, y, x)) - (b.at(c, y, x + 1) - b.at(c, y, x)));
                        ++nx;
                    }
                    if (y + 1 < a.height) {
                        sy += std::abs((a.at(c, y + 1, x) - a.at(c, y, x)) - (b.at(c, y + 1, x) - b.at(c, y, x)));
                        ++ny;
                    }
                }
        if (nx) total += sx / nx;
        if (ny) total += sy / ny;
        if (l + 1 == levels || a.height < 2 || a.width < 2) break;
        auto down = [](const Image<double>& m) {
            Image<double> o(m.channels, m.height / 2, m.width / 2);
            for (int c = 0; c < m.channels; ++c)
                for (int y = 0; y < o.height; ++y)
                    for (int x = 0; x < o.width; ++x)
                        o.at(c, y, x) = (m.at(c, 2 * y, 2 * x) + m.at(c, 2 * y + 1, 2 * x) + m.at(c, 2 * y, 2 * x + 1) +
                                         m.at(c, 2 * y + 1, 2 * x + 1)) / 4;
            return o;
        };
        a = down(a);
        b = down(b);
    }
    return total;
}

// 16 x 16 luma block means, centred; crop sides are multiples of 16.
Eigen::VectorXd moment_oracle(const Image<double>& crop) {
    const int by = crop.height / 16, bx = crop.width / 16;
    Eigen::VectorXd e(256);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            double s = 0;
            for (int yy = 0; yy < by; ++yy)
                for (int xx = 0; xx < bx; ++xx) {
                    const int py = y * by + yy, px = x * bx + xx;
                    s += 0.299 * crop.at(0, py, px) + 0.587 * crop.at(1, py, px) + 0.114 * crop.at(2, py, px);
                }
            e[y * 16 + x] = s / (by * bx);
        }
    return e.array() - e.mean();
}

class ConstantEmbedder final : public ExpressionEmbedder {
public:
    Eigen::VectorXd embed(const Image<double>&) const override { return Eigen::VectorXd::Ones(4); }
};

template <typename F> void check_gradient(F loss, Image<double> x, const Image<double>& analytic, int probes,
                                          std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double h = 1e-6;
    int checked = 0;
    for (int attempt = 0; attempt < 20 * probes && checked < probes; ++attempt) {
        const size_t i = rng() % x.data.size();
        const double x0 = x.data[i];
        x.data[i] = x0 + h;
        const double fp = loss(x);
        x.data[i] = x0 - h;
        const double fm = loss(x);
        x.data[i] = x0 + h / 2;
        const double fp2 = loss(x);
        x.data[i] = x0 - h / 2;
        const double fm2 = loss(x);
        x.data[i] = x0;
        const double n1 = (fp - fm) / (2 * h), n2 = (fp2 - fm2) / h;
        // A kink between the stencil points makes the two estimates disagree.
        if (std::abs(n1 - n2) > 1e-5 * std::max(std::abs(n1), 1e-3)) continue;
        ++checked;
        EXPECT_LE(std::abs(analytic.data[i] - n1), 1e-4 * std::max({std::abs(n1), std::abs(analytic.data[i]), 1e-4}))
            << "index " << i;
    }
    EXPECT_EQ(checked, probes);
}

} // namespace

TEST(Losses, ReconExamples) {
    const auto a = random_image(3, 9, 11, 1), b = random_image(3, 9, 11, 2);
    EXPECT_EQ(recon_loss(a, a), 0.0);
    EXPECT_NEAR(recon_loss(shifted(a, 0.1), a), 0.1, 1e-12);
    EXPECT_NEAR(recon_loss(a, b), mean_abs(a, b, 3), 1e-12);
    EXPECT_THROW(recon_loss(a, random_image(3, 9, 10, 3)), ConfigError);
}

TEST(Losses, MaskExamples) {
    const Image<double> one(1, 5, 5, 1.0), zero(1, 5, 5, 0.0);
    EXPECT_EQ(mask_loss(one, one), 0.0);
    EXPECT_EQ(mask_loss(one, zero), 1.0);
    const auto a = random_image(1, 6, 7, 4), b = random_image(1, 6, 7, 5);
    EXPECT_NEAR(mask_loss(a, b), mean_abs(a, b, 1), 1e-12);
    EXPECT_THROW(mask_loss(random_image(3, 6, 7, 1), random_image(3, 6, 7, 2)), ConfigError);
}

TEST(Losses, PerceptualExamples) {
    const auto a = random_image(3, 16, 20, 6), b = random_image(3, 16, 20, 7);
    EXPECT_EQ(perceptual_loss(a, a), 0.0);
    // Constant shift: only the three pixel terms survive.
    EXPECT_NEAR(perceptual_loss(shifted(a, 0.2), a), 3 * 0.2, 1e-12);
    EXPECT_NEAR(perceptual_loss(a, b), pyramid_oracle(a, b, 3), 1e-12);
    const auto c = random_image(3, 13, 9, 8), d = random_image(3, 13, 9, 9);
    EXPECT_NEAR(perceptual_loss(c, d), pyramid_oracle(c, d, 3), 1e-12);
}

TEST(Losses, StableExamples) {
    const auto src = random_image(3, 8, 8, 10);
    auto feat = random_image(6, 8, 8, 11);
    for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < src.plane_size(); ++i) feat.plane(c)[i] = src.plane(c)[i];
    EXPECT_EQ(stable_loss(feat, src), 0.0);
    for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < src.plane_size(); ++i) feat.plane(c)[i] += 0.2;
    EXPECT_NEAR(stable_loss(feat, src), 0.2, 1e-12);
    const auto r = random_image(5, 8, 8, 12);
    EXPECT_NEAR(stable_loss(r, src), mean_abs(r, src, 3), 1e-12);
    EXPECT_THROW(stable_loss(random_image(2, 8, 8, 1), src), ConfigError);
}

TEST(Losses, ExpressionExamples) {
    const PixelMomentEmbedder emb;
    const auto a = random_image(3, 64, 80, 13), b = random_image(3, 64, 80, 14);
    const PixelRect box{8, 16, 48, 32};
    EXPECT_EQ(*expression_loss(emb, a, a, box), 0.0);
    const auto crop_a = crop(a, box.x, box.y, box.w, box.h), crop_b = crop(b, box.x, box.y, box.w, box.h);
    const Eigen::VectorXd ea = moment_oracle(crop_a), eb = moment_oracle(crop_b);
    EXPECT_LT((emb.embed(crop_a) - ea).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(*expression_loss(emb, a, b, box), (ea - eb).squaredNorm(), 1e-10);
    const ConstantEmbedder constant;
    EXPECT_EQ(*expression_loss(constant, a, b, box), 0.0);
    EXPECT_FALSE(expression_loss(emb, a, b, PixelRect{0, 0, 7, 30}).has_value());
}

TEST(Losses, EveryTermNonNegativeAndZeroOnIdentical) {
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_image(3, 16, 16, 100 + trial), b = random_image(3, 16, 16, 200 + trial);
        EXPECT_GE(recon_loss(a, b), 0);
        EXPECT_GE(perceptual_loss(a, b), 0);
        EXPECT_GE(stable_loss(a, b), 0);
        EXPECT_GE(*expression_loss(PixelMomentEmbedder(), a, b, PixelRect{0, 0, 16, 16}), 0);
        EXPECT_EQ(perceptual_loss(b, b), 0);
    }
}

TEST(Losses, WeightsValidation) {
    EXPECT_THROW((LossWeights{-1, 0, 0, 0, 0}.validate()), InvalidParameter);
    EXPECT_THROW((LossWeights{0, 0, 0, 0, 0}.validate()), InvalidParameter);
    EXPECT_THROW((LossWeights{std::nan(""), 1, 0, 0, 0}.validate()), InvalidParameter);
    EXPECT_NO_THROW(LossWeights{}.validate());
}

namespace {

struct Scene {
    Image<double> I, target, A, A_target, features, source;
    PixelRect box{4, 4, 16, 16};
    PixelMomentEmbedder emb;

    explicit Scene(std::uint64_t seed)
        : I(random_image(3, 24, 24, seed)), target(random_image(3, 24, 24, seed + 1)),
          A(random_image(1, 24, 24, seed + 2)), A_target(random_image(1, 24, 24, seed + 3)),
          features(random_image(3, 24, 24, seed + 4)), source(random_image(3, 24, 24, seed + 5)) {}

    LossInputs<double> inputs() const {
        LossInputs<double> in;
        in.rendered = &I;
        in.target = &target;
        in.alpha = &A;
        in.alpha_target = &A_target;
        in.stable_features = &features;
        in.source = &source;
        in.face_box = box;
        in.embedder = &emb;
        return in;
    }
};

} // namespace

TEST(TotalLoss, Examples) {
    const Scene s(20);
    auto in = s.inputs();
    in.target = &s.I;
    EXPECT_EQ(total_loss(LossMode::reconstruction, LossWeights{1, 0, 0, 0, 0}, in).total, 0.0);
    const auto t = total_loss(LossMode::reconstruction, LossWeights{1, 1, 0, 0, 0}, s.inputs());
    EXPECT_NEAR(t.total, recon_loss(s.I, s.target) + mask_loss(s.A, s.A_target), 1e-12);
}

TEST(TotalLoss, ComposesIndependentTerms) {
    const Scene s(30);
    const LossWeights w{0.7, 0.2, 0.3, 0.4, 0.9};
    const double recon = mean_abs(s.I, s.target, 3), mask = mean_abs(s.A, s.A_target, 1),
                 perc = pyramid_oracle(s.I, s.target, 3), stable = mean_abs(s.features, s.source, 3);
    const Eigen::VectorXd e1 = moment_oracle(crop(s.I, 4, 4, 16, 16)), e2 = moment_oracle(crop(s.source, 4, 4, 16, 16));
    const double expr = (e1 - e2).squaredNorm();
    const auto rec = total_loss(LossMode::reconstruction, w, s.inputs());
    EXPECT_NEAR(rec.total, w.recon * recon + w.mask * mask + w.perceptual * perc + w.stable * stable, 1e-10);
    const auto ed = total_loss(LossMode::edit, w, s.inputs());
    EXPECT_NEAR(ed.total, rec.total + w.expression * expr, 1e-10);
    EXPECT_NEAR(ed.expression, expr, 1e-10);
}

TEST(TotalLoss, LinearInWeights) {
    const Scene s(40);
    const LossWeights w{1, 0.1, 0.1, 0.5, 0.1};
    for (double c : {0.5, 2.0, 7.5}) {
        const double a = total_loss(LossMode::edit, w, s.inputs()).total;
        const double b = total_loss(LossMode::edit, w.scaled(c), s.inputs()).total;
        EXPECT_NEAR(b, c * a, 1e-12 * std::abs(b));
    }
}

TEST(TotalLoss, MissingInputsRejected) {
    const Scene s(50);
    auto in = s.inputs();
    in.alpha = nullptr;
    EXPECT_THROW(total_loss(LossMode::reconstruction, LossWeights{}, in), ConfigError);
    in = s.inputs();
    in.embedder = nullptr;
    EXPECT_NO_THROW(total_loss(LossMode::reconstruction, LossWeights{}, in));
    EXPECT_THROW(total_loss(LossMode::edit, LossWeights{}, in), ConfigError);
}

TEST(TotalLoss, GradientsMatchCentralDifferences) {
    Scene s(60);
    const LossWeights w{1, 0.3, 0.2, 0.5, 0.4};
    LossGrads<double> g;
    total_loss(LossMode::edit, w, s.inputs(), &g);
    check_gradient(
        [&](const Image<double>& x) {
            Scene t = s;
            t.I = x;
            return total_loss(LossMode::edit, w, t.inputs()).total;
        },
        s.I, g.rendered, 40, 1);
    check_gradient(
        [&](const Image<double>& x) {
            Scene t = s;
            t.A = x;
            return total_loss(LossMode::edit, w, t.inputs()).total;
        },
        s.A, g.alpha, 20, 2);
    check_gradient(
        [&](const Image<double>& x) {
            Scene t = s;
            t.features = x;
            return total_loss(LossMode::edit, w, t.inputs()).total;
        },
        s.features, g.stable_features, 20, 3);
}

TEST(TotalLoss, ExpressionGradientMatchesCentralDifferences) {
    Scene s(70);
    const LossWeights w{0, 0, 0, 0, 1};
    LossGrads<double> g;
    total_loss(LossMode::edit, w, s.inputs(), &g);
    check_gradient(
        [&](const Image<double>& x) {
            Scene t = s;
            t.I = x;
            return total_loss(LossMode::edit, w, t.inputs()).total;
        },
        s.I, g.rendered, 40, 4);
}
