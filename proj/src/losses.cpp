#include "ngf/losses.hpp"

#include "ngf/errors.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <string>

namespace ngf {

void LossWeights::validate() const {
    const double w[5] = {recon, mask, perceptual, stable, expression};
    bool any = false;
    for (double v : w) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidParameter("loss weights must be finite and non-negative");
        any |= v > 0.0;
    }
    if (!any) throw InvalidParameter("at least one loss weight must be positive");
}

namespace {

template <typename T> void require_same(const Image<T>& a, const Image<T>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ConfigError(std::string(what) + ": image shapes differ (" + std::to_string(a.channels) + "x" +
                          std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                          std::to_string(b.channels) + "x" + std::to_string(b.height) + "x" +
                          std::to_string(b.width) + ")");
    }
}

template <typename T> T sign(T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); }

// Mean |a - b| over `count` leading values of both buffers.
template <typename T>
double l1_raw(const T* a, const T* b, size_t count, T* grad, double scale) {
    double sum = 0;
    for (size_t i = 0; i < count; ++i) sum += std::abs(double(a[i]) - double(b[i]));
    if (grad) {
        const T g = T(scale / double(count));
        for (size_t i = 0; i < count; ++i) grad[i] += g * sign(a[i] - b[i]);
    }
    return sum / double(count);
}

} // namespace

template <typename T> double l1_loss(const Image<T>& a, const Image<T>& b, Image<T>* grad, double scale) {
    require_same(a, b, "l1_loss");
    if (a.data.empty()) throw ConfigError("l1_loss: empty image");
    if (grad && !grad->same_shape(a)) throw ConfigError("l1_loss: gradient buffer shape");
    return l1_raw(a.data.data(), b.data.data(), a.data.size(), grad ? grad->data.data() : nullptr, scale);
}

template <typename T>
double recon_loss(const Image<T>& rendered, const Image<T>& target, Image<T>* grad, double scale) {
    return l1_loss(rendered, target, grad, scale);
}

template <typename T> double mask_loss(const Image<T>& alpha, const Image<T>& target, Image<T>* grad, double scale) {
    if (alpha.channels != 1) throw ConfigError("mask_loss: expected a single-channel alpha image");
    return l1_loss(alpha, target, grad, scale);
}

template <typename T>
double stable_loss(const Image<T>& features, const Image<T>& source, Image<T>* grad, double scale) {
    if (features.channels < 3) throw ConfigError("stable_loss: need at least 3 feature planes");
    if (source.channels != 3 || !features.same_size(source)) throw ConfigError("stable_loss: source shape mismatch");
    if (grad && !grad->same_shape(features)) throw ConfigError("stable_loss: gradient buffer shape");
    return l1_raw(features.data.data(), source.data.data(), 3 * source.plane_size(),
                  grad ? grad->data.data() : nullptr, scale);
}

// ---------------------------------------------------------------------------
// Perceptual proxy

namespace {

template <typename T> Image<T> box_down(const Image<T>& img) {
    Image<T> out(img.channels, img.height / 2, img.width / 2);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x)
                out.at(c, y, x) = T(0.25) * (img.at(c, 2 * y, 2 * x) + img.at(c, 2 * y, 2 * x + 1) +
                                             img.at(c, 2 * y + 1, 2 * x) + img.at(c, 2 * y + 1, 2 * x + 1));
    return out;
}

template <typename T> void box_down_adjoint(const Image<T>& g, Image<T>& out) {
    for (int c = 0; c < g.channels; ++c)
        for (int y = 0; y < g.height; ++y)
            for (int x = 0; x < g.width; ++x) {
                const T v = T(0.25) * g.at(c, y, x);
                out.at(c, 2 * y, 2 * x) += v;
                out.at(c, 2 * y, 2 * x + 1) += v;
                out.at(c, 2 * y + 1, 2 * x) += v;
                out.at(c, 2 * y + 1, 2 * x + 1) += v;
            }
}

// Mean L1 of forward differences along x (axis 0) or y (axis 1).
template <typename T>
double diff_l1(const Image<T>& a, const Image<T>& b, int axis, Image<T>* grad, double scale) {
    const int dx = axis == 0 ? 1 : 0, dy = axis == 1 ? 1 : 0;
    const int h = a.height - dy, w = a.width - dx;
    if (h <= 0 || w <= 0) return 0.0;
    const double count = double(a.channels) * h * w;
    double sum = 0;
    const T g = T(scale / count);
    for (int c = 0; c < a.channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const T da = a.at(c, y + dy, x + dx) - a.at(c, y, x);
                const T db = b.at(c, y + dy, x + dx) - b.at(c, y, x);
                sum += std::abs(double(da) - double(db));
                if (grad) {
                    const T s = g * sign(da - db);
                    grad->at(c, y + dy, x + dx) += s;
                    grad->at(c, y, x) -= s;
                }
            }
    return sum / count;
}

template <typename T>
double pyramid_level(const Image<T>& a, const Image<T>& b, int remaining, Image<T>* grad, double scale) {
    double value = l1_loss(a, b, grad, scale) + diff_l1(a, b, 0, grad, scale) + diff_l1(a, b, 1, grad, scale);
    if (remaining > 1 && a.height >= 2 && a.width >= 2) {
        const Image<T> da = box_down(a), db = box_down(b);
        Image<T> g;
        if (grad) g = Image<T>(da.channels, da.height, da.width);
        value += pyramid_level(da, db, remaining - 1, grad ? &g : nullptr, scale);
        if (grad) box_down_adjoint(g, *grad);
    }
    return value;
}

template <typename T>
double pyramid(const Image<T>& a, const Image<T>& b, Image<T>* grad, double scale, int levels) {
    require_same(a, b, "perceptual_loss");
    if (grad && !grad->same_shape(a)) throw ConfigError("perceptual_loss: gradient buffer shape");
    return pyramid_level(a, b, levels, grad, scale);
}

} // namespace

double PyramidPerceptual::evaluate(const Image<double>& a, const Image<double>& b, Image<double>* grad,
                                   double scale) const {
    return pyramid(a, b, grad, scale, levels_);
}

double PyramidPerceptual::evaluate(const Image<float>& a, const Image<float>& b, Image<float>* grad,
                                   double scale) const {
    return pyramid(a, b, grad, scale, levels_);
}

template <typename T>
double perceptual_loss(const Image<T>& a, const Image<T>& b, Image<T>* grad, double scale,
                       const PerceptualMetric* metric) {
    static const PyramidPerceptual fallback;
    return (metric ? *metric : fallback).evaluate(a, b, grad, scale);
}

// ---------------------------------------------------------------------------
// Expression embedding

Image<double> ExpressionEmbedder::backward(const Image<double>&, const Eigen::VectorXd&) const {
    throw ConfigError("this expression embedder is not differentiable");
}

namespace {
constexpr double kLuma[3] = {0.299, 0.587, 0.114};
}

Eigen::VectorXd PixelMomentEmbedder::embed(const Image<double>& crop) const {
    if (crop.channels != 3) throw ConfigError("embedder expects an RGB crop");
    const Image<double> small =
        resample(crop, area_resample(crop.height, size_), area_resample(crop.width, size_));
    Eigen::VectorXd code(size_ * size_);
    for (int i = 0; i < size_ * size_; ++i)
        code[i] = kLuma[0] * small.data[i] + kLuma[1] * small.data[i + size_ * size_] +
                  kLuma[2] * small.data[i + 2 * size_ * size_];
    code.array() -= code.mean();
    return code;
}

Image<double> PixelMomentEmbedder::backward(const Image<double>& crop, const Eigen::VectorXd& dcode) const {
    const Eigen::VectorXd centered = dcode.array() - dcode.mean();
    Image<double> gsmall(3, size_, size_);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < size_ * size_; ++i) gsmall.data[c * size_ * size_ + i] = kLuma[c] * centered[i];
    return resample_adjoint(gsmall, area_resample(crop.height, size_), area_resample(crop.width, size_));
}

template <typename T>
Eigen::VectorXd face_embedding(const ExpressionEmbedder& embedder, const Image<T>& img, const PixelRect& box) {
    return embedder.embed(crop(img, box.x, box.y, box.w, box.h).template cast<double>());
}

template <typename T>
std::optional<double> expression_loss(const ExpressionEmbedder& embedder, const Image<T>& rendered,
                                      const Image<T>& source, const PixelRect& box, Image<T>* grad, double scale) {
    require_same(rendered, source, "expression_loss");
    if (box.w < kMinFaceBox || box.h < kMinFaceBox) {
        spdlog::warn("expression term skipped: face box {}x{} is below {} px", box.w, box.h, kMinFaceBox);
        return std::nullopt;
    }
    if (!box.inside(rendered.width, rendered.height)) throw InvalidParameter("face box lies outside the image");
    const Image<double> crop_r = crop(rendered, box.x, box.y, box.w, box.h).template cast<double>();
    const Eigen::VectorXd e1 = embedder.embed(crop_r);
    const Eigen::VectorXd e2 = face_embedding(embedder, source, box);
    if (e1.size() != e2.size()) throw ConfigError("embedder returned codes of different lengths");
    const Eigen::VectorXd diff = e1 - e2;
    if (grad && embedder.differentiable()) {
        const Image<double> g = embedder.backward(crop_r, 2.0 * scale * diff);
        for (int c = 0; c < g.channels; ++c)
            for (int y = 0; y < box.h; ++y)
                for (int x = 0; x < box.w; ++x) grad->at(c, box.y + y, box.x + x) += T(g.at(c, y, x));
    }
    return diff.squaredNorm();
}

// ---------------------------------------------------------------------------

template <typename T>
LossTerms total_loss(LossMode mode, const LossWeights& w, const LossInputs<T>& in, LossGrads<T>* grads) {
    w.validate();
    auto need = [](const Image<T>* p, const char* what) -> const Image<T>& {
        if (!p) throw ConfigError(std::string("total_loss: missing input ") + what);
        return *p;
    };
    LossTerms t;
    if (grads) {
        if (in.rendered) grads->rendered = Image<T>(in.rendered->channels, in.rendered->height, in.rendered->width);
        if (in.alpha) grads->alpha = Image<T>(1, in.alpha->height, in.alpha->width);
        if (in.stable_features) {
            grads->stable_features =
                Image<T>(in.stable_features->channels, in.stable_features->height, in.stable_features->width);
        }
    }
    Image<T>* gI = grads ? &grads->rendered : nullptr;
    if (w.recon > 0) t.recon = recon_loss(need(in.rendered, "rendered"), need(in.target, "target"), gI, w.recon);
    if (w.mask > 0) {
        t.mask = mask_loss(need(in.alpha, "alpha"), need(in.alpha_target, "alpha_target"),
                           grads ? &grads->alpha : nullptr, w.mask);
    }
    if (w.perceptual > 0) {
        t.perceptual = perceptual_loss(need(in.rendered, "rendered"), need(in.target, "target"), gI, w.perceptual,
                                       in.perceptual);
    }
    if (w.stable > 0) {
        t.stable = stable_loss(need(in.stable_features, "stable_features"), need(in.source, "source"),
                               grads ? &grads->stable_features : nullptr, w.stable);
    }
    if (mode == LossMode::edit && w.expression > 0) {
        if (!in.embedder) throw ConfigError("total_loss: missing expression embedder");
        if (!in.face_box) throw ConfigError("total_loss: missing face box");
        auto v = expression_loss(*in.embedder, need(in.rendered, "rendered"), need(in.source, "source"), *in.face_box,
                                 gI, w.expression);
        t.expression = v.value_or(0.0);
        t.expression_skipped = !v.has_value();
    }
    t.total = w.recon * t.recon + w.mask * t.mask + w.perceptual * t.perceptual + w.stable * t.stable;
    if (mode == LossMode::edit) t.total += w.expression * t.expression;
    return t;
}

#define NGF_INSTANTIATE(T)                                                                                     \
    template double l1_loss(const Image<T>&, const Image<T>&, Image<T>*, double);                              \
    template double recon_loss(const Image<T>&, const Image<T>&, Image<T>*, double);                           \
    template double mask_loss(const Image<T>&, const Image<T>&, Image<T>*, double);                            \
    template double stable_loss(const Image<T>&, const Image<T>&, Image<T>*, double);                          \
    template double perceptual_loss(const Image<T>&, const Image<T>&, Image<T>*, double,                       \
                                    const PerceptualMetric*);                                                  \
    template Eigen::VectorXd face_embedding(const ExpressionEmbedder&, const Image<T>&, const PixelRect&);      \
    template std::optional<double> expression_loss(const ExpressionEmbedder&, const Image<T>&, const Image<T>&, \
                                                   const PixelRect&, Image<T>*, double);                       \
    template LossTerms total_loss(LossMode, const LossWeights&, const LossInputs<T>&, LossGrads<T>*);

NGF_INSTANTIATE(float)
NGF_INSTANTIATE(double)

} // namespace ngf
