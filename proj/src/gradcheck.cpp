#include "ngf/gradcheck.hpp"

#include "ngf/errors.hpp"
#include "ngf/field.hpp"
#include "ngf/losses.hpp"
#include "ngf/renderer.hpp"
#include "ngf/splatter.hpp"
#include "ngf/synthetic.hpp"
#include "ngf/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <random>

namespace ngf {

double five_point_difference(const std::function<double(double)>& f, double h) {
    return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h);
}

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

bool GradcheckReport::passed() const {
    for (const auto& c : classes)
        if (!c.passed) return false;
    return !classes.empty();
}

std::string GradcheckReport::to_json() const {
    nlohmann::json j;
    j["passed"] = passed();
    j["seconds"] = seconds;
    j["classes"] = nlohmann::json::array();
    for (const auto& c : classes) {
        j["classes"].push_back({{"name", c.name},
                                {"probes", c.probes},
                                {"resampled", c.resampled},
                                {"max_rel_err", c.max_rel_err},
                                {"tolerance", c.tolerance},
                                {"worst", c.worst},
                                {"passed", c.passed}});
    }
    return j.dump(2);
}

namespace {

using Signature = std::vector<std::int64_t>;
using Rng = std::mt19937_64;

/// One random instance of a class: a 64-bit objective along coordinate k,
/// and the analytic gradient at the base point.
struct Instance {
    int dims{0};
    std::function<double(int k, double t, Signature* sig)> value;
    std::vector<double> analytic;
    bool check_kinks{false}; // compare several step sizes to detect kinks without a signature
};

struct ClassSpec {
    std::string name;
    double tolerance;
    double floor_rel; // floor of the relative error, as a fraction of the largest gradient entry
    int per_instance;
    std::function<Instance(Rng&)> make;
};

GradcheckClass run_class(const ClassSpec& spec, const GradcheckOptions& opt, Rng& rng) {
    GradcheckClass out;
    out.name = spec.name;
    out.tolerance = spec.tolerance;
    const int max_resample = 20 * opt.probes;
    while (out.probes < opt.probes) {
        const Instance inst = spec.make(rng);
        double gmax = 0;
        for (double a : inst.analytic) gmax = std::max(gmax, std::abs(a));
        const double floor = std::max(spec.floor_rel * gmax, 1e-300);
        std::vector<int> live;
        for (int k = 0; k < inst.dims; ++k)
            if (std::abs(inst.analytic[k]) >= floor) live.push_back(k);
        Signature base;
        inst.value(0, 0.0, &base);
        int used = 0;
        while (used < spec.per_instance && out.probes < opt.probes) {
            if (out.resampled > max_resample) {
                out.worst = "too many probes hit non-smooth points";
                out.passed = false;
                return out;
            }
            // Mostly probe coordinates with a visible gradient; some anywhere.
            const bool any = live.empty() || std::uniform_real_distribution<double>(0, 1)(rng) < 0.1;
            const int k = any ? std::uniform_int_distribution<int>(0, inst.dims - 1)(rng)
                              : live[std::uniform_int_distribution<size_t>(0, live.size() - 1)(rng)];
            bool smooth = true;
            for (double t : {opt.h, -opt.h, 2 * opt.h, -2 * opt.h}) {
                Signature s;
                inst.value(k, t, &s);
                if (s != base) smooth = false;
            }
            auto f = [&](double t) { return inst.value(k, t, nullptr); };
            const double numeric = five_point_difference(f, opt.h);
            if (smooth && inst.check_kinks) {
                // A kink inside the stencil makes the estimate depend on the step.
                for (double scale : {0.5, 0.25}) {
                    const double other = five_point_difference(f, opt.h * scale);
                    if (relative_error(numeric, other, floor) > 0.01 * spec.tolerance) smooth = false;
                }
            }
            if (!smooth) {
                ++out.resampled;
                ++used;
                continue;
            }
            const double err = relative_error(inst.analytic[k], numeric, floor);
            if (err >= out.max_rel_err) {
                out.max_rel_err = err;
                out.worst = "coordinate " + std::to_string(k) + ": analytic " + std::to_string(inst.analytic[k]) +
                            ", numeric " + std::to_string(numeric);
            }
            ++out.probes;
            ++used;
        }
    }
    out.passed = out.max_rel_err < spec.tolerance;
    return out;
}

template <typename T> Quaternion<T> random_quat(Rng& rng) {
    std::normal_distribution<double> n(0, 1);
    Vec4<double> c(n(rng), n(rng), n(rng), n(rng));
    while (c.norm() < 0.3) c = Vec4<double>(n(rng), n(rng), n(rng), n(rng));
    return Quaternion<double>::from_coeffs(c).template cast<T>();
}

double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
double gauss(Rng& rng, double s = 1) { return std::normal_distribution<double>(0, s)(rng); }

template <typename T> Image<T> random_image(Rng& rng, int c, int h, int w, double lo, double hi) {
    Image<T> img(c, h, w);
    for (auto& v : img.data) v = T(uniform(rng, lo, hi));
    return img;
}

template <typename T> double dot(const Image<T>& a, const Image<double>& w) {
    double s = 0;
    for (size_t i = 0; i < a.data.size(); ++i) s += double(a.data[i]) * w.data[i];
    return s;
}

Signature flatten(const BlendStructure& s) {
    Signature out;
    for (const auto& p : s.pixels) {
        out.insert(out.end(), p.begin(), p.end());
        out.push_back(std::numeric_limits<std::int64_t>::max());
    }
    return out;
}

template <typename T> void append_signs(const DecodeCache<T>& cache, Signature& sig) {
    for (int l = 0; l < 3; ++l) {
        std::int64_t word = 0;
        int bits = 0;
        for (Eigen::Index i = 0; i < cache.pre[l].size(); ++i) {
            const T z = cache.pre[l].data()[i];
            const bool bit = l < 2 ? z > T(0) : std::abs(z) < T(kOutputLogitClamp);
            word = (word << 1) | (bit ? 1 : 0);
            if (++bits == 62) {
                sig.push_back(word);
                word = 0;
                bits = 0;
            }
        }
        sig.push_back(word);
    }
}

// ---------------------------------------------------------------------------
// Covariance and projection

struct CovParams {
    Vec4<double> q;
    Vec3<double> s;
};

template <typename T> std::vector<double> covariance_grad(const CovParams& p, const Mat3<double>& W, bool rotation) {
    const Quaternion<T> q = Quaternion<double>::from_coeffs(p.q).template cast<T>();
    const Vec3<T> s = p.s.cast<T>();
    const CovarianceGrad<T> g = covariance_backward(quat_to_rotation(q), s, Mat3<T>(W.cast<T>()));
    if (!rotation) return {double(g.ds[0]), double(g.ds[1]), double(g.ds[2])};
    const Vec4<T> dq = quat_to_rotation_backward(q, g.dR);
    return {double(dq[0]), double(dq[1]), double(dq[2]), double(dq[3])};
}

template <typename T> ClassSpec covariance_class(bool rotation) {
    const bool f32 = std::is_same_v<T, float>;
    return {std::string("covariance/") + (rotation ? "rotation" : "scale") + (f32 ? " (f32)" : " (f64)"),
            f32 ? 1e-3 : 1e-4, f32 ? 1e-4 : 1e-8, 10, [rotation](Rng& rng) {
                CovParams p{random_quat<double>(rng).coeffs(), {uniform(rng, 0.1, 1), uniform(rng, 0.1, 1),
                                                                 uniform(rng, 0.1, 1)}};
                Mat3<double> W;
                for (int i = 0; i < 9; ++i) W.data()[i] = gauss(rng);
                W = (0.5 * (W + W.transpose())).eval();
                Instance inst;
                inst.dims = rotation ? 4 : 3;
                inst.analytic = covariance_grad<T>(p, W, rotation);
                inst.value = [p, W, rotation](int k, double t, Signature*) {
                    CovParams q = p;
                    (rotation ? q.q[k] : q.s[k]) += t;
                    return (build_covariance(Quaternion<double>::from_coeffs(q.q), q.s).cwiseProduct(W)).sum();
                };
                return inst;
            }};
}

template <typename T> ClassSpec projection_class(bool position) {
    const bool f32 = std::is_same_v<T, float>;
    return {std::string("projection/") + (position ? "position" : "covariance") + (f32 ? " (f32)" : " (f64)"),
            f32 ? 1e-3 : 1e-4, f32 ? 1e-4 : 1e-8, 10, [position](Rng& rng) {
                Camera cam = default_camera(64, 48);
                cam.world_to_camera.block<3, 3>(0, 0) = quat_to_rotation(Quaternion<double>{1, 0.1, -0.05, 0.02});
                const Vec3<double> x0(uniform(rng, -0.5, 0.5), uniform(rng, -0.4, 0.4), uniform(rng, 2, 4));
                const Mat3<double> sigma =
                    build_covariance(random_quat<double>(rng), Vec3<double>(uniform(rng, 0.3, 1.0),
                                                                            uniform(rng, 0.3, 1.0),
                                                                            uniform(rng, 0.3, 1.0)));
                const Vec2<double> wm(gauss(rng), gauss(rng));
                const Vec3<double> wc(gauss(rng), gauss(rng), gauss(rng));
                // Symmetric perturbations of the covariance: (i, j) and (j, i) together.
                static constexpr int pairs[6][2] = {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}};
                const ProjectedGaussian<T> proj =
                    project_gaussian<T>(x0.cast<T>(), sigma.cast<T>(), cam, T(kCovariance2dFloor), T(kNearPlane));
                const ProjectionGrad<T> g = project_gaussian_backward(proj, cam, Vec2<T>(wm.cast<T>()),
                                                                      Vec3<T>(wc.cast<T>()));
                Instance inst;
                inst.dims = position ? 3 : 6;
                for (int k = 0; k < inst.dims; ++k) {
                    if (position) {
                        inst.analytic.push_back(double(g.dx0[k]));
                    } else {
                        const int i = pairs[k][0], j = pairs[k][1];
                        inst.analytic.push_back(i == j ? double(g.dsigma(i, i))
                                                       : double(g.dsigma(i, j)) + double(g.dsigma(j, i)));
                    }
                }
                inst.value = [=](int k, double t, Signature*) {
                    Vec3<double> x = x0;
                    Mat3<double> s = sigma;
                    if (position) {
                        x[k] += t;
                    } else {
                        const int i = pairs[k][0], j = pairs[k][1];
                        s(i, j) += t;
                        if (i != j) s(j, i) += t;
                    }
                    const auto p = project_gaussian<double>(x, s, cam);
                    return wm.dot(p.mean) + wc.dot(p.conic);
                };
                return inst;
            }};
}

// ---------------------------------------------------------------------------
// Rasterizer

struct RasterScene {
    Camera cam;
    Vertices<double> position;
    std::vector<Vec4<double>> q;
    std::vector<Vec3<double>> s;
    VectorX<double> opacity;
    MatrixRX<double> features;
    Image<double> weight; // upstream gradient

    template <typename T> FrameGaussians<T> gaussians() const {
        const int n = static_cast<int>(position.rows());
        FrameGaussians<double> g{position, {}, opacity, features, std::vector<std::uint8_t>(n, 1)};
        for (int i = 0; i < n; ++i) g.covariance.push_back(build_covariance(Quaternion<double>::from_coeffs(q[i]), s[i]));
        return g.template cast<T>();
    }
};

enum class RasterAttr { position, rotation, scale, opacity, features };

RasterScene make_raster_scene(Rng& rng) {
    RasterScene sc;
    sc.cam = default_camera(40, 32);
    const int n = 50, K = 4;
    const FrameGaussians<double> base = random_scene(n, K, sc.cam, rng(), 0.03, 0.15);
    sc.position = base.position;
    sc.opacity = base.opacity;
    sc.features = base.features;
    for (int i = 0; i < n; ++i) {
        sc.q.push_back(random_quat<double>(rng).coeffs());
        sc.s.push_back({uniform(rng, 0.03, 0.15), uniform(rng, 0.03, 0.15), uniform(rng, 0.03, 0.15)});
    }
    sc.weight = Image<double>(K + 1, sc.cam.height, sc.cam.width);
    for (auto& v : sc.weight.data) v = gauss(rng);
    return sc;
}

int raster_dims(const RasterScene& sc, RasterAttr a) {
    const int n = static_cast<int>(sc.position.rows());
    switch (a) {
    case RasterAttr::position: return 3 * n;
    case RasterAttr::rotation: return 4 * n;
    case RasterAttr::scale: return 3 * n;
    case RasterAttr::opacity: return n;
    case RasterAttr::features: return n * static_cast<int>(sc.features.cols());
    }
    return 0;
}

double& raster_coord(RasterScene& sc, RasterAttr a, int k) {
    const int K = static_cast<int>(sc.features.cols());
    switch (a) {
    case RasterAttr::position: return sc.position(k / 3, k % 3);
    case RasterAttr::rotation: return sc.q[k / 4][k % 4];
    case RasterAttr::scale: return sc.s[k / 3][k % 3];
    case RasterAttr::opacity: return sc.opacity[k];
    case RasterAttr::features: return sc.features(k / K, k % K);
    }
    throw ContractViolation("bad raster attribute");
}

template <typename T> std::vector<double> raster_grad(const RasterScene& sc, RasterAttr a) {
    const FrameGaussians<T> g = sc.gaussians<T>();
    SplatWorkspace<T> ws;
    rasterize_forward(g, sc.cam, ws);
    const GaussianGrad<T> d = rasterize_backward(g, sc.cam, ws, sc.weight.template cast<T>());
    std::vector<double> out;
    const int n = g.size();
    switch (a) {
    case RasterAttr::position:
        for (int i = 0; i < 3 * n; ++i) out.push_back(double(d.position.data()[i]));
        break;
    case RasterAttr::opacity:
        for (int i = 0; i < n; ++i) out.push_back(double(d.opacity[i]));
        break;
    case RasterAttr::features:
        for (Eigen::Index i = 0; i < d.features.size(); ++i) out.push_back(double(d.features.data()[i]));
        break;
    case RasterAttr::rotation:
    case RasterAttr::scale:
        for (int i = 0; i < n; ++i) {
            const Quaternion<T> q = Quaternion<double>::from_coeffs(sc.q[i]).template cast<T>();
            const CovarianceGrad<T> cg = covariance_backward(quat_to_rotation(q), Vec3<T>(sc.s[i].cast<T>()),
                                                             d.covariance[i]);
            if (a == RasterAttr::scale) {
                for (int j = 0; j < 3; ++j) out.push_back(double(cg.ds[j]));
            } else {
                const Vec4<T> dq = quat_to_rotation_backward(q, cg.dR);
                for (int j = 0; j < 4; ++j) out.push_back(double(dq[j]));
            }
        }
        break;
    }
    return out;
}

template <typename T> ClassSpec raster_class(RasterAttr a, const char* label) {
    const bool f32 = std::is_same_v<T, float>;
    return {std::string("raster/") + label + (f32 ? " (f32)" : " (f64)"), f32 ? 1e-3 : 1e-4, f32 ? 1e-4 : 1e-8, 25,
            [a](Rng& rng) {
                const RasterScene sc = make_raster_scene(rng);
                Instance inst;
                inst.dims = raster_dims(sc, a);
                inst.analytic = raster_grad<T>(sc, a);
                inst.value = [sc, a](int k, double t, Signature* sig) {
                    RasterScene p = sc;
                    raster_coord(p, a, k) += t;
                    SplatWorkspace<double> ws;
                    const auto img = rasterize_forward(p.gaussians<double>(), p.cam, ws);
                    if (sig) *sig = flatten(blend_structure(ws));
                    return dot(img, p.weight);
                };
                return inst;
            }};
}

// ---------------------------------------------------------------------------
// Decoder

struct DecodeScene {
    RendererWeights<double> weights;
    FeatureImage<double> input;
    Image<double> weight;
};

template <typename T> ClassSpec decode_class(bool params) {
    const bool f32 = std::is_same_v<T, float>;
    return {std::string("decode/") + (params ? "weights" : "input") + (f32 ? " (f32)" : " (f64)"),
            f32 ? 1e-3 : 1e-5, f32 ? 1e-4 : 1e-8, 25, [params](Rng& rng) {
                const int K = 4, H = 16, W = 16;
                DecodeScene sc{init_renderer<double>(K, rng(), 8), FeatureImage<double>(K + 1, H, W),
                               Image<double>(3, H, W)};
                for (auto& v : sc.weights.params) v += gauss(rng, 0.2);
                for (auto& v : sc.input.data) v = gauss(rng);
                for (auto& v : sc.weight.data) v = gauss(rng);
                Instance inst;
                inst.dims = params ? static_cast<int>(sc.weights.params.size()) : K * H * W;
                {
                    const RendererWeights<T> w = sc.weights.template cast<T>();
                    DecodeCache<T> cache;
                    decode(w, sc.input.template cast<T>(), &cache);
                    const DecodeGrad<T> g = decode_backward(w, cache, sc.weight.template cast<T>());
                    if (params) {
                        inst.analytic.assign(g.params.begin(), g.params.end());
                    } else {
                        inst.analytic.assign(g.input.data.begin(), g.input.data.begin() + K * H * W);
                    }
                }
                inst.value = [sc, params](int k, double t, Signature* sig) {
                    DecodeScene p = sc;
                    (params ? p.weights.params[k] : p.input.data[k]) += t;
                    DecodeCache<double> cache;
                    const auto out = decode(p.weights, p.input, &cache);
                    if (sig) append_signs(cache, *sig);
                    return dot(out, p.weight);
                };
                return inst;
            }};
}

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { recon, mask, perceptual, stable, expression };

template <typename T> double eval_loss(LossKind kind, const Image<T>& a, const Image<T>& b, Image<T>* grad) {
    static const PixelMomentEmbedder embedder;
    switch (kind) {
    case LossKind::recon: return recon_loss(a, b, grad);
    case LossKind::mask: return mask_loss(a, b, grad);
    case LossKind::perceptual: return perceptual_loss(a, b, grad);
    case LossKind::stable: return stable_loss(a, b, grad);
    case LossKind::expression: return *expression_loss(embedder, a, b, PixelRect{3, 2, 16, 17}, grad);
    }
    return 0;
}

template <typename T> ClassSpec loss_class(LossKind kind, const char* label) {
    const bool f32 = std::is_same_v<T, float>;
    return {std::string("loss/") + label + (f32 ? " (f32)" : " (f64)"), f32 ? 1e-3 : 1e-4, f32 ? 1e-4 : 1e-8, 25,
            [kind](Rng& rng) {
                const int H = 22, W = 20;
                const int ch = kind == LossKind::mask ? 1 : 3;
                const int ach = kind == LossKind::stable ? 5 : ch;
                const Image<double> a = random_image<double>(rng, ach, H, W, 0, 1);
                const Image<double> b = random_image<double>(rng, ch, H, W, 0, 1);
                Instance inst;
                inst.dims = static_cast<int>(a.data.size());
                Image<T> g(ach, H, W);
                eval_loss<T>(kind, a.template cast<T>(), b.template cast<T>(), &g);
                inst.analytic.assign(g.data.begin(), g.data.end());
                inst.check_kinks = kind != LossKind::expression;
                inst.value = [a, b, kind](int k, double t, Signature*) {
                    Image<double> p = a;
                    p.data[k] += t;
                    return eval_loss<double>(kind, p, b, nullptr);
                };
                return inst;
            }};
}

// ---------------------------------------------------------------------------
// Full frame chain: rig -> embed -> rasterize -> decode -> composite -> losses

struct ChainScene {
    const Rig* rig{nullptr};
    Camera cam;
    NeuralGaussianField<double> field;
    Vertices<double> delta;
    RendererWeights<double> renderer;
    BodyParams<double> params;
    Image<double> target, source, alpha_target;
    PixelRect face_box;
};

enum class ChainAttr { features, opacity, scale, rotation, delta, renderer, beta, theta, psi };

const Rig& chain_rig() {
    static const Rig rig = make_sphere_head_rig();
    return rig;
}

ChainScene make_chain_scene(Rng& rng) {
    ChainScene sc;
    sc.rig = &chain_rig();
    const Rig& rig = *sc.rig;
    sc.cam = synthetic_camera(16, 16);
    const int n = 5, K = 4;
    std::vector<int> front;
    for (int f = 0; f < rig.num_faces(); ++f) {
        Vec3<double> c = Vec3<double>::Zero();
        for (int v : rig.faces[f]) c += rig.template_vertices.row(v).transpose();
        c /= 3;
        if (c.z() < -0.6) front.push_back(f);
    }
    sc.field.resolution = 64;
    sc.field.num_features = K;
    sc.field.features.resize(n, K);
    sc.field.opacity_logit.resize(n);
    sc.field.log_scale.resize(n, 3);
    sc.field.rotation.resize(n, 4);
    for (int i = 0; i < n; ++i) {
        sc.field.texel.push_back(i);
        double b0 = uniform(rng, 0.1, 1), b1 = uniform(rng, 0.1, 1), b2 = uniform(rng, 0.1, 1);
        const double sum = b0 + b1 + b2;
        sc.field.surface.push_back(
            {front[std::uniform_int_distribution<size_t>(0, front.size() - 1)(rng)], {b0 / sum, b1 / sum, b2 / sum}});
        for (int k = 0; k < K; ++k) sc.field.features(i, k) = uniform(rng, 0, 1);
        sc.field.opacity_logit[i] = gauss(rng);
        for (int j = 0; j < 3; ++j) sc.field.log_scale(i, j) = std::log(uniform(rng, 0.1, 0.3));
        sc.field.rotation.row(i) = random_quat<double>(rng).coeffs().transpose();
    }
    sc.delta = Vertices<double>(rig.num_vertices(), 3);
    for (Eigen::Index i = 0; i < sc.delta.size(); ++i) sc.delta.data()[i] = gauss(rng, 0.01);
    sc.renderer = init_renderer<double>(K, rng(), 4);
    for (auto& v : sc.renderer.params) v += gauss(rng, 0.2);
    sc.params = BodyParams<double>::zeros(rig);
    for (Eigen::Index i = 0; i < sc.params.beta.size(); ++i) sc.params.beta[i] = gauss(rng, 0.3);
    for (Eigen::Index i = 0; i < sc.params.psi.size(); ++i) sc.params.psi[i] = gauss(rng, 0.3);
    for (Eigen::Index i = 0; i < sc.params.theta.size(); ++i) sc.params.theta.data()[i] = gauss(rng, 0.1);
    sc.target = random_image<double>(rng, 3, 16, 16, 0, 1);
    sc.source = random_image<double>(rng, 3, 16, 16, 0, 1);
    sc.alpha_target = random_image<double>(rng, 1, 16, 16, 0, 1);
    sc.face_box = {4, 3, 8, 9};
    return sc;
}

struct ChainGrad {
    FieldGrad<double> field;
    std::vector<double> renderer;
    RigGradient<double> rig;
};

const Vec3<double> kChainBackground(1.0, 0.9, 0.8);

/// Loss of the frame chain in precision T; gradients when `grad` is set.
template <typename T> double chain_loss(const ChainScene& sc, ChainGrad* grad, Signature* sig) {
    static const PixelMomentEmbedder embedder;
    const Rig& rig = *sc.rig;
    const NeuralGaussianField<T> field = sc.field.template cast<T>();
    const Vertices<T> delta = sc.delta.template cast<T>();
    const RendererWeights<T> renderer = sc.renderer.template cast<T>();
    const BodyParams<T> params = sc.params.template cast<T>();
    const Vertices<T> verts = deformed_mesh(rig, params, delta);
    const FrameGaussians<T> g = embed(field, verts, rig);
    SplatWorkspace<T> ws;
    const FeatureImage<T> IF = rasterize_forward(g, sc.cam, ws);
    Composite<T> comp;
    composite(IF, &renderer, kChainBackground, comp);
    if (sig) {
        *sig = flatten(blend_structure(ws));
        append_signs(comp.cache, *sig);
    }
    const Image<T> target = sc.target.template cast<T>(), source = sc.source.template cast<T>(),
                   alpha_target = sc.alpha_target.template cast<T>();
    LossInputs<T> in;
    in.rendered = &comp.rgb;
    in.target = &target;
    in.alpha = &comp.alpha;
    in.alpha_target = &alpha_target;
    in.stable_features = &comp.stable;
    in.source = &source;
    in.face_box = sc.face_box;
    in.embedder = &embedder;
    LossGrads<T> lg;
    const LossWeights weights{1.0, 0.3, 0.2, 0.5, 0.4};
    const LossTerms terms = total_loss(LossMode::edit, weights, in, grad ? &lg : nullptr);
    if (grad) {
        std::vector<T> drenderer;
        const FeatureImage<T> dIF = composite_backward(IF, &renderer, kChainBackground, comp, lg, &drenderer);
        const GaussianGrad<T> dg = rasterize_backward(g, sc.cam, ws, dIF);
        FieldGrad<T> df = FieldGrad<T>::zeros(field);
        const Vertices<T> dverts = embed_backward(field, verts, rig, dg, df);
        const RigGradient<T> rg = deformed_mesh_backward(rig, params, delta, dverts);
        grad->field = {df.features.template cast<double>(), df.opacity_logit.template cast<double>(),
                       df.log_scale.template cast<double>(), df.rotation.template cast<double>()};
        grad->renderer.assign(drenderer.begin(), drenderer.end());
        grad->rig = {rg.beta.template cast<double>(), rg.theta.template cast<double>(), rg.psi.template cast<double>(),
                     rg.delta.template cast<double>()};
    }
    return terms.total;
}

template <typename M> std::vector<double> flat(const M& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

double* chain_data(ChainScene& sc, ChainAttr a) {
    switch (a) {
    case ChainAttr::features: return sc.field.features.data();
    case ChainAttr::opacity: return sc.field.opacity_logit.data();
    case ChainAttr::scale: return sc.field.log_scale.data();
    case ChainAttr::rotation: return sc.field.rotation.data();
    case ChainAttr::delta: return sc.delta.data();
    case ChainAttr::renderer: return sc.renderer.params.data();
    case ChainAttr::beta: return sc.params.beta.data();
    case ChainAttr::theta: return sc.params.theta.data();
    case ChainAttr::psi: return sc.params.psi.data();
    }
    return nullptr;
}

std::vector<double> chain_select(const ChainGrad& g, ChainAttr a) {
    switch (a) {
    case ChainAttr::features: return flat(g.field.features);
    case ChainAttr::opacity: return flat(g.field.opacity_logit);
    case ChainAttr::scale: return flat(g.field.log_scale);
    case ChainAttr::rotation: return flat(g.field.rotation);
    case ChainAttr::delta: return flat(g.rig.delta);
    case ChainAttr::renderer: return g.renderer;
    case ChainAttr::beta: return flat(g.rig.beta);
    case ChainAttr::theta: return flat(g.rig.theta);
    case ChainAttr::psi: return flat(g.rig.psi);
    }
    return {};
}

template <typename T> ClassSpec chain_class(ChainAttr a, const char* label) {
    const bool f32 = std::is_same_v<T, float>;
    return {std::string("chain/") + label + (f32 ? " (f32)" : " (f64)"), f32 ? 1e-3 : 1e-4, f32 ? 1e-4 : 1e-8, 10,
            [a](Rng& rng) {
                const ChainScene sc = make_chain_scene(rng);
                ChainGrad g;
                chain_loss<T>(sc, &g, nullptr);
                Instance inst;
                inst.analytic = chain_select(g, a);
                inst.dims = static_cast<int>(inst.analytic.size());
                inst.check_kinks = true;
                inst.value = [sc, a](int k, double t, Signature* sig) {
                    ChainScene p = sc;
                    chain_data(p, a)[k] += t;
                    return chain_loss<double>(p, nullptr, sig);
                };
                return inst;
            }};
}

template <typename T> void add_classes(std::vector<ClassSpec>& out) {
    out.push_back(covariance_class<T>(true));
    out.push_back(covariance_class<T>(false));
    out.push_back(projection_class<T>(true));
    out.push_back(projection_class<T>(false));
    out.push_back(raster_class<T>(RasterAttr::position, "position"));
    out.push_back(raster_class<T>(RasterAttr::rotation, "rotation"));
    out.push_back(raster_class<T>(RasterAttr::scale, "scale"));
    out.push_back(raster_class<T>(RasterAttr::opacity, "opacity"));
    out.push_back(raster_class<T>(RasterAttr::features, "features"));
    out.push_back(decode_class<T>(true));
    out.push_back(decode_class<T>(false));
    out.push_back(loss_class<T>(LossKind::recon, "recon"));
    out.push_back(loss_class<T>(LossKind::mask, "mask"));
    out.push_back(loss_class<T>(LossKind::perceptual, "perceptual"));
    out.push_back(loss_class<T>(LossKind::stable, "stable"));
    out.push_back(loss_class<T>(LossKind::expression, "expression"));
    out.push_back(chain_class<T>(ChainAttr::features, "features"));
    out.push_back(chain_class<T>(ChainAttr::opacity, "opacity"));
    out.push_back(chain_class<T>(ChainAttr::scale, "scale"));
    out.push_back(chain_class<T>(ChainAttr::rotation, "rotation"));
    out.push_back(chain_class<T>(ChainAttr::delta, "delta"));
    out.push_back(chain_class<T>(ChainAttr::renderer, "renderer"));
    out.push_back(chain_class<T>(ChainAttr::beta, "beta"));
    out.push_back(chain_class<T>(ChainAttr::theta, "theta"));
    out.push_back(chain_class<T>(ChainAttr::psi, "psi"));
}

} // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
    if (options.probes < 1) throw InvalidParameter("gradcheck: probes must be positive");
    if (!(options.h > 0)) throw InvalidParameter("gradcheck: step must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ClassSpec> specs;
    add_classes<double>(specs);
    if (options.single_precision) add_classes<float>(specs);
    GradcheckReport report;
    for (size_t i = 0; i < specs.size(); ++i) {
        if (!options.filter.empty() && specs[i].name.find(options.filter) == std::string::npos) continue;
        Rng rng(options.seed * 1000003ull + i);
        report.classes.push_back(run_class(specs[i], options, rng));
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace ngf
