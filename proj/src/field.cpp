#include "ngf/field.hpp"

#include "ngf/errors.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <random>

namespace ngf {

template <typename T>
NeuralGaussianField<T> init_field(const Rig& rig, int resolution, int num_features, std::uint64_t seed) {
    if (resolution < 8) throw InvalidParameter("field resolution must be at least 8");
    if (num_features < 3) throw InvalidParameter("field needs at least 3 feature channels");
    for (int f = 0; f < rig.num_faces(); ++f) {
        const auto& t = rig.uv[f];
        const double area = 0.5 * std::abs((t[1] - t[0]).x() * (t[2] - t[0]).y() - (t[1] - t[0]).y() * (t[2] - t[0]).x());
        if (area < 1e-14) throw ValidationError("uv_coords[" + std::to_string(f) + "]: zero-area UV triangle");
    }
    NeuralGaussianField<T> field;
    field.resolution = resolution;
    field.num_features = num_features;
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
            const Vec2<double> uv{(x + 0.5) / resolution, (y + 0.5) / resolution};
            if (auto hit = rig.locator().locate(uv)) {
                field.texel.push_back(y * resolution + x);
                field.surface.push_back(*hit);
            }
        }
    const int n = field.num_active();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.1);
    field.features.resize(n, num_features);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < num_features; ++k) field.features(i, k) = k < 3 ? T(0.5) : T(normal(rng));
    field.opacity_logit = VectorX<T>::Constant(n, T(std::log(kInitOpacity / (1.0 - kInitOpacity))));
    const double texel_world = rig.mean_edge_length() / rig.mean_uv_edge_length() / resolution;
    field.log_scale = Vertices<T>::Constant(n, 3, T(std::log(kInitScaleTexels * texel_world)));
    field.rotation = Quats<T>::Zero(n, 4);
    field.rotation.col(0).setOnes();
    return field;
}

template <typename T> FrameGaussians<T> FrameGaussians<T>::zeros(int n, int k) {
    return {Vertices<T>::Zero(n, 3), std::vector<Mat3<T>>(n, Mat3<T>::Zero()), VectorX<T>::Zero(n),
            MatrixRX<T>::Zero(n, k), std::vector<std::uint8_t>(n, 1)};
}

template <typename T> GaussianGrad<T> GaussianGrad<T>::zeros(int n, int k) {
    return {Vertices<T>::Zero(n, 3), std::vector<Mat3<T>>(n, Mat3<T>::Zero()), VectorX<T>::Zero(n),
            MatrixRX<T>::Zero(n, k)};
}

template <typename T> FieldGrad<T> FieldGrad<T>::zeros(const NeuralGaussianField<T>& field) {
    const int n = field.num_active();
    return {MatrixRX<T>::Zero(n, field.num_features), VectorX<T>::Zero(n), Vertices<T>::Zero(n, 3),
            Quats<T>::Zero(n, 4)};
}

namespace {

constexpr double kMinFaceArea = 1e-12;

// Tangent and bitangent are linear in the two posed edges:
// T = a1 e1 + a2 e2, B = b1 e1 + b2 e2.
struct UvSolve {
    double a1, a2, b1, b2;
};

UvSolve uv_solve(const Rig& rig, int face) {
    const auto& uv = rig.uv[face];
    const Vec2<double> d1 = uv[1] - uv[0], d2 = uv[2] - uv[0];
    const double det = d1.x() * d2.y() - d2.x() * d1.y();
    return {d2.y() / det, -d1.y() / det, -d2.x() / det, d1.x() / det};
}

template <typename T> struct FrameParts {
    Vec3<T> Tv, Bv, m, t, b, n;
    T Tn, mn;
};

template <typename T>
bool frame_parts(const Rig& rig, const Vertices<T>& vertices, int face, FrameParts<T>& p) {
    const auto& f = rig.faces[face];
    const Vec3<T> p0 = vertices.row(f[0]).transpose();
    const Vec3<T> e1 = vertices.row(f[1]).transpose() - p0;
    const Vec3<T> e2 = vertices.row(f[2]).transpose() - p0;
    if (!(0.5 * double(e1.cross(e2).norm()) >= kMinFaceArea)) return false;
    const UvSolve s = uv_solve(rig, face);
    p.Tv = T(s.a1) * e1 + T(s.a2) * e2;
    p.Bv = T(s.b1) * e1 + T(s.b2) * e2;
    p.m = p.Tv.cross(p.Bv);
    p.Tn = p.Tv.norm();
    p.mn = p.m.norm();
    if (!(p.Tn > T(0)) || !(p.mn > T(0))) return false;
    p.t = p.Tv / p.Tn;
    p.n = p.m / p.mn;
    p.b = p.n.cross(p.t);
    return true;
}

std::atomic<bool> g_degenerate_logged{false};

} // namespace

template <typename T>
bool face_frame(const Rig& rig, const Vertices<T>& vertices, int face, Mat3<T>& frame) {
    FrameParts<T> p;
    if (!frame_parts(rig, vertices, face, p)) return false;
    frame.col(0) = p.t;
    frame.col(1) = p.b;
    frame.col(2) = p.n;
    return true;
}

template <typename T>
FrameGaussians<T> embed(const NeuralGaussianField<T>& field, const Vertices<T>& vertices, const Rig& rig) {
    if (vertices.rows() != rig.num_vertices()) throw ConfigError("embed: vertex count does not match the rig");
    const int n = field.num_active();
    FrameGaussians<T> out = FrameGaussians<T>::zeros(n, field.num_features);
    std::vector<Mat3<T>> frames(rig.num_faces());
    std::vector<std::uint8_t> face_ok(rig.num_faces(), 0);
    int culled = 0;
    for (int f = 0; f < rig.num_faces(); ++f) face_ok[f] = face_frame(rig, vertices, f, frames[f]);
    for (int i = 0; i < n; ++i) {
        const SurfacePoint& sp = field.surface[i];
        const auto& f = rig.faces[sp.face];
        Vec3<T> x0 = Vec3<T>::Zero();
        for (int k = 0; k < 3; ++k) x0 += T(sp.bary[k]) * vertices.row(f[k]).transpose();
        out.position.row(i) = x0.transpose();
        out.opacity[i] = T(1) / (T(1) + std::exp(-field.opacity_logit[i]));
        out.features.row(i) = field.features.row(i);
        if (!face_ok[sp.face]) {
            out.valid[i] = 0;
            ++culled;
            continue;
        }
        const Quaternion<T> q = Quaternion<T>::from_coeffs(field.rotation.row(i).transpose());
        const Mat3<T> R = frames[sp.face] * quat_to_rotation(q);
        const Vec3<T> s = field.log_scale.row(i).transpose().array().exp().matrix();
        out.covariance[i] = covariance_from_rotation(R, s);
    }
    if (culled > 0 && !g_degenerate_logged.exchange(true)) {
        spdlog::warn("embed: {} Gaussians culled on degenerate posed faces", culled);
    }
    return out;
}

template <typename T>
Vertices<T> embed_backward(const NeuralGaussianField<T>& field, const Vertices<T>& vertices, const Rig& rig,
                           const GaussianGrad<T>& dgauss, FieldGrad<T>& dfield) {
    const int n = field.num_active();
    if (dgauss.position.rows() != n || dfield.features.rows() != n) {
        throw ContractViolation("embed_backward: gradient buffers do not match the field");
    }
    Vertices<T> dvert = Vertices<T>::Zero(rig.num_vertices(), 3);
    std::vector<FrameParts<T>> parts(rig.num_faces());
    std::vector<std::uint8_t> face_ok(rig.num_faces(), 0);
    std::vector<Mat3<T>> dframe(rig.num_faces(), Mat3<T>::Zero());
    for (int f = 0; f < rig.num_faces(); ++f) face_ok[f] = frame_parts(rig, vertices, f, parts[f]);

    for (int i = 0; i < n; ++i) {
        const SurfacePoint& sp = field.surface[i];
        const auto& f = rig.faces[sp.face];
        const Vec3<T> dx = dgauss.position.row(i).transpose();
        for (int k = 0; k < 3; ++k) dvert.row(f[k]) += T(sp.bary[k]) * dx.transpose();
        const T o = T(1) / (T(1) + std::exp(-field.opacity_logit[i]));
        dfield.opacity_logit[i] += dgauss.opacity[i] * o * (T(1) - o);
        dfield.features.row(i) += dgauss.features.row(i);
        if (!face_ok[sp.face]) continue;

        const FrameParts<T>& p = parts[sp.face];
        Mat3<T> frame;
        frame << p.t, p.b, p.n;
        const Quaternion<T> q = Quaternion<T>::from_coeffs(field.rotation.row(i).transpose());
        const Mat3<T> Rq = quat_to_rotation(q);
        const Mat3<T> R = frame * Rq;
        const Vec3<T> s = field.log_scale.row(i).transpose().array().exp().matrix();
        const auto cg = covariance_backward(R, s, dgauss.covariance[i]);
        dfield.log_scale.row(i) += cg.ds.cwiseProduct(s).transpose();
        dframe[sp.face] += cg.dR * Rq.transpose();
        dfield.rotation.row(i) += quat_to_rotation_backward(q, Mat3<T>(frame.transpose() * cg.dR)).transpose();
    }

    for (int fi = 0; fi < rig.num_faces(); ++fi) {
        if (!face_ok[fi]) continue;
        const Mat3<T>& dF = dframe[fi];
        if (dF.isZero(0)) continue;
        const FrameParts<T>& p = parts[fi];
        Vec3<T> dt = dF.col(0), db = dF.col(1), dn = dF.col(2);
        // b = n x t
        dn += p.t.cross(db);
        dt += db.cross(p.n);
        const Vec3<T> dm = (dn - p.n * p.n.dot(dn)) / p.mn;
        Vec3<T> dT = (dt - p.t * p.t.dot(dt)) / p.Tn;
        dT += p.Bv.cross(dm);
        const Vec3<T> dB = dm.cross(p.Tv);
        const UvSolve s = uv_solve(rig, fi);
        const Vec3<T> de1 = T(s.a1) * dT + T(s.b1) * dB;
        const Vec3<T> de2 = T(s.a2) * dT + T(s.b2) * dB;
        const auto& f = rig.faces[fi];
        dvert.row(f[1]) += de1.transpose();
        dvert.row(f[2]) += de2.transpose();
        dvert.row(f[0]) -= (de1 + de2).transpose();
    }
    return dvert;
}

#define NGF_INSTANTIATE(T)                                                                                    \
    template struct FrameGaussians<T>;                                                                        \
    template struct GaussianGrad<T>;                                                                          \
    template struct FieldGrad<T>;                                                                             \
    template NeuralGaussianField<T> init_field<T>(const Rig&, int, int, std::uint64_t);                       \
    template bool face_frame(const Rig&, const Vertices<T>&, int, Mat3<T>&);                                  \
    template FrameGaussians<T> embed(const NeuralGaussianField<T>&, const Vertices<T>&, const Rig&);          \
    template Vertices<T> embed_backward(const NeuralGaussianField<T>&, const Vertices<T>&, const Rig&,        \
                                        const GaussianGrad<T>&, FieldGrad<T>&);

NGF_INSTANTIATE(float)
NGF_INSTANTIATE(double)

} // namespace ngf
