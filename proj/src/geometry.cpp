#include "ngf/geometry.hpp"

#include "ngf/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace ngf {

template <typename T> T Quaternion<T>::norm() const {
    return std::sqrt(w * w + x * x + y * y + z * z);
}

namespace {

template <typename T> Vec4<T> unit_coeffs(const Quaternion<T>& q) {
    const T n = q.norm();
    if (!(n > T(kMinQuaternionNorm))) {
        throw InvalidParameter("degenerate quaternion (norm " + std::to_string(double(n)) + ")");
    }
    return q.coeffs() / n;
}

} // namespace

template <typename T> Mat3<T> quat_to_rotation(const Quaternion<T>& q) {
    const Vec4<T> u = unit_coeffs(q);
    const T w = u[0], x = u[1], y = u[2], z = u[3];
    Mat3<T> R;
    R << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return R;
}

template <typename T> Vec4<T> quat_to_rotation_backward(const Quaternion<T>& q, const Mat3<T>& dR) {
    const T n = q.norm();
    const Vec4<T> u = unit_coeffs(q);
    const T w = u[0], x = u[1], y = u[2], z = u[3];
    Mat3<T> Rw, Rx, Ry, Rz;
    Rw << T(0), -2 * z, 2 * y, 2 * z, T(0), -2 * x, -2 * y, 2 * x, T(0);
    Rx << T(0), 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    Ry << -4 * y, 2 * x, 2 * w, 2 * x, T(0), 2 * z, -2 * w, 2 * z, -4 * y;
    Rz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, T(0);
    const Vec4<T> du{dR.cwiseProduct(Rw).sum(), dR.cwiseProduct(Rx).sum(), dR.cwiseProduct(Ry).sum(),
                     dR.cwiseProduct(Rz).sum()};
    // Through u = q / |q|.
    return (du - u * u.dot(du)) / n;
}

template <typename T> Mat3<T> covariance_from_rotation(const Mat3<T>& R, const Vec3<T>& s) {
    const Mat3<T> M = R * s.cwiseProduct(s).asDiagonal();
    Mat3<T> sigma = M * R.transpose();
    // Exact symmetry regardless of rounding.
    return T(0.5) * (sigma + sigma.transpose());
}

template <typename T> Mat3<T> build_covariance(const Quaternion<T>& q, const Vec3<T>& s) {
    return covariance_from_rotation(quat_to_rotation(q), s);
}

template <typename T>
CovarianceGrad<T> covariance_backward(const Mat3<T>& R, const Vec3<T>& s, const Mat3<T>& dSigma) {
    const Mat3<T> G = T(0.5) * (dSigma + dSigma.transpose());
    CovarianceGrad<T> out;
    const Vec3<T> s2 = s.cwiseProduct(s);
    out.dR = T(2) * G * R * s2.asDiagonal();
    const Mat3<T> RtGR = R.transpose() * G * R;
    for (int k = 0; k < 3; ++k) {
        out.ds[k] = T(2) * s[k] * RtGR(k, k);
    }
    return out;
}

namespace {

template <typename T> struct RodriguesCoeffs {
    T a, b, ca, cb; // a = sin/t, b = (1-cos)/t^2, ca = a'/t, cb = b'/t
};

template <typename T> RodriguesCoeffs<T> rodrigues_coeffs(T theta) {
    const T t2 = theta * theta;
    if (theta < T(0.1)) {
        const T t4 = t2 * t2;
        return {T(1) - t2 / T(6) + t4 / T(120), T(0.5) - t2 / T(24) + t4 / T(720),
                T(-1) / T(3) + t2 / T(30) - t4 / T(840), T(-1) / T(12) + t2 / T(180) - t4 / T(6720)};
    }
    const T s = std::sin(theta), c = std::cos(theta);
    return {s / theta, (T(1) - c) / t2, (theta * c - s) / (t2 * theta),
            (theta * s - T(2) * (T(1) - c)) / (t2 * t2)};
}

} // namespace

template <typename T> Mat3<T> axis_angle_to_rotation(const Vec3<T>& omega) {
    const auto k = rodrigues_coeffs(omega.norm());
    const Mat3<T> K = skew(omega);
    return Mat3<T>::Identity() + k.a * K + k.b * (K * K);
}

template <typename T> std::array<Mat3<T>, 3> axis_angle_jacobian(const Vec3<T>& omega) {
    const auto k = rodrigues_coeffs(omega.norm());
    const Mat3<T> K = skew(omega);
    const Mat3<T> K2 = K * K;
    std::array<Mat3<T>, 3> out;
    for (int i = 0; i < 3; ++i) {
        const Mat3<T> E = skew<T>(Vec3<T>::Unit(i));
        out[i] = k.ca * omega[i] * K + k.a * E + k.cb * omega[i] * K2 + k.b * (E * K + K * E);
    }
    return out;
}

void Camera::validate() const {
    if (!(fx > 0) || !(fy > 0)) {
        throw InvalidParameter("camera focal lengths must be positive");
    }
    if (width <= 0 || height <= 0) {
        throw InvalidParameter("camera dimensions must be positive");
    }
    const Mat3<double> R = rotation();
    if (!((R * R.transpose() - Mat3<double>::Identity()).cwiseAbs().maxCoeff() <= 1e-6) ||
        !(std::abs(R.determinant() - 1.0) <= 1e-6)) {
        throw InvalidParameter("camera rotation block is not orthonormal");
    }
    if (!world_to_camera.allFinite()) {
        throw InvalidParameter("camera pose is not finite");
    }
}

template <typename T>
ProjectedGaussian<T> project_gaussian(const Vec3<T>& x0, const Mat3<T>& sigma, const Camera& cam, T cov_floor,
                                      T z_near) {
    ProjectedGaussian<T> out;
    const Mat3<T> W = cam.rotation().cast<T>();
    const Vec3<T> p = W * x0 + cam.translation().cast<T>();
    out.cam_point = p;
    out.depth = p.z();
    if (!(p.z() > z_near)) {
        return out;
    }
    const T fx = T(cam.fx), fy = T(cam.fy);
    const T inv_z = T(1) / p.z();
    const T inv_z2 = inv_z * inv_z;
    Eigen::Matrix<T, 2, 3> J;
    J << fx * inv_z, T(0), -fx * p.x() * inv_z2, T(0), fy * inv_z, -fy * p.y() * inv_z2;
    out.cam_cov = W * sigma * W.transpose();
    Mat2<T> cov = J * out.cam_cov * J.transpose();
    cov(0, 1) = cov(1, 0) = T(0.5) * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += cov_floor;
    cov(1, 1) += cov_floor;
    out.cov = cov;
    out.conic = conic_from_cov2d(cov);
    out.mean = {fx * p.x() * inv_z + T(cam.cx), fy * p.y() * inv_z + T(cam.cy)};
    out.visible = true;
    return out;
}

template <typename T>
ProjectionGrad<T> project_gaussian_backward(const ProjectedGaussian<T>& proj, const Camera& cam,
                                            const Vec2<T>& dmean, const Vec3<T>& dconic) {
    const Mat3<T> W = cam.rotation().cast<T>();
    const Vec3<T>& p = proj.cam_point;
    const T fx = T(cam.fx), fy = T(cam.fy);
    const T inv_z = T(1) / p.z();
    const T inv_z2 = inv_z * inv_z;
    const T inv_z3 = inv_z2 * inv_z;
    Eigen::Matrix<T, 2, 3> J;
    J << fx * inv_z, T(0), -fx * p.x() * inv_z2, T(0), fy * inv_z, -fy * p.y() * inv_z2;

    Mat2<T> Q;
    Q << proj.conic[0], proj.conic[1], proj.conic[1], proj.conic[2];
    Mat2<T> GQ;
    GQ << dconic[0], T(0.5) * dconic[1], T(0.5) * dconic[1], dconic[2];
    const Mat2<T> dcov = -Q * GQ * Q;

    const Mat3<T> dcam_cov = J.transpose() * dcov * J;
    const Eigen::Matrix<T, 2, 3> dJ = T(2) * dcov * J * proj.cam_cov;

    Vec3<T> dp = Vec3<T>::Zero();
    dp.x() += dmean.x() * fx * inv_z;
    dp.y() += dmean.y() * fy * inv_z;
    dp.z() += -dmean.x() * fx * p.x() * inv_z2 - dmean.y() * fy * p.y() * inv_z2;

    dp.z() += dJ(0, 0) * (-fx * inv_z2) + dJ(1, 1) * (-fy * inv_z2);
    dp.x() += dJ(0, 2) * (-fx * inv_z2);
    dp.z() += dJ(0, 2) * (T(2) * fx * p.x() * inv_z3);
    dp.y() += dJ(1, 2) * (-fy * inv_z2);
    dp.z() += dJ(1, 2) * (T(2) * fy * p.y() * inv_z3);

    ProjectionGrad<T> out;
    out.dx0 = W.transpose() * dp;
    out.dsigma = W.transpose() * dcam_cov * W;
    return out;
}

template <typename T> T evaluate_gaussian_2d(const Vec2<T>& p, const Vec2<T>& mean, const Mat2<T>& cov) {
    const Vec3<T> conic = conic_from_cov2d(cov);
    return std::exp(gaussian_power(conic, p.x() - mean.x(), p.y() - mean.y()));
}

#define NGF_INSTANTIATE(T)                                                                                   \
    template struct Quaternion<T>;                                                                           \
    template Mat3<T> quat_to_rotation(const Quaternion<T>&);                                                 \
    template Vec4<T> quat_to_rotation_backward(const Quaternion<T>&, const Mat3<T>&);                        \
    template Mat3<T> covariance_from_rotation(const Mat3<T>&, const Vec3<T>&);                               \
    template Mat3<T> build_covariance(const Quaternion<T>&, const Vec3<T>&);                                 \
    template CovarianceGrad<T> covariance_backward(const Mat3<T>&, const Vec3<T>&, const Mat3<T>&);          \
    template Mat3<T> axis_angle_to_rotation(const Vec3<T>&);                                                 \
    template std::array<Mat3<T>, 3> axis_angle_jacobian(const Vec3<T>&);                                    \
    template ProjectedGaussian<T> project_gaussian(const Vec3<T>&, const Mat3<T>&, const Camera&, T, T);     \
    template ProjectionGrad<T> project_gaussian_backward(const ProjectedGaussian<T>&, const Camera&,         \
                                                         const Vec2<T>&, const Vec3<T>&);                    \
    template T evaluate_gaussian_2d(const Vec2<T>&, const Vec2<T>&, const Mat2<T>&);

NGF_INSTANTIATE(float)
NGF_INSTANTIATE(double)

} // namespace ngf
