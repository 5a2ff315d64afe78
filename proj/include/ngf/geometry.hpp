#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>

namespace ngf {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Mat4 = Eigen::Matrix<T, 4, 4>;

/// Rotation quaternion (w, x, y, z). Need not be unit length; every consumer
/// normalizes internally.
template <typename T>
struct Quaternion {
    T w{1}, x{0}, y{0}, z{0};

    Vec4<T> coeffs() const { return {w, x, y, z}; }
    static Quaternion from_coeffs(const Vec4<T>& c) { return {c[0], c[1], c[2], c[3]}; }
    T norm() const;
    Quaternion operator-() const { return {-w, -x, -y, -z}; }

    template <typename U>
    Quaternion<U> cast() const {
        return {static_cast<U>(w), static_cast<U>(x), static_cast<U>(y), static_cast<U>(z)};
    }
};

/// Norms at or below this are rejected as degenerate.
inline constexpr double kMinQuaternionNorm = 1e-12;

template <typename T> Mat3<T> quat_to_rotation(const Quaternion<T>& q);

/// Vector-Jacobian product of quat_to_rotation: dL/dq given dL/dR, including
/// the internal normalization.
template <typename T> Vec4<T> quat_to_rotation_backward(const Quaternion<T>& q, const Mat3<T>& dR);

/// Sigma = R diag(s^2) R^T.
template <typename T> Mat3<T> covariance_from_rotation(const Mat3<T>& R, const Vec3<T>& s);
template <typename T> Mat3<T> build_covariance(const Quaternion<T>& q, const Vec3<T>& s);

/// Gradients of covariance_from_rotation for a symmetric upstream dSigma.
template <typename T>
struct CovarianceGrad {
    Mat3<T> dR;
    Vec3<T> ds;
};
template <typename T>
CovarianceGrad<T> covariance_backward(const Mat3<T>& R, const Vec3<T>& s, const Mat3<T>& dSigma);

/// Axis-angle (Rodrigues) rotation and its three partial derivatives, stable at
/// zero angle.
template <typename T> Mat3<T> axis_angle_to_rotation(const Vec3<T>& omega);
template <typename T> std::array<Mat3<T>, 3> axis_angle_jacobian(const Vec3<T>& omega);

template <typename T> Mat3<T> skew(const Vec3<T>& v) {
    Mat3<T> m;
    m << T(0), -v.z(), v.y(), v.z(), T(0), -v.x(), -v.y(), v.x(), T(0);
    return m;
}

/// Pinhole camera. Pixel centers sit at integer coordinates; camera space is
/// x right, y down, z forward.
struct Camera {
    double fx{1}, fy{1}, cx{0}, cy{0};
    Mat4<double> world_to_camera{Mat4<double>::Identity()};
    int width{0}, height{0};

    /// Throws InvalidParameter unless fx, fy > 0, dimensions are positive and
    /// the rotation block is orthonormal to 1e-6.
    void validate() const;
    Mat3<double> rotation() const { return world_to_camera.block<3, 3>(0, 0); }
    Vec3<double> translation() const { return world_to_camera.block<3, 1>(0, 3); }
};

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovariance2dFloor = 0.3;

/// EWA projection of a 3D Gaussian. `conic` holds the inverse 2D covariance as
/// (a, b, c) for [[a, b], [b, c]].
template <typename T>
struct ProjectedGaussian {
    bool visible{false};
    Vec2<T> mean;
    Mat2<T> cov;
    Vec3<T> conic;
    T depth{0};
    Vec3<T> cam_point;
    Mat3<T> cam_cov;
};

template <typename T>
ProjectedGaussian<T> project_gaussian(const Vec3<T>& x0, const Mat3<T>& sigma, const Camera& cam,
                                      T cov_floor = T(kCovariance2dFloor), T z_near = T(kNearPlane));

template <typename T>
struct ProjectionGrad {
    Vec3<T> dx0;
    Mat3<T> dsigma; // symmetric
};

/// Reverse of project_gaussian for upstream gradients on the 2D mean and the
/// conic coefficients.
template <typename T>
ProjectionGrad<T> project_gaussian_backward(const ProjectedGaussian<T>& proj, const Camera& cam,
                                            const Vec2<T>& dmean, const Vec3<T>& dconic);

/// Inverse of a symmetric 2x2 matrix as conic coefficients.
template <typename T> Vec3<T> conic_from_cov2d(const Mat2<T>& cov) {
    const T det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
    const T inv = T(1) / det;
    return {cov(1, 1) * inv, -cov(0, 1) * inv, cov(0, 0) * inv};
}

/// Exponent -1/2 d^T Q d of the 2D Gaussian, Q given as conic coefficients.
/// Shared by every consumer so all of them produce bitwise-equal values.
template <typename T> inline T gaussian_power(const Vec3<T>& conic, T dx, T dy) {
    return T(-0.5) * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy;
}

/// exp(-1/2 d^T cov^-1 d) with d = p - mean.
template <typename T> T evaluate_gaussian_2d(const Vec2<T>& p, const Vec2<T>& mean, const Mat2<T>& cov);

} // namespace ngf
