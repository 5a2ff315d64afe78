#pragma once

#include "ngf/geometry.hpp"
#include "ngf/rig.hpp"

#include <cstdint>
#include <vector>

namespace ngf {

template <typename T> using MatrixRX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T> using Quats = Eigen::Matrix<T, Eigen::Dynamic, 4, Eigen::RowMajor>;

/// Learnable Gaussian attributes on the active texels of a U x U UV grid.
/// Parameter matrices are indexed by active texel, in row-major texel order.
template <typename T>
struct NeuralGaussianField {
    int resolution{0};
    int num_features{0};
    std::vector<int> texel;              // linear index y * resolution + x of each active texel
    std::vector<SurfacePoint> surface;   // rest-mesh location of each active texel
    MatrixRX<T> features;                // N x K_f
    VectorX<T> opacity_logit;            // N
    Vertices<T> log_scale;               // N x 3
    Quats<T> rotation;                   // N x 4, (w, x, y, z)

    int num_active() const { return static_cast<int>(texel.size()); }
    Vec2<double> texel_uv(int i) const {
        const int x = texel[i] % resolution, y = texel[i] / resolution;
        return {(x + 0.5) / resolution, (y + 0.5) / resolution};
    }

    template <typename U>
    NeuralGaussianField<U> cast() const {
        return {resolution,
                num_features,
                texel,
                surface,
                features.template cast<U>(),
                opacity_logit.template cast<U>(),
                log_scale.template cast<U>(),
                rotation.template cast<U>()};
    }
};

/// Gaussians whose UV footprint is this many texels wide at initialization.
inline constexpr double kInitScaleTexels = 1.5;
inline constexpr double kInitOpacity = 0.1;

template <typename T>
NeuralGaussianField<T> init_field(const Rig& rig, int resolution, int num_features, std::uint64_t seed);

/// Per-frame 3D Gaussians. Entries with valid == 0 sit on a degenerate posed
/// face and are skipped by the rasterizer.
template <typename T>
struct FrameGaussians {
    Vertices<T> position;        // N x 3
    std::vector<Mat3<T>> covariance;
    VectorX<T> opacity;          // N
    MatrixRX<T> features;        // N x K_f
    std::vector<std::uint8_t> valid;

    int size() const { return static_cast<int>(position.rows()); }
    int num_features() const { return static_cast<int>(features.cols()); }
    static FrameGaussians zeros(int n, int k);

    template <typename U>
    FrameGaussians<U> cast() const {
        FrameGaussians<U> out{position.template cast<U>(), {}, opacity.template cast<U>(),
                              features.template cast<U>(), valid};
        out.covariance.reserve(covariance.size());
        for (const auto& c : covariance) out.covariance.push_back(c.template cast<U>());
        return out;
    }
};

/// Gradients with respect to FrameGaussians entries.
template <typename T>
struct GaussianGrad {
    Vertices<T> position;
    std::vector<Mat3<T>> covariance;
    VectorX<T> opacity;
    MatrixRX<T> features;

    static GaussianGrad zeros(int n, int k);
};

/// Gradients with respect to the field parameters.
template <typename T>
struct FieldGrad {
    MatrixRX<T> features;
    VectorX<T> opacity_logit;
    Vertices<T> log_scale;
    Quats<T> rotation;

    static FieldGrad zeros(const NeuralGaussianField<T>& field);
};

/// Orthonormal tangent frame [t b n] of one posed face built from its UV
/// parameterization. Returns false when the face is degenerate.
template <typename T>
bool face_frame(const Rig& rig, const Vertices<T>& vertices, int face, Mat3<T>& frame);

template <typename T>
FrameGaussians<T> embed(const NeuralGaussianField<T>& field, const Vertices<T>& vertices, const Rig& rig);

/// Reverse of embed. Accumulates into `dfield` and returns dL/dvertices.
template <typename T>
Vertices<T> embed_backward(const NeuralGaussianField<T>& field, const Vertices<T>& vertices, const Rig& rig,
                           const GaussianGrad<T>& dgauss, FieldGrad<T>& dfield);

} // namespace ngf
