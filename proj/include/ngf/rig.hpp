#pragma once

#include "ngf/geometry.hpp"

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ngf {

template <typename T> using Vertices = Eigen::Matrix<T, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <typename T> using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Point on the surface expressed as a face and barycentric weights.
struct SurfacePoint {
    int face{-1};
    Vec3<double> bary;
};

/// Uniform-grid accelerator over the UV triangles of a rig.
class UvLocator {
public:
    UvLocator() = default;
    UvLocator(const std::vector<std::array<Vec2<double>, 3>>& uv_faces, int grid);

    std::optional<SurfacePoint> locate(const Vec2<double>& uv) const;
    /// First pair of UV triangles whose interiors overlap, if any.
    std::optional<std::pair<int, int>> find_overlap() const;

private:
    int grid_{0};
    std::vector<std::array<Vec2<double>, 3>> faces_;
    std::vector<std::vector<int>> cells_;
    std::vector<std::array<int, 4>> face_cells_; // x0, y0, x1, y1 inclusive
};

/// Articulated template mesh: blendshapes, joint tree, skinning weights and
/// per-face-corner UV coordinates. Immutable after load.
struct Rig {
    Vertices<double> template_vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<std::array<Vec2<double>, 3>> uv;
    Eigen::MatrixXd shape_basis; // 3V x |beta|, column k is a row-major V x 3 offset field
    Eigen::MatrixXd expr_basis;  // 3V x |psi|
    Eigen::MatrixXd pose_basis;  // 3V x 9(J-1), or 3V x 0
    Eigen::MatrixXd joint_regressor; // J x V
    std::vector<int> parents;        // parents[0] == -1, parents[j] < j
    Eigen::MatrixXd skin_weights;    // V x J

    int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
    int num_faces() const { return static_cast<int>(faces.size()); }
    int num_joints() const { return static_cast<int>(parents.size()); }
    int num_shape() const { return static_cast<int>(shape_basis.cols()); }
    int num_expr() const { return static_cast<int>(expr_basis.cols()); }
    bool has_pose_correctives() const { return pose_basis.cols() > 0; }

    /// Checks every invariant and builds the UV locator. Throws ValidationError
    /// naming the first violation by field path.
    void finalize();
    const UvLocator& locator() const { return locator_; }
    double mean_edge_length() const;
    double mean_uv_edge_length() const;

private:
    UvLocator locator_;
};

/// Rig documents use schema "ngf-rig/1".
Rig load_rig(const std::filesystem::path& path);
Rig parse_rig(const std::string& json_text, const std::string& origin);
std::string rig_to_json(const Rig& rig);

template <typename T>
struct BodyParams {
    VectorX<T> beta;
    Vertices<T> theta; // J x 3 axis-angle
    VectorX<T> psi;

    static BodyParams zeros(const Rig& rig);
    /// Throws ConfigError on dimension mismatch, InvalidParameter on
    /// non-finite values or joint angles of 2 pi or more.
    void validate(const Rig& rig) const;

    template <typename U>
    BodyParams<U> cast() const {
        return {beta.template cast<U>(), theta.template cast<U>(), psi.template cast<U>()};
    }
};

/// Rest-pose vertices T(beta, theta, psi) with all blendshapes applied.
template <typename T> Vertices<T> blend_shapes(const Rig& rig, const BodyParams<T>& params);

/// Joint locations J(beta) regressed from the shaped template.
template <typename T> Vertices<T> rest_joints(const Rig& rig, const BodyParams<T>& params);

/// Linear blend skinning of `rest` by params.theta about joints J(params.beta).
template <typename T> Vertices<T> skin(const Rig& rig, const Vertices<T>& rest, const BodyParams<T>& params);

/// skin(blend_shapes(params)) + delta, with the displacement applied in posed space.
template <typename T>
Vertices<T> deformed_mesh(const Rig& rig, const BodyParams<T>& params, const Vertices<T>& delta);

template <typename T>
struct RigGradient {
    VectorX<T> beta;
    Vertices<T> theta;
    VectorX<T> psi;
    Vertices<T> delta;
};

/// Reverse-mode gradient of deformed_mesh for upstream dL/dvertices.
template <typename T>
RigGradient<T> deformed_mesh_backward(const Rig& rig, const BodyParams<T>& params, const Vertices<T>& delta,
                                      const Vertices<T>& dvertices);

std::optional<SurfacePoint> barycentric_lookup(const Rig& rig, const Vec2<double>& uv);

inline constexpr double kDefaultMaxDisplacement = 0.05;

/// Rescales rows of `delta` whose norm exceeds d_max back onto the ball.
template <typename T> void clamp_displacement(Vertices<T>& delta, double d_max);

} // namespace ngf
