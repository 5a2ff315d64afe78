#include "ngf/rig.hpp"

#include "ngf/errors.hpp"
#include "ngf/hash.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ngf {

using nlohmann::json;

// ---------------------------------------------------------------------------
// UV locator

namespace {

std::optional<Vec3<double>> barycentric(const std::array<Vec2<double>, 3>& tri, const Vec2<double>& p) {
    const Vec2<double> e1 = tri[1] - tri[0], e2 = tri[2] - tri[0], d = p - tri[0];
    const double det = e1.x() * e2.y() - e1.y() * e2.x();
    if (det == 0.0) return std::nullopt;
    const double l1 = (d.x() * e2.y() - d.y() * e2.x()) / det;
    const double l2 = (e1.x() * d.y() - e1.y() * d.x()) / det;
    return Vec3<double>{1.0 - l1 - l2, l1, l2};
}

constexpr double kInsideTolerance = 1e-9;

bool triangles_overlap(const std::array<Vec2<double>, 3>& a, const std::array<Vec2<double>, 3>& b) {
    constexpr double eps = 1e-12;
    auto separated_by = [&](const std::array<Vec2<double>, 3>& t) {
        for (int i = 0; i < 3; ++i) {
            const Vec2<double> e = t[(i + 1) % 3] - t[i];
            const Vec2<double> n{-e.y(), e.x()};
            double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
            for (int k = 0; k < 3; ++k) {
                amin = std::min(amin, n.dot(a[k]));
                amax = std::max(amax, n.dot(a[k]));
                bmin = std::min(bmin, n.dot(b[k]));
                bmax = std::max(bmax, n.dot(b[k]));
            }
            const double scale = eps * std::max(1.0, e.norm());
            if (std::min(amax, bmax) - std::max(amin, bmin) <= scale) return true;
        }
        return false;
    };
    return !separated_by(a) && !separated_by(b);
}

} // namespace

UvLocator::UvLocator(const std::vector<std::array<Vec2<double>, 3>>& uv_faces, int grid)
    : grid_(grid), faces_(uv_faces), cells_(static_cast<size_t>(grid) * grid) {
    face_cells_.resize(faces_.size());
    auto cell = [&](double t) { return std::clamp(static_cast<int>(std::floor(t * grid_)), 0, grid_ - 1); };
    for (size_t f = 0; f < faces_.size(); ++f) {
        double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
        for (const auto& p : faces_[f]) {
            umin = std::min(umin, p.x());
            umax = std::max(umax, p.x());
            vmin = std::min(vmin, p.y());
            vmax = std::max(vmax, p.y());
        }
        const double pad = 1e-9;
        face_cells_[f] = {cell(umin - pad), cell(vmin - pad), cell(umax + pad), cell(vmax + pad)};
        for (int y = face_cells_[f][1]; y <= face_cells_[f][3]; ++y)
            for (int x = face_cells_[f][0]; x <= face_cells_[f][2]; ++x)
                cells_[static_cast<size_t>(y) * grid_ + x].push_back(static_cast<int>(f));
    }
}

std::optional<SurfacePoint> UvLocator::locate(const Vec2<double>& uv) const {
    if (grid_ == 0 || !(uv.x() >= 0.0 && uv.x() <= 1.0 && uv.y() >= 0.0 && uv.y() <= 1.0)) return std::nullopt;
    const int cx = std::clamp(static_cast<int>(std::floor(uv.x() * grid_)), 0, grid_ - 1);
    const int cy = std::clamp(static_cast<int>(std::floor(uv.y() * grid_)), 0, grid_ - 1);
    // Cell lists are in ascending face order, so ties on shared edges resolve
    // to the lowest face index.
    for (int f : cells_[static_cast<size_t>(cy) * grid_ + cx]) {
        auto b = barycentric(faces_[f], uv);
        if (b && b->minCoeff() >= -kInsideTolerance) return SurfacePoint{f, *b};
    }
    return std::nullopt;
}

std::optional<std::pair<int, int>> UvLocator::find_overlap() const {
    for (int cy = 0; cy < grid_; ++cy)
        for (int cx = 0; cx < grid_; ++cx) {
            const auto& list = cells_[static_cast<size_t>(cy) * grid_ + cx];
            for (size_t i = 0; i < list.size(); ++i)
                for (size_t j = i + 1; j < list.size(); ++j) {
                    const auto& a = face_cells_[list[i]];
                    const auto& b = face_cells_[list[j]];
                    // Test each pair once, in the first cell both touch.
                    if (std::max(a[0], b[0]) != cx || std::max(a[1], b[1]) != cy) continue;
                    if (triangles_overlap(faces_[list[i]], faces_[list[j]])) return std::pair{list[i], list[j]};
                }
        }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Rig validation

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw ValidationError(path + ": " + what); }

} // namespace

void Rig::finalize() {
    const int V = num_vertices();
    const int J = num_joints();
    if (V == 0) fail("template_vertices", "empty");
    if (!template_vertices.allFinite()) fail("template_vertices", "non-finite value");
    if (faces.empty()) fail("faces", "empty");
    for (size_t f = 0; f < faces.size(); ++f)
        for (int k = 0; k < 3; ++k)
            if (faces[f][k] < 0 || faces[f][k] >= V)
                fail("faces[" + std::to_string(f) + "][" + std::to_string(k) + "]", "vertex index out of range");
    if (uv.size() != faces.size()) fail("uv_coords", "expected one UV triple per face");
    for (size_t f = 0; f < uv.size(); ++f)
        for (int k = 0; k < 3; ++k) {
            const auto& p = uv[f][k];
            if (!(p.x() >= 0.0 && p.x() <= 1.0 && p.y() >= 0.0 && p.y() <= 1.0))
                fail("uv_coords[" + std::to_string(f) + "][" + std::to_string(k) + "]", "outside [0,1]^2");
        }
    auto check_basis = [&](const Eigen::MatrixXd& b, const char* name) {
        if (b.rows() != 3 * V && b.cols() > 0) fail(name, "expected V x 3 offsets per component");
        if (!b.allFinite()) fail(name, "non-finite value");
    };
    check_basis(shape_basis, "shape_basis");
    check_basis(expr_basis, "expr_basis");
    check_basis(pose_basis, "pose_basis");
    if (J == 0) fail("parents", "rig needs at least one joint");
    if (parents[0] != -1) fail("parents[0]", "root joint must have parent -1");
    for (int j = 1; j < J; ++j)
        if (parents[j] < 0 || parents[j] >= j)
            fail("parents[" + std::to_string(j) + "]", "parent must precede its child");
    if (pose_basis.cols() != 0 && pose_basis.cols() != 9 * (J - 1))
        fail("pose_basis", "expected 9 * (J - 1) components or none");
    if (joint_regressor.rows() != J || joint_regressor.cols() != V)
        fail("joint_regressor", "expected J x V matrix");
    if (!joint_regressor.allFinite()) fail("joint_regressor", "non-finite value");
    if (skin_weights.rows() != V || skin_weights.cols() != J) fail("skin_weights", "expected V x J matrix");
    for (int v = 0; v < V; ++v) {
        const std::string path = "skin_weights[" + std::to_string(v) + "]";
        if (!skin_weights.row(v).allFinite() || skin_weights.row(v).minCoeff() < 0.0) fail(path, "negative weight");
        const double sum = skin_weights.row(v).sum();
        if (std::abs(sum - 1.0) > 1e-6) fail(path, "row sums to " + std::to_string(sum));
    }
    int grid = std::clamp(static_cast<int>(std::sqrt(double(faces.size()) / 2.0)), 1, 512);
    locator_ = UvLocator(uv, grid);
    if (auto overlap = locator_.find_overlap()) {
        fail("uv_coords", "charts overlap (faces " + std::to_string(overlap->first) + " and " +
                              std::to_string(overlap->second) + ")");
    }
}

double Rig::mean_edge_length() const {
    double sum = 0;
    for (const auto& f : faces)
        for (int k = 0; k < 3; ++k)
            sum += (template_vertices.row(f[(k + 1) % 3]) - template_vertices.row(f[k])).norm();
    return sum / (3.0 * faces.size());
}

double Rig::mean_uv_edge_length() const {
    double sum = 0;
    for (const auto& t : uv)
        for (int k = 0; k < 3; ++k) sum += (t[(k + 1) % 3] - t[k]).norm();
    return sum / (3.0 * uv.size());
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

const json& field(const json& doc, const char* key) {
    if (!doc.contains(key)) fail(key, "missing");
    return doc.at(key);
}

double number(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
}

const json& array_of(const json& v, const std::string& path, size_t expected = SIZE_MAX) {
    if (!v.is_array()) fail(path, "expected an array");
    if (expected != SIZE_MAX && v.size() != expected)
        fail(path, "expected " + std::to_string(expected) + " entries, found " + std::to_string(v.size()));
    return v;
}

Eigen::MatrixXd read_basis(const json& doc, const char* key, int V) {
    const json& b = array_of(field(doc, key), key);
    Eigen::MatrixXd out(3 * V, static_cast<Eigen::Index>(b.size()));
    for (size_t k = 0; k < b.size(); ++k) {
        const std::string pk = std::string(key) + "[" + std::to_string(k) + "]";
        const json& comp = array_of(b[k], pk, V);
        for (int v = 0; v < V; ++v) {
            const std::string pv = pk + "[" + std::to_string(v) + "]";
            const json& xyz = array_of(comp[v], pv, 3);
            for (int c = 0; c < 3; ++c) out(3 * v + c, static_cast<Eigen::Index>(k)) = number(xyz[c], pv);
        }
    }
    return out;
}

json write_basis(const Eigen::MatrixXd& b, int V) {
    json arr = json::array();
    for (Eigen::Index k = 0; k < b.cols(); ++k) {
        json comp = json::array();
        for (int v = 0; v < V; ++v) comp.push_back({b(3 * v, k), b(3 * v + 1, k), b(3 * v + 2, k)});
        arr.push_back(std::move(comp));
    }
    return arr;
}

} // namespace

Rig parse_rig(const std::string& json_text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(origin + ": not a valid structured document (" + e.what() + ")");
    }
    try {
        if (!doc.is_object()) fail("$", "expected an object");
        const json& schema = field(doc, "schema");
        if (!schema.is_string() || schema.get<std::string>() != "ngf-rig/1")
            fail("schema", "expected \"ngf-rig/1\"");
        Rig rig;
        const json& tv = array_of(field(doc, "template_vertices"), "template_vertices");
        const int V = static_cast<int>(tv.size());
        rig.template_vertices.resize(V, 3);
        for (int v = 0; v < V; ++v) {
            const std::string p = "template_vertices[" + std::to_string(v) + "]";
            const json& xyz = array_of(tv[v], p, 3);
            for (int c = 0; c < 3; ++c) rig.template_vertices(v, c) = number(xyz[c], p);
        }
        const json& faces = array_of(field(doc, "faces"), "faces");
        for (size_t f = 0; f < faces.size(); ++f) {
            const std::string p = "faces[" + std::to_string(f) + "]";
            const json& idx = array_of(faces[f], p, 3);
            std::array<int, 3> tri{};
            for (int k = 0; k < 3; ++k) {
                if (!idx[k].is_number_integer()) fail(p, "expected integer vertex indices");
                tri[k] = idx[k].get<int>();
            }
            rig.faces.push_back(tri);
        }
        const json& uvs = array_of(field(doc, "uv_coords"), "uv_coords", faces.size());
        for (size_t f = 0; f < uvs.size(); ++f) {
            const std::string p = "uv_coords[" + std::to_string(f) + "]";
            const json& corners = array_of(uvs[f], p, 3);
            std::array<Vec2<double>, 3> tri;
            for (int k = 0; k < 3; ++k) {
                const json& uvk = array_of(corners[k], p + "[" + std::to_string(k) + "]", 2);
                tri[k] = {number(uvk[0], p), number(uvk[1], p)};
            }
            rig.uv.push_back(tri);
        }
        rig.shape_basis = read_basis(doc, "shape_basis", V);
        rig.expr_basis = read_basis(doc, "expr_basis", V);
        rig.pose_basis = read_basis(doc, "pose_basis", V);
        const json& parents = array_of(field(doc, "parents"), "parents");
        for (size_t j = 0; j < parents.size(); ++j) {
            if (!parents[j].is_number_integer()) fail("parents[" + std::to_string(j) + "]", "expected an integer");
            rig.parents.push_back(parents[j].get<int>());
        }
        const int J = static_cast<int>(parents.size());
        const json& reg = array_of(field(doc, "joint_regressor"), "joint_regressor", J);
        rig.joint_regressor.resize(J, V);
        for (int j = 0; j < J; ++j) {
            const std::string p = "joint_regressor[" + std::to_string(j) + "]";
            const json& row = array_of(reg[j], p, V);
            for (int v = 0; v < V; ++v) rig.joint_regressor(j, v) = number(row[v], p);
        }
        const json& sw = array_of(field(doc, "skin_weights"), "skin_weights", V);
        rig.skin_weights.resize(V, J);
        for (int v = 0; v < V; ++v) {
            const std::string p = "skin_weights[" + std::to_string(v) + "]";
            const json& row = array_of(sw[v], p, J);
            for (int j = 0; j < J; ++j) rig.skin_weights(v, j) = number(row[j], p);
        }
        rig.finalize();
        return rig;
    } catch (const ValidationError& e) {
        throw ValidationError(origin + ": " + e.what());
    }
}

Rig load_rig(const std::filesystem::path& path) { return parse_rig(read_text_file(path), path.string()); }

std::string rig_to_json(const Rig& rig) {
    const int V = rig.num_vertices();
    json doc;
    doc["schema"] = "ngf-rig/1";
    json tv = json::array();
    for (int v = 0; v < V; ++v)
        tv.push_back({rig.template_vertices(v, 0), rig.template_vertices(v, 1), rig.template_vertices(v, 2)});
    doc["template_vertices"] = std::move(tv);
    json faces = json::array(), uvs = json::array();
    for (size_t f = 0; f < rig.faces.size(); ++f) {
        faces.push_back({rig.faces[f][0], rig.faces[f][1], rig.faces[f][2]});
        json corners = json::array();
        for (const auto& p : rig.uv[f]) corners.push_back({p.x(), p.y()});
        uvs.push_back(std::move(corners));
    }
    doc["faces"] = std::move(faces);
    doc["uv_coords"] = std::move(uvs);
    doc["shape_basis"] = write_basis(rig.shape_basis, V);
    doc["expr_basis"] = write_basis(rig.expr_basis, V);
    doc["pose_basis"] = write_basis(rig.pose_basis, V);
    doc["parents"] = rig.parents;
    json reg = json::array();
    for (int j = 0; j < rig.num_joints(); ++j) {
        std::vector<double> row(rig.joint_regressor.row(j).data(), rig.joint_regressor.row(j).data() + 0);
        row.resize(V);
        for (int v = 0; v < V; ++v) row[v] = rig.joint_regressor(j, v);
        reg.push_back(row);
    }
    doc["joint_regressor"] = std::move(reg);
    json sw = json::array();
    for (int v = 0; v < V; ++v) {
        std::vector<double> row(rig.num_joints());
        for (int j = 0; j < rig.num_joints(); ++j) row[j] = rig.skin_weights(v, j);
        sw.push_back(row);
    }
    doc["skin_weights"] = std::move(sw);
    return doc.dump();
}

std::optional<SurfacePoint> barycentric_lookup(const Rig& rig, const Vec2<double>& uv) {
    return rig.locator().locate(uv);
}

// ---------------------------------------------------------------------------
// Body params

template <typename T> BodyParams<T> BodyParams<T>::zeros(const Rig& rig) {
    return {VectorX<T>::Zero(rig.num_shape()), Vertices<T>::Zero(rig.num_joints(), 3),
            VectorX<T>::Zero(rig.num_expr())};
}

template <typename T> void BodyParams<T>::validate(const Rig& rig) const {
    if (beta.size() != rig.num_shape()) throw ConfigError("beta has wrong dimension");
    if (psi.size() != rig.num_expr()) throw ConfigError("psi has wrong dimension");
    if (theta.rows() != rig.num_joints()) throw ConfigError("theta has wrong joint count");
    if (!beta.allFinite() || !psi.allFinite() || !theta.allFinite())
        throw InvalidParameter("body parameters must be finite");
    for (Eigen::Index j = 0; j < theta.rows(); ++j)
        if (!(theta.row(j).norm() < T(2 * std::numbers::pi)))
            throw InvalidParameter("joint " + std::to_string(j) + " rotation angle must be below 2 pi");
}

// ---------------------------------------------------------------------------
// Forward kinematics

namespace {

template <typename T> struct SkinState {
    Vertices<T> joints;
    std::vector<Mat3<T>> local_R, global_R, A_R;
    std::vector<Vec3<T>> global_t, A_t;
};

template <typename T> SkinState<T> skin_state(const Rig& rig, const Vertices<T>& theta, const Vertices<T>& joints) {
    const int J = rig.num_joints();
    SkinState<T> s;
    s.joints = joints;
    s.local_R.resize(J);
    s.global_R.resize(J);
    s.global_t.resize(J);
    s.A_R.resize(J);
    s.A_t.resize(J);
    for (int j = 0; j < J; ++j) {
        s.local_R[j] = axis_angle_to_rotation<T>(theta.row(j).transpose());
        const Vec3<T> Jj = joints.row(j).transpose();
        const int p = rig.parents[j];
        if (p < 0) {
            s.global_R[j] = s.local_R[j];
            s.global_t[j] = Jj;
        } else {
            const Vec3<T> Jp = joints.row(p).transpose();
            s.global_R[j] = s.global_R[p] * s.local_R[j];
            s.global_t[j] = s.global_R[p] * (Jj - Jp) + s.global_t[p];
        }
        // Remove the rest-pose joint location so theta = 0 is the identity.
        // Same value as global_t - G_j J_j, arranged so that it is exactly zero at rest.
        s.A_R[j] = s.global_R[j];
        const Mat3<T> G_parent = p < 0 ? Mat3<T>::Identity() : s.global_R[p];
        s.A_t[j] = (G_parent - s.global_R[j]) * Jj;
        if (p >= 0) s.A_t[j] += s.A_t[p];
    }
    return s;
}

template <typename T> VectorX<T> pose_feature(const std::vector<Mat3<T>>& local_R) {
    const int J = static_cast<int>(local_R.size());
    VectorX<T> f(9 * (J - 1));
    for (int j = 1; j < J; ++j)
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) f[9 * (j - 1) + 3 * r + c] = local_R[j](r, c) - (r == c ? T(1) : T(0));
    return f;
}

template <typename T> Eigen::Map<const VectorX<T>> flat(const Vertices<T>& v) {
    return Eigen::Map<const VectorX<T>>(v.data(), v.size());
}

template <typename T> Vertices<T> unflat(const VectorX<T>& v) {
    return Eigen::Map<const Vertices<T>>(v.data(), v.size() / 3, 3);
}

template <typename T> Vertices<T> shaped_template(const Rig& rig, const BodyParams<T>& params) {
    VectorX<T> out = flat<double>(rig.template_vertices).template cast<T>();
    if (rig.num_shape() > 0) out += rig.shape_basis.template cast<T>() * params.beta;
    return unflat<T>(out);
}

template <typename T> Vertices<T> apply_skin(const Rig& rig, const Vertices<T>& rest, const SkinState<T>& s) {
    const int V = static_cast<int>(rest.rows());
    const int J = rig.num_joints();
    Vertices<T> out(V, 3);
    for (int v = 0; v < V; ++v) {
        // Written as rest + sum_j w (A_j - I) so the rest pose is reproduced
        // bit for bit even when the weights only sum to one up to rounding.
        Mat3<T> R = Mat3<T>::Zero();
        Vec3<T> t = Vec3<T>::Zero();
        for (int j = 0; j < J; ++j) {
            const T w = T(rig.skin_weights(v, j));
            if (w == T(0)) continue;
            R += w * (s.A_R[j] - Mat3<T>::Identity());
            t += w * s.A_t[j];
        }
        const Vec3<T> r = rest.row(v).transpose();
        out.row(v) = (r + (R * r + t)).transpose();
    }
    return out;
}

} // namespace

template <typename T> Vertices<T> rest_joints(const Rig& rig, const BodyParams<T>& params) {
    return rig.joint_regressor.template cast<T>() * shaped_template(rig, params);
}

template <typename T> Vertices<T> blend_shapes(const Rig& rig, const BodyParams<T>& params) {
    params.validate(rig);
    const Vertices<T> shaped = shaped_template(rig, params);
    VectorX<T> out = flat<T>(shaped);
    if (rig.num_expr() > 0) out += rig.expr_basis.template cast<T>() * params.psi;
    if (rig.has_pose_correctives()) {
        std::vector<Mat3<T>> local(rig.num_joints());
        for (int j = 0; j < rig.num_joints(); ++j)
            local[j] = axis_angle_to_rotation<T>(params.theta.row(j).transpose());
        out += rig.pose_basis.template cast<T>() * pose_feature(local);
    }
    return unflat<T>(out);
}

template <typename T> Vertices<T> skin(const Rig& rig, const Vertices<T>& rest, const BodyParams<T>& params) {
    params.validate(rig);
    if (rest.rows() != rig.num_vertices()) throw ConfigError("skin: vertex count mismatch");
    const auto state = skin_state(rig, params.theta, rest_joints(rig, params));
    return apply_skin(rig, rest, state);
}

template <typename T>
Vertices<T> deformed_mesh(const Rig& rig, const BodyParams<T>& params, const Vertices<T>& delta) {
    if (delta.rows() != rig.num_vertices()) throw ConfigError("displacement has wrong vertex count");
    return skin(rig, blend_shapes(rig, params), params) + delta;
}

template <typename T>
RigGradient<T> deformed_mesh_backward(const Rig& rig, const BodyParams<T>& params, const Vertices<T>& delta,
                                      const Vertices<T>& dvertices) {
    params.validate(rig);
    const int V = rig.num_vertices();
    const int J = rig.num_joints();
    if (delta.rows() != V || dvertices.rows() != V) throw ConfigError("deformed_mesh_backward: vertex count mismatch");

    const Vertices<T> shaped = shaped_template(rig, params);
    const Vertices<T> joints = rig.joint_regressor.template cast<T>() * shaped;
    const auto state = skin_state(rig, params.theta, joints);
    const Vertices<T> rest = blend_shapes(rig, params);

    // Skinning: out_v = rest_v + sum_j w_vj ((A_R[j] - I) rest_v + A_t[j]).
    Vertices<T> d_rest(V, 3);
    std::vector<Mat3<T>> dA_R(J, Mat3<T>::Zero());
    std::vector<Vec3<T>> dA_t(J, Vec3<T>::Zero());
    for (int v = 0; v < V; ++v) {
        const Vec3<T> g = dvertices.row(v).transpose();
        const Vec3<T> r = rest.row(v).transpose();
        Mat3<T> R = Mat3<T>::Identity();
        for (int j = 0; j < J; ++j) {
            const T w = T(rig.skin_weights(v, j));
            if (w == T(0)) continue;
            R += w * (state.A_R[j] - Mat3<T>::Identity());
            dA_R[j] += w * g * r.transpose();
            dA_t[j] += w * g;
        }
        d_rest.row(v) = (R.transpose() * g).transpose();
    }

    std::vector<Mat3<T>> dRg(J), dR(J, Mat3<T>::Zero());
    std::vector<Vec3<T>> dtg(J);
    Vertices<T> djoints = Vertices<T>::Zero(J, 3);
    for (int j = 0; j < J; ++j) {
        const Vec3<T> Jj = joints.row(j).transpose();
        dRg[j] = dA_R[j] - dA_t[j] * Jj.transpose();
        dtg[j] = dA_t[j];
        djoints.row(j) -= (state.global_R[j].transpose() * dA_t[j]).transpose();
    }
    for (int j = J - 1; j >= 1; --j) {
        const int p = rig.parents[j];
        const Vec3<T> offset = joints.row(j).transpose() - joints.row(p).transpose();
        dRg[p] += dRg[j] * state.local_R[j].transpose() + dtg[j] * offset.transpose();
        dR[j] += state.global_R[p].transpose() * dRg[j];
        dtg[p] += dtg[j];
        const Vec3<T> dj = state.global_R[p].transpose() * dtg[j];
        djoints.row(j) += dj.transpose();
        djoints.row(p) -= dj.transpose();
    }
    dR[0] += dRg[0];
    djoints.row(0) += dtg[0].transpose();

    if (rig.has_pose_correctives()) {
        const VectorX<T> dcorr = rig.pose_basis.template cast<T>().transpose() * flat<T>(d_rest);
        for (int j = 1; j < J; ++j)
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) dR[j](r, c) += dcorr[9 * (j - 1) + 3 * r + c];
    }

    RigGradient<T> out;
    out.theta.resize(J, 3);
    for (int j = 0; j < J; ++j) {
        const auto jac = axis_angle_jacobian<T>(params.theta.row(j).transpose());
        for (int k = 0; k < 3; ++k) out.theta(j, k) = dR[j].cwiseProduct(jac[k]).sum();
    }
    const Vertices<T> d_shaped = d_rest + rig.joint_regressor.template cast<T>().transpose() * djoints;
    out.beta = rig.num_shape() > 0 ? VectorX<T>(rig.shape_basis.template cast<T>().transpose() * flat<T>(d_shaped))
                                   : VectorX<T>(0);
    out.psi = rig.num_expr() > 0 ? VectorX<T>(rig.expr_basis.template cast<T>().transpose() * flat<T>(d_rest))
                                 : VectorX<T>(0);
    out.delta = dvertices;
    return out;
}

template <typename T> void clamp_displacement(Vertices<T>& delta, double d_max) {
    for (Eigen::Index v = 0; v < delta.rows(); ++v) {
        const T n = delta.row(v).norm();
        if (n > T(d_max)) delta.row(v) *= T(d_max) / n;
    }
}

#define NGF_INSTANTIATE(T)                                                                                  \
    template struct BodyParams<T>;                                                                          \
    template Vertices<T> blend_shapes(const Rig&, const BodyParams<T>&);                                    \
    template Vertices<T> rest_joints(const Rig&, const BodyParams<T>&);                                     \
    template Vertices<T> skin(const Rig&, const Vertices<T>&, const BodyParams<T>&);                        \
    template Vertices<T> deformed_mesh(const Rig&, const BodyParams<T>&, const Vertices<T>&);               \
    template RigGradient<T> deformed_mesh_backward(const Rig&, const BodyParams<T>&, const Vertices<T>&,    \
                                                   const Vertices<T>&);                                     \
    template void clamp_displacement(Vertices<T>&, double);

NGF_INSTANTIATE(float)
NGF_INSTANTIATE(double)

} // namespace ngf
