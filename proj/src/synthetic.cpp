#include "ngf/synthetic.hpp"

#include "ngf/errors.hpp"
#include "ngf/hash.hpp"
#include "ngf/png_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace ngf {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthSpec::validate() const {
    if (n_frames < 1) throw InvalidParameter("n_frames must be at least 1");
    if (width < 16 || height < 16) throw InvalidParameter("resolution must be at least 16x16");
    if (rig_preset != "sphere-head") throw InvalidParameter("unknown rig preset '" + rig_preset + "'");
    if (motion_preset != "gentle" && motion_preset != "static") {
        throw InvalidParameter("unknown motion preset '" + motion_preset + "'");
    }
    if (texture_preset != "face" && texture_preset != "flat") {
        throw InvalidParameter("unknown texture preset '" + texture_preset + "'");
    }
}

SynthSpec parse_synth_spec(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synth spec: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("synth spec: expected an object");
    SynthSpec s;
    for (const auto& [key, v] : doc.items()) {
        try {
            if (key == "n_frames") {
                s.n_frames = v.get<int>();
            } else if (key == "resolution") {
                if (v.is_array()) {
                    if (v.size() != 2) throw ConfigError("synth spec: resolution must be N or [W, H]");
                    s.width = v[0].get<int>();
                    s.height = v[1].get<int>();
                } else {
                    s.width = s.height = v.get<int>();
                }
            } else if (key == "rig_preset") {
                s.rig_preset = v.get<std::string>();
            } else if (key == "motion_preset") {
                s.motion_preset = v.get<std::string>();
            } else if (key == "texture_preset") {
                s.texture_preset = v.get<std::string>();
            } else if (key == "seed") {
                s.seed = v.get<std::uint64_t>();
            } else {
                throw ConfigError("synth spec: unknown key '" + key + "'");
            }
        } catch (const json::exception& e) {
            throw ConfigError("synth spec: bad value for '" + key + "' (" + e.what() + ")");
        }
    }
    s.validate();
    return s;
}

namespace {

constexpr int kLon = 32, kLat = 16;

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

double blob(const Vec3<double>& p, const Vec3<double>& c, double sigma) {
    return std::exp(-(p - c).squaredNorm() / (2.0 * sigma * sigma));
}

} // namespace

Rig make_sphere_head_rig() {
    Rig rig;
    const int V = 2 + (kLat - 1) * kLon;
    rig.template_vertices.resize(V, 3);
    auto ring_index = [](int i, int j) { return 1 + (i - 1) * kLon + (j % kLon); };
    rig.template_vertices.row(0) = Vec3<double>(0, -1, 0).transpose();
    for (int i = 1; i < kLat; ++i) {
        const double phi = std::numbers::pi * i / kLat;
        for (int j = 0; j < kLon; ++j) {
            // Longitude 0 faces away from the camera so the UV seam sits at the back.
            const double lam = 2.0 * std::numbers::pi * j / kLon;
            rig.template_vertices.row(ring_index(i, j)) =
                Vec3<double>(std::sin(phi) * std::sin(lam), -std::cos(phi), std::sin(phi) * std::cos(lam)).transpose();
        }
    }
    rig.template_vertices.row(V - 1) = Vec3<double>(0, 1, 0).transpose();

    auto uv_of = [](int i, int j) { return Vec2<double>(double(j) / kLon, double(i) / kLat); };
    for (int j = 0; j < kLon; ++j) {
        rig.faces.push_back({0, ring_index(1, j + 1), ring_index(1, j)});
        rig.uv.push_back({Vec2<double>((j + 0.5) / kLon, 0.0), uv_of(1, j + 1), uv_of(1, j)});
    }
    for (int i = 1; i < kLat - 1; ++i)
        for (int j = 0; j < kLon; ++j) {
            rig.faces.push_back({ring_index(i, j), ring_index(i, j + 1), ring_index(i + 1, j + 1)});
            rig.uv.push_back({uv_of(i, j), uv_of(i, j + 1), uv_of(i + 1, j + 1)});
            rig.faces.push_back({ring_index(i, j), ring_index(i + 1, j + 1), ring_index(i + 1, j)});
            rig.uv.push_back({uv_of(i, j), uv_of(i + 1, j + 1), uv_of(i + 1, j)});
        }
    for (int j = 0; j < kLon; ++j) {
        rig.faces.push_back({ring_index(kLat - 1, j), ring_index(kLat - 1, j + 1), V - 1});
        rig.uv.push_back({uv_of(kLat - 1, j), uv_of(kLat - 1, j + 1), Vec2<double>((j + 0.5) / kLon, 1.0)});
    }

    rig.shape_basis = Eigen::MatrixXd::Zero(3 * V, 2);
    rig.expr_basis = Eigen::MatrixXd::Zero(3 * V, 2);
    rig.pose_basis = Eigen::MatrixXd::Zero(3 * V, 0);
    const Vec3<double> mouth = Vec3<double>(0, 0.45, -0.9).normalized();
    const Vec3<double> brow = Vec3<double>(0, -0.45, -0.9).normalized();
    rig.skin_weights.resize(V, 2);
    for (int v = 0; v < V; ++v) {
        const Vec3<double> p = rig.template_vertices.row(v).transpose();
        rig.shape_basis(3 * v + 0, 0) = 0.15 * p.x(); // widen
        rig.shape_basis(3 * v + 2, 0) = 0.05 * p.z();
        rig.shape_basis(3 * v + 1, 1) = 0.15 * p.y(); // elongate
        const double gm = blob(p, mouth, 0.2);
        rig.expr_basis(3 * v + 0, 0) = 0.25 * p.x() * gm; // smile: corners out and up
        rig.expr_basis(3 * v + 1, 0) = -0.04 * gm;
        const double gb = blob(p, brow, 0.2);
        rig.expr_basis(3 * v + 1, 1) = -0.06 * gb; // brow raise
        const double jaw = smoothstep(0.25, 0.55, p.y()) * smoothstep(0.1, -0.3, p.z());
        rig.skin_weights(v, 0) = 1.0 - jaw;
        rig.skin_weights(v, 1) = jaw;
    }
    rig.parents = {-1, 0};
    rig.joint_regressor = Eigen::MatrixXd::Zero(2, V);
    rig.joint_regressor(0, V - 1) = 1.0;
    const int hinge_ring = 10;
    rig.joint_regressor(1, ring_index(hinge_ring, kLon / 4)) = 0.5;
    rig.joint_regressor(1, ring_index(hinge_ring, 3 * kLon / 4)) = 0.5;
    rig.finalize();
    return rig;
}

Camera synthetic_camera(int width, int height) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = 150.0 * width / 128.0;
    cam.cx = (width - 1) / 2.0;
    cam.cy = (height - 1) / 2.0;
    cam.world_to_camera = Mat4<double>::Identity();
    cam.world_to_camera(2, 3) = 3.5;
    return cam;
}

SurfaceTexture make_texture(const std::string& preset) {
    if (preset == "flat") {
        return [](const Vec3<double>&) { return Vec3<double>(0.8, 0.6, 0.5); };
    }
    if (preset != "face") throw InvalidParameter("unknown texture preset '" + preset + "'");
    return [](const Vec3<double>& q) {
        const Vec3<double> p = q.normalized();
        auto mix = [](Vec3<double>& c, const Vec3<double>& to, double w) { c = (1.0 - w) * c + w * to; };
        Vec3<double> c(0.87, 0.68, 0.55);
        mix(c, Vec3<double>(0.93, 0.62, 0.58), blob(p, Vec3<double>(-0.55, 0.25, -0.8).normalized(), 0.2) * 0.6);
        mix(c, Vec3<double>(0.93, 0.62, 0.58), blob(p, Vec3<double>(0.55, 0.25, -0.8).normalized(), 0.2) * 0.6);
        mix(c, Vec3<double>(0.78, 0.55, 0.45), blob(p, Vec3<double>(0, 0.1, -1).normalized(), 0.1));
        const double hair = std::max(smoothstep(-0.35, -0.6, p.y()), smoothstep(0.2, 0.6, p.z()));
        mix(c, Vec3<double>(0.28, 0.17, 0.1), hair);
        for (double sx : {-0.33, 0.33}) {
            const Vec3<double> eye = Vec3<double>(sx, -0.2, -0.92).normalized();
            mix(c, Vec3<double>(0.96, 0.96, 0.94), blob(p, eye, 0.09));
            mix(c, Vec3<double>(0.15, 0.2, 0.35), blob(p, eye, 0.045));
        }
        const Vec3<double> m = Vec3<double>(0, 0.45, -0.9).normalized();
        const Vec3<double> d = p - m;
        const double wm = std::exp(-(d.x() * d.x() / (2 * 0.18 * 0.18) + (d.y() * d.y() + d.z() * d.z()) / (2 * 0.05 * 0.05)));
        mix(c, Vec3<double>(0.72, 0.25, 0.27), wm);
        return c;
    };
}

ReferenceRender render_reference(const Rig& rig, const Vertices<double>& posed, const Camera& cam,
                                 const SurfaceTexture& texture, int samples) {
    const int W = cam.width, H = cam.height, S = samples;
    const int SW = W * S, SH = H * S;
    std::vector<double> zbuf(static_cast<size_t>(SW) * SH, std::numeric_limits<double>::infinity());
    std::vector<int> tri(static_cast<size_t>(SW) * SH, -1);
    std::vector<Vec3<double>> bary(static_cast<size_t>(SW) * SH);
    const Mat3<double> R = cam.rotation();
    const Vec3<double> t = cam.translation();
    std::vector<Vec3<double>> pc(posed.rows());
    for (Eigen::Index v = 0; v < posed.rows(); ++v) pc[v] = R * posed.row(v).transpose() + t;
    auto sample_coord = [S](int s) { return (s % S + 0.5) / S - 0.5 + s / S; };

    for (int f = 0; f < rig.num_faces(); ++f) {
        const auto& face = rig.faces[f];
        Vec2<double> q[3];
        double z[3];
        bool ok = true;
        for (int k = 0; k < 3; ++k) {
            const Vec3<double>& p = pc[face[k]];
            if (!(p.z() > kNearPlane)) ok = false;
            z[k] = p.z();
            q[k] = {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
        }
        if (!ok) continue;
        const double area = (q[1] - q[0]).x() * (q[2] - q[0]).y() - (q[1] - q[0]).y() * (q[2] - q[0]).x();
        if (area == 0.0) continue;
        const double xmin = std::min({q[0].x(), q[1].x(), q[2].x()}), xmax = std::max({q[0].x(), q[1].x(), q[2].x()});
        const double ymin = std::min({q[0].y(), q[1].y(), q[2].y()}), ymax = std::max({q[0].y(), q[1].y(), q[2].y()});
        // Sample s sits at pixel floor(s / S) + offset; invert for the bounding range.
        const int sx0 = std::max(0, static_cast<int>(std::floor((xmin + 0.5) * S)) - 1);
        const int sx1 = std::min(SW - 1, static_cast<int>(std::ceil((xmax + 0.5) * S)) + 1);
        const int sy0 = std::max(0, static_cast<int>(std::floor((ymin + 0.5) * S)) - 1);
        const int sy1 = std::min(SH - 1, static_cast<int>(std::ceil((ymax + 0.5) * S)) + 1);
        for (int sy = sy0; sy <= sy1; ++sy)
            for (int sx = sx0; sx <= sx1; ++sx) {
                const Vec2<double> s(sample_coord(sx), sample_coord(sy));
                double l[3];
                for (int k = 0; k < 3; ++k) {
                    const Vec2<double>& a = q[(k + 1) % 3];
                    const Vec2<double>& b = q[(k + 2) % 3];
                    l[k] = ((b - a).x() * (s - a).y() - (b - a).y() * (s - a).x()) / area;
                }
                if (l[0] < 0 || l[1] < 0 || l[2] < 0) continue;
                const double w0 = l[0] / z[0], w1 = l[1] / z[1], w2 = l[2] / z[2];
                const double depth = 1.0 / (w0 + w1 + w2);
                const size_t idx = static_cast<size_t>(sy) * SW + sx;
                if (depth < zbuf[idx]) {
                    zbuf[idx] = depth;
                    tri[idx] = f;
                    bary[idx] = Vec3<double>(w0, w1, w2) * depth;
                }
            }
    }

    ReferenceRender out{Image<double>(3, H, W), Image<double>(1, H, W)};
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            Vec3<double> acc = Vec3<double>::Zero();
            int covered = 0;
            for (int sy = 0; sy < S; ++sy)
                for (int sx = 0; sx < S; ++sx) {
                    const size_t idx = static_cast<size_t>(y * S + sy) * SW + (x * S + sx);
                    if (tri[idx] < 0) {
                        acc += Vec3<double>::Ones();
                        continue;
                    }
                    ++covered;
                    const auto& face = rig.faces[tri[idx]];
                    Vec3<double> rest = Vec3<double>::Zero();
                    for (int k = 0; k < 3; ++k) rest += bary[idx][k] * rig.template_vertices.row(face[k]).transpose();
                    acc += texture(rest);
                }
            for (int c = 0; c < 3; ++c) out.color.at(c, y, x) = acc[c] / (S * S);
            out.coverage.at(0, y, x) = double(covered) / (S * S);
        }
    return out;
}

namespace {

BodyParams<double> motion_params(const Rig& rig, const SynthSpec& spec, const Eigen::VectorXd& beta, int frame) {
    auto p = BodyParams<double>::zeros(rig);
    p.beta = beta;
    if (spec.motion_preset == "static") return p;
    const double t = 2.0 * std::numbers::pi * frame / spec.n_frames;
    p.theta.row(0) << 0.10 * std::sin(t), 0.25 * std::sin(t + 1.0), 0.05 * std::sin(2.0 * t);
    p.theta.row(1) << 0.10 * (1.0 - std::cos(2.0 * t)), 0.0, 0.0;
    p.psi << 0.8 * std::sin(t + 0.5), 0.8 * std::cos(2.0 * t);
    return p;
}

PixelRect face_box(const Rig& rig, const Vertices<double>& posed, const Camera& cam) {
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    const Mat3<double> R = cam.rotation();
    const Vec3<double> t = cam.translation();
    for (int v = 0; v < rig.num_vertices(); ++v) {
        const Vec3<double> rest = rig.template_vertices.row(v).transpose();
        if (!(rest.z() < -0.55 && rest.y() > -0.55 && rest.y() < 0.75)) continue;
        const Vec3<double> p = R * posed.row(v).transpose() + t;
        const double u = cam.fx * p.x() / p.z() + cam.cx, w = cam.fy * p.y() / p.z() + cam.cy;
        x0 = std::min(x0, u);
        x1 = std::max(x1, u);
        y0 = std::min(y0, w);
        y1 = std::max(y1, w);
    }
    const int bx0 = std::clamp(static_cast<int>(std::floor(x0)) - 2, 0, cam.width - 1);
    const int by0 = std::clamp(static_cast<int>(std::floor(y0)) - 2, 0, cam.height - 1);
    const int bx1 = std::clamp(static_cast<int>(std::ceil(x1)) + 2, 0, cam.width - 1);
    const int by1 = std::clamp(static_cast<int>(std::ceil(y1)) + 2, 0, cam.height - 1);
    return {bx0, by0, bx1 - bx0 + 1, by1 - by0 + 1};
}

} // namespace

void make_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
    spec.validate();
    const Rig rig = make_sphere_head_rig();
    const SurfaceTexture texture = make_texture(spec.texture_preset);
    fs::create_directories(out_dir / "frames");
    fs::create_directories(out_dir / "masks");
    fs::create_directories(out_dir / "head_torso");
    const std::string rig_doc = rig_to_json(rig);
    write_text_file(out_dir / "rig.json", rig_doc);

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> uni(-0.5, 0.5);
    Eigen::VectorXd beta(rig.num_shape());
    for (auto& b : beta) b = uni(rng);

    Dataset ds;
    ds.intrinsics = synthetic_camera(spec.width, spec.height);
    ds.rig_path = "rig.json";
    ds.rig_sha256 = sha256_hex(rig_doc);
    for (int i = 0; i < spec.n_frames; ++i) {
        FrameRecord rec;
        rec.pose = ds.intrinsics.world_to_camera;
        rec.params = motion_params(rig, spec, beta, i);
        const Vertices<double> posed =
            deformed_mesh(rig, rec.params, Vertices<double>::Zero(rig.num_vertices(), 3).eval());
        const ReferenceRender ref = render_reference(rig, posed, ds.intrinsics, texture, 4);
        rec.face_box = face_box(rig, posed, ds.intrinsics);
        ImageU8 mask(1, spec.height, spec.width);
        for (size_t k = 0; k < mask.data.size(); ++k) mask.data[k] = ref.coverage.data[k] >= 0.5 ? 255 : 0;
        write_png(out_dir / "frames" / frame_name(i), to_u8(ref.color));
        write_png(out_dir / "masks" / frame_name(i), mask);
        write_png(out_dir / "head_torso" / frame_name(i), mask);
        ds.frames.push_back(std::move(rec));
    }
    write_text_file(out_dir / "params.json", dataset_params_json(ds));
}

} // namespace ngf
