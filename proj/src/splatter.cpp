#include "ngf/splatter.hpp"

#include "ngf/errors.hpp"
#include "ngf/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

namespace ngf {

double cutoff_radius(double opacity, double alpha_min) {
    if (!(opacity >= alpha_min)) return 0.0;
    return std::sqrt(2.0 * std::log(opacity / alpha_min));
}

namespace {

void fnv_mix(std::uint64_t& h, const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
}

using Clock = std::chrono::steady_clock;
double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct TileRect {
    int x0, y0, x1, y1; // inclusive
};

} // namespace

template <typename T> std::uint64_t gaussians_fingerprint(const FrameGaussians<T>& g, const Camera& cam) {
    std::uint64_t h = 1469598103934665603ull;
    const int n = g.size();
    fnv_mix(h, &n, sizeof n);
    fnv_mix(h, g.position.data(), sizeof(T) * g.position.size());
    fnv_mix(h, g.opacity.data(), sizeof(T) * g.opacity.size());
    fnv_mix(h, g.features.data(), sizeof(T) * g.features.size());
    for (const auto& c : g.covariance) fnv_mix(h, c.data(), sizeof(T) * 9);
    fnv_mix(h, g.valid.data(), g.valid.size());
    const double intr[4] = {cam.fx, cam.fy, cam.cx, cam.cy};
    fnv_mix(h, intr, sizeof intr);
    fnv_mix(h, cam.world_to_camera.data(), sizeof(double) * 16);
    fnv_mix(h, &cam.width, sizeof cam.width);
    fnv_mix(h, &cam.height, sizeof cam.height);
    return h;
}

template <typename T>
FeatureImage<T> rasterize_forward(const FrameGaussians<T>& gaussians, const Camera& cam, SplatWorkspace<T>& ws,
                                  const RasterSettings& settings) {
    cam.validate();
    const int n = gaussians.size();
    const int K = gaussians.num_features();
    if (static_cast<int>(gaussians.covariance.size()) != n || gaussians.opacity.size() != n ||
        gaussians.features.rows() != n || static_cast<int>(gaussians.valid.size()) != n) {
        throw ConfigError("rasterize_forward: inconsistent Gaussian buffers");
    }
    const int W = cam.width, H = cam.height, ts = settings.tile_size;
    ws = SplatWorkspace<T>{};
    ws.width = W;
    ws.height = H;
    ws.tiles_x = (W + ts - 1) / ts;
    ws.tiles_y = (H + ts - 1) / ts;
    ws.num_features = K;
    ws.settings = settings;
    ws.camera = cam;
    ws.fingerprint = gaussians_fingerprint(gaussians, cam);
    ws.opacity.assign(gaussians.opacity.data(), gaussians.opacity.data() + n);
    ws.skip_power.resize(n);
    for (int i = 0; i < n; ++i) {
        const double o = gaussians.opacity[i];
        ws.skip_power[i] = o > 0 ? T(std::log(settings.alpha_min / o) - 1e-3) : T(0);
    }
    ws.features = gaussians.features;

    auto t0 = Clock::now();
    ws.projected.resize(n);
    std::vector<std::uint8_t> active(n, 0);
    std::vector<TileRect> rects(n);
    const T floor = T(settings.cov_floor), z_near = T(settings.z_near);
    parallel_for(n, [&](size_t b, size_t e) {
        for (size_t i = b; i < e; ++i) {
            if (!gaussians.valid[i] || !(double(gaussians.opacity[i]) >= settings.alpha_min)) continue;
            const auto proj = project_gaussian<T>(gaussians.position.row(i).transpose(), gaussians.covariance[i],
                                                  cam, floor, z_near);
            ws.projected[i] = proj;
            if (!proj.visible || !proj.conic.allFinite() || !proj.mean.allFinite()) continue;
            const double r = cutoff_radius(double(gaussians.opacity[i]), settings.alpha_min) * (1.0 + 1e-4) + 1e-3;
            const double ex = r * std::sqrt(double(proj.cov(0, 0))) + 0.01;
            const double ey = r * std::sqrt(double(proj.cov(1, 1))) + 0.01;
            const double mx = proj.mean.x(), my = proj.mean.y();
            if (mx + ex < 0 || my + ey < 0 || mx - ex > W - 1 || my - ey > H - 1) continue;
            TileRect rc;
            rc.x0 = std::clamp(static_cast<int>(std::floor(std::max(0.0, mx - ex))) / ts, 0, ws.tiles_x - 1);
            rc.y0 = std::clamp(static_cast<int>(std::floor(std::max(0.0, my - ey))) / ts, 0, ws.tiles_y - 1);
            rc.x1 = std::clamp(static_cast<int>(std::floor(std::min(W - 1.0, mx + ex))) / ts, 0, ws.tiles_x - 1);
            rc.y1 = std::clamp(static_cast<int>(std::floor(std::min(H - 1.0, my + ey))) / ts, 0, ws.tiles_y - 1);
            rects[i] = rc;
            active[i] = 1;
        }
    });
    ws.project_ms = ms_since(t0);

    t0 = Clock::now();
    std::vector<std::int32_t> order;
    order.reserve(n);
    for (int i = 0; i < n; ++i)
        if (active[i]) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        const T da = ws.projected[a].depth, db = ws.projected[b].depth;
        return da < db || (da == db && a < b);
    });
    const int num_tiles = ws.tiles_x * ws.tiles_y;
    std::vector<std::uint32_t> counts(num_tiles + 1, 0);
    for (int g : order) {
        const TileRect& rc = rects[g];
        for (int ty = rc.y0; ty <= rc.y1; ++ty)
            for (int tx = rc.x0; tx <= rc.x1; ++tx) ++counts[ty * ws.tiles_x + tx + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    ws.tile_offsets = counts;
    ws.tile_lists.resize(counts.back());
    std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
    for (int g : order) {
        const TileRect& rc = rects[g];
        for (int ty = rc.y0; ty <= rc.y1; ++ty)
            for (int tx = rc.x0; tx <= rc.x1; ++tx) ws.tile_lists[cursor[ty * ws.tiles_x + tx]++] = g;
    }
    ws.bin_ms = ms_since(t0);

    t0 = Clock::now();
    FeatureImage<T> out(K + 1, H, W);
    ws.final_transmittance.assign(static_cast<size_t>(W) * H, T(1));
    ws.contributors.assign(static_cast<size_t>(W) * H, 0);
    const T clamp = T(settings.alpha_clamp), amin = T(settings.alpha_min), tmin = T(settings.transmittance_min);
    parallel_for(num_tiles, [&](size_t tb, size_t te) {
        std::vector<T> acc(K);
        for (size_t tile = tb; tile < te; ++tile) {
            const int tx = static_cast<int>(tile) % ws.tiles_x, ty = static_cast<int>(tile) / ws.tiles_x;
            const std::uint32_t begin = ws.tile_offsets[tile], end = ws.tile_offsets[tile + 1];
            for (int y = ty * ts; y < std::min(H, (ty + 1) * ts); ++y)
                for (int x = tx * ts; x < std::min(W, (tx + 1) * ts); ++x) {
                    std::fill(acc.begin(), acc.end(), T(0));
                    T Tr = T(1);
                    std::uint32_t last = 0;
                    for (std::uint32_t p = begin; p < end; ++p) {
                        const int g = ws.tile_lists[p];
                        const auto& pg = ws.projected[g];
                        const T power = gaussian_power(pg.conic, T(x) - pg.mean.x(), T(y) - pg.mean.y());
                        if (power < ws.skip_power[g]) continue;
                        const T alpha = std::min(clamp, ws.opacity[g] * std::exp(power));
                        if (alpha < amin) continue;
                        const T next = Tr * (T(1) - alpha);
                        if (next < tmin) break;
                        const T w = alpha * Tr;
                        const T* f = &ws.features(g, 0);
                        for (int k = 0; k < K; ++k) acc[k] += f[k] * w;
                        Tr = next;
                        last = p - begin + 1;
                    }
                    const size_t pix = static_cast<size_t>(y) * W + x;
                    for (int k = 0; k < K; ++k) out.plane(k)[pix] = acc[k];
                    out.plane(K)[pix] = T(1) - Tr;
                    ws.final_transmittance[pix] = Tr;
                    ws.contributors[pix] = last;
                }
        }
    });
    ws.blend_ms = ms_since(t0);
    return out;
}

template <typename T>
GaussianGrad<T> rasterize_backward(const FrameGaussians<T>& gaussians, const Camera& cam,
                                   const SplatWorkspace<T>& ws, const FeatureImage<T>& grad) {
    if (gaussians_fingerprint(gaussians, cam) != ws.fingerprint) {
        throw ContractViolation("rasterize_backward: workspace comes from a different forward pass");
    }
    const int K = ws.num_features, W = ws.width, H = ws.height, ts = ws.settings.tile_size;
    if (grad.channels != K + 1 || grad.width != W || grad.height != H) {
        throw ContractViolation("rasterize_backward: gradient image shape does not match the forward output");
    }
    const int n = gaussians.size();
    const int stride = 6 + K; // dmean(2), dconic(3), dopacity, dfeatures
    std::vector<T> entry(static_cast<size_t>(ws.tile_lists.size()) * stride, T(0));
    const T clamp = T(ws.settings.alpha_clamp), amin = T(ws.settings.alpha_min);
    const int num_tiles = ws.tiles_x * ws.tiles_y;

    parallel_for(num_tiles, [&](size_t tb, size_t te) {
        std::vector<T> gc(K);
        for (size_t tile = tb; tile < te; ++tile) {
            const int tx = static_cast<int>(tile) % ws.tiles_x, ty = static_cast<int>(tile) / ws.tiles_x;
            const std::uint32_t begin = ws.tile_offsets[tile];
            for (int y = ty * ts; y < std::min(H, (ty + 1) * ts); ++y)
                for (int x = tx * ts; x < std::min(W, (tx + 1) * ts); ++x) {
                    const size_t pix = static_cast<size_t>(y) * W + x;
                    const std::uint32_t count = ws.contributors[pix];
                    if (count == 0) continue;
                    bool any = false;
                    for (int k = 0; k < K; ++k) {
                        gc[k] = grad.plane(k)[pix];
                        any |= gc[k] != T(0);
                    }
                    const T ga = grad.plane(K)[pix];
                    if (!any && ga == T(0)) continue;
                    const T T_final = ws.final_transmittance[pix];
                    T Tr = T_final;
                    T s_after = 0;
                    for (std::uint32_t p = begin + count; p-- > begin;) {
                        const int g = ws.tile_lists[p];
                        const auto& pg = ws.projected[g];
                        const T dx = T(x) - pg.mean.x(), dy = T(y) - pg.mean.y();
                        const T power = gaussian_power(pg.conic, dx, dy);
                        if (power < ws.skip_power[g]) continue;
                        const T G = std::exp(power);
                        const T raw = ws.opacity[g] * G;
                        const T alpha = std::min(clamp, raw);
                        if (alpha < amin) continue;
                        const T inv = T(1) / (T(1) - alpha);
                        Tr *= inv;
                        const T* f = &ws.features(g, 0);
                        T fdot = 0;
                        for (int k = 0; k < K; ++k) fdot += f[k] * gc[k];
                        const T dalpha = Tr * fdot - s_after * inv + ga * T_final * inv;
                        const T w = alpha * Tr;
                        s_after += fdot * w;
                        T* e = &entry[static_cast<size_t>(p) * stride];
                        for (int k = 0; k < K; ++k) e[6 + k] += w * gc[k];
                        if (raw < clamp) {
                            e[5] += dalpha * G;
                            const T dpower = dalpha * raw;
                            const Vec3<T>& q = pg.conic;
                            e[0] += dpower * (q[0] * dx + q[1] * dy);
                            e[1] += dpower * (q[2] * dy + q[1] * dx);
                            e[2] += T(-0.5) * dx * dx * dpower;
                            e[3] += -dx * dy * dpower;
                            e[4] += T(-0.5) * dy * dy * dpower;
                        }
                    }
                }
        }
    });

    // Ordered reduction over tiles keeps the sums independent of scheduling.
    std::vector<T> per(static_cast<size_t>(n) * stride, T(0));
    for (size_t p = 0; p < ws.tile_lists.size(); ++p) {
        T* dst = &per[static_cast<size_t>(ws.tile_lists[p]) * stride];
        const T* src = &entry[p * stride];
        for (int k = 0; k < stride; ++k) dst[k] += src[k];
    }

    GaussianGrad<T> out = GaussianGrad<T>::zeros(n, K);
    parallel_for(n, [&](size_t b, size_t e) {
        for (size_t i = b; i < e; ++i) {
            const T* d = &per[i * stride];
            bool any = false;
            for (int k = 0; k < stride; ++k) any |= d[k] != T(0);
            if (!any) continue;
            out.opacity[i] = d[5];
            for (int k = 0; k < K; ++k) out.features(i, k) = d[6 + k];
            const auto pg = project_gaussian_backward(ws.projected[i], ws.camera, Vec2<T>{d[0], d[1]},
                                                      Vec3<T>{d[2], d[3], d[4]});
            out.position.row(i) = pg.dx0.transpose();
            out.covariance[i] = pg.dsigma;
        }
    });
    return out;
}

template <typename T> BlendStructure blend_structure(const SplatWorkspace<T>& ws) {
    const int W = ws.width, H = ws.height, ts = ws.settings.tile_size;
    const T clamp = T(ws.settings.alpha_clamp), amin = T(ws.settings.alpha_min),
            tmin = T(ws.settings.transmittance_min);
    BlendStructure out;
    out.pixels.resize(static_cast<size_t>(W) * H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int tile = (y / ts) * ws.tiles_x + x / ts;
            auto& rec = out.pixels[static_cast<size_t>(y) * W + x];
            T Tr = 1;
            for (std::uint32_t p = ws.tile_offsets[tile]; p < ws.tile_offsets[tile + 1]; ++p) {
                const int g = ws.tile_lists[p];
                const auto& pg = ws.projected[g];
                const T power = gaussian_power(pg.conic, T(x) - pg.mean.x(), T(y) - pg.mean.y());
                if (power < ws.skip_power[g]) continue;
                const T raw = ws.opacity[g] * std::exp(power);
                const T alpha = std::min(clamp, raw);
                if (alpha < amin) continue;
                const T next = Tr * (T(1) - alpha);
                if (next < tmin) {
                    rec.push_back(std::numeric_limits<std::int32_t>::min());
                    break;
                }
                rec.push_back(raw < clamp ? g : ~g);
                Tr = next;
            }
        }
    return out;
}

std::string BenchmarkReport::to_json() const {
    nlohmann::json j;
    j["resolution"] = {width, height};
    j["gaussian_count"] = gaussian_count;
    j["repeats"] = repeats;
    j["median_ms"] = median_ms;
    j["p95_ms"] = p95_ms;
    j["fps"] = fps;
    j["stages_median_ms"] = {{"project", project_ms}, {"bin_sort", bin_ms}, {"blend", blend_ms}};
    return j.dump(2);
}

BenchmarkReport benchmark(const FrameGaussians<float>& gaussians, const Camera& cam, int repeats) {
    if (repeats < 10) throw InvalidParameter("benchmark needs at least 10 repeats");
    std::vector<double> total, project, bin, blend;
    SplatWorkspace<float> ws;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        rasterize_forward(gaussians, cam, ws);
        total.push_back(ms_since(t0));
        project.push_back(ws.project_ms);
        bin.push_back(ws.bin_ms);
        blend.push_back(ws.blend_ms);
    }
    auto quantile = [](std::vector<double> v, double q) {
        std::sort(v.begin(), v.end());
        const size_t idx = std::min(v.size() - 1, static_cast<size_t>(std::ceil(q * v.size())) - 1);
        return v[idx];
    };
    BenchmarkReport rep;
    rep.width = cam.width;
    rep.height = cam.height;
    rep.gaussian_count = gaussians.size();
    rep.repeats = repeats;
    rep.median_ms = quantile(total, 0.5);
    rep.p95_ms = quantile(total, 0.95);
    rep.fps = rep.median_ms > 0 ? 1000.0 / rep.median_ms : 0.0;
    rep.project_ms = quantile(project, 0.5);
    rep.bin_ms = quantile(bin, 0.5);
    rep.blend_ms = quantile(blend, 0.5);
    return rep;
}

Camera default_camera(int width, int height) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = 1.2 * width;
    cam.cx = (width - 1) / 2.0;
    cam.cy = (height - 1) / 2.0;
    return cam;
}

FrameGaussians<double> random_scene(int count, int num_features, const Camera& cam, std::uint64_t seed,
                                    double scale_min, double scale_max) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto g = FrameGaussians<double>::zeros(count, num_features);
    const Mat3<double> Rinv = cam.rotation().transpose();
    for (int i = 0; i < count; ++i) {
        const double z = 2.0 + 2.0 * unit(rng);
        const double u = -0.1 * cam.width + 1.2 * cam.width * unit(rng);
        const double v = -0.1 * cam.height + 1.2 * cam.height * unit(rng);
        const Vec3<double> pc{(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z};
        g.position.row(i) = (Rinv * (pc - cam.translation())).transpose();
        Quaternion<double> q{normal(rng), normal(rng), normal(rng), normal(rng)};
        const Vec3<double> s{scale_min + (scale_max - scale_min) * unit(rng),
                             scale_min + (scale_max - scale_min) * unit(rng),
                             scale_min + (scale_max - scale_min) * unit(rng)};
        g.covariance[i] = build_covariance(q, s);
        g.opacity[i] = 0.05 + 0.9 * unit(rng);
        for (int k = 0; k < num_features; ++k) g.features(i, k) = normal(rng);
    }
    return g;
}

#define NGF_INSTANTIATE(T)                                                                                    \
    template std::uint64_t gaussians_fingerprint(const FrameGaussians<T>&, const Camera&);                    \
    template FeatureImage<T> rasterize_forward(const FrameGaussians<T>&, const Camera&, SplatWorkspace<T>&,   \
                                               const RasterSettings&);                                        \
    template GaussianGrad<T> rasterize_backward(const FrameGaussians<T>&, const Camera&,                      \
                                                const SplatWorkspace<T>&, const FeatureImage<T>&);            \
    template BlendStructure blend_structure(const SplatWorkspace<T>&);

NGF_INSTANTIATE(float)
NGF_INSTANTIATE(double)

} // namespace ngf
