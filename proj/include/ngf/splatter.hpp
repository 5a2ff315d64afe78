#pragma once

#include "ngf/field.hpp"
#include "ngf/geometry.hpp"
#include "ngf/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ngf {

struct RasterSettings {
    int tile_size{16};
    double alpha_clamp{0.99};
    double alpha_min{1.0 / 255.0};
    double transmittance_min{1e-4};
    double cov_floor{kCovariance2dFloor};
    double z_near{kNearPlane};
};

/// K_f feature planes followed by one alpha plane.
template <typename T> using FeatureImage = Image<T>;

/// Everything the backward pass needs from a forward pass.
template <typename T>
struct SplatWorkspace {
    int width{0}, height{0}, tiles_x{0}, tiles_y{0}, num_features{0};
    RasterSettings settings;
    Camera camera;
    std::vector<ProjectedGaussian<T>> projected;
    std::vector<T> opacity;
    std::vector<T> skip_power; // exponents below this cannot reach alpha_min
    MatrixRX<T> features;
    std::vector<std::uint32_t> tile_offsets; // tiles + 1 entries into tile_lists
    std::vector<std::int32_t> tile_lists;    // per tile, sorted by (depth, index)
    std::vector<T> final_transmittance;      // per pixel
    std::vector<std::uint32_t> contributors; // per pixel: list prefix length actually traversed
    std::uint64_t fingerprint{0};
    double project_ms{0}, bin_ms{0}, blend_ms{0};
};

/// Extent in standard deviations within which a Gaussian of opacity `o` can
/// still produce alpha >= alpha_min. Binning uses this radius so the tiled
/// result matches an unbounded per-pixel evaluation exactly.
double cutoff_radius(double opacity, double alpha_min);

template <typename T>
FeatureImage<T> rasterize_forward(const FrameGaussians<T>& gaussians, const Camera& cam, SplatWorkspace<T>& ws,
                                  const RasterSettings& settings = {});

/// Throws ContractViolation when `ws` was not produced from these Gaussians
/// and camera, or when the gradient image has the wrong shape.
template <typename T>
GaussianGrad<T> rasterize_backward(const FrameGaussians<T>& gaussians, const Camera& cam,
                                   const SplatWorkspace<T>& ws, const FeatureImage<T>& grad);

template <typename T> std::uint64_t gaussians_fingerprint(const FrameGaussians<T>& g, const Camera& cam);

/// Per-pixel record of which Gaussians contribute and whether their alpha was
/// clamped. Equal structures at two parameter values mean the blend is a
/// smooth function between them.
struct BlendStructure {
    std::vector<std::vector<std::int32_t>> pixels; // clamped contributions stored as ~index
    bool operator==(const BlendStructure&) const = default;
};
template <typename T> BlendStructure blend_structure(const SplatWorkspace<T>& ws);

struct BenchmarkReport {
    int width{0}, height{0};
    int gaussian_count{0};
    int repeats{0};
    double median_ms{0}, p95_ms{0}, fps{0};
    double project_ms{0}, bin_ms{0}, blend_ms{0}; // medians
    std::string to_json() const;
};

/// Times rasterize_forward over `repeats` runs (at least 10).
BenchmarkReport benchmark(const FrameGaussians<float>& gaussians, const Camera& cam, int repeats);

/// Random scene of `count` Gaussians in front of a camera looking down +z, for
/// benchmarks and tests.
FrameGaussians<double> random_scene(int count, int num_features, const Camera& cam, std::uint64_t seed,
                                    double scale_min = 0.01, double scale_max = 0.08);
Camera default_camera(int width, int height);

} // namespace ngf
