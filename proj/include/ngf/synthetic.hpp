#pragma once

#include "ngf/dataset.hpp"
#include "ngf/geometry.hpp"
#include "ngf/image.hpp"
#include "ngf/rig.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

namespace ngf {

struct SynthSpec {
    int n_frames{24};
    int width{128}, height{128};
    std::string rig_preset{"sphere-head"};
    std::string motion_preset{"gentle"}; // gentle | static
    std::string texture_preset{"face"};  // face | flat
    std::uint64_t seed{0};

    /// Throws InvalidParameter on unknown presets or non-positive sizes.
    void validate() const;
};

/// Parses a spec document; unknown keys are rejected with ConfigError.
SynthSpec parse_synth_spec(const std::string& json_text);

/// UV-sphere head (radius 1, 32 x 16 segments) with a neck root and a jaw
/// joint, two shape and two expression components.
Rig make_sphere_head_rig();

/// Camera 3.5 units in front of the head looking down +z.
Camera synthetic_camera(int width, int height);

using SurfaceTexture = std::function<Vec3<double>(const Vec3<double>& rest_point)>;
SurfaceTexture make_texture(const std::string& preset);

struct ReferenceRender {
    Image<double> color;    // composited over white
    Image<double> coverage; // fraction of covered sub-samples
};

/// Z-buffered triangle rasterization with `samples` x `samples` supersampling
/// and perspective-correct texture lookup on the rest surface.
ReferenceRender render_reference(const Rig& rig, const Vertices<double>& posed, const Camera& cam,
                                 const SurfaceTexture& texture, int samples = 4);

/// Writes a complete dataset (rig.json, params.json and images) into `out_dir`.
void make_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

} // namespace ngf
