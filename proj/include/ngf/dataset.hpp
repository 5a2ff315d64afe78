#pragma once

#include "ngf/geometry.hpp"
#include "ngf/image.hpp"
#include "ngf/rig.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ngf {

struct FrameRecord {
    Mat4<double> pose{Mat4<double>::Identity()}; // world-to-camera, row-major on disk
    BodyParams<double> params;
    PixelRect face_box;
};

/// A portrait video: frames, subject masks, head-torso masks and per-frame
/// rig parameters. Directory layout:
///   params.json              schema "ngf-ds/1"
///   frames/NNNNN.png         8-bit RGB
///   masks/NNNNN.png          8-bit gray, 255 = subject
///   head_torso/NNNNN.png     8-bit gray
struct Dataset {
    std::filesystem::path root;
    Camera intrinsics; // world_to_camera unused; see frames[i].pose
    std::vector<FrameRecord> frames;
    std::vector<ImageU8> images, masks, head_torso;
    std::string rig_path; // relative to root
    std::string rig_sha256;

    int size() const { return static_cast<int>(frames.size()); }
    Camera camera(int i) const {
        Camera c = intrinsics;
        c.world_to_camera = frames[i].pose;
        return c;
    }
};

/// Loads and validates everything eagerly. Throws ValidationError naming the
/// first offending file and field. When `rig` is given, parameter dimensions
/// are checked against it. With `load_images` false only params.json is read.
Dataset load_dataset(const std::filesystem::path& dir, const Rig* rig = nullptr, bool load_images = true);

/// Writes params.json for `ds` (images are written by the caller).
std::string dataset_params_json(const Dataset& ds);

std::string frame_name(int index); // "00042.png"

} // namespace ngf
