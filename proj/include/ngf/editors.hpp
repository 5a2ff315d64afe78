#pragma once

#include "ngf/image.hpp"

#include <Eigen/Core>

#include <memory>
#include <optional>
#include <set>
#include <string>

namespace ngf {

struct EditInput {
    ImageU8 render, source;
    std::optional<ImageU8> face_render, face_source;
    std::string prompt;
};

struct EditOutput {
    ImageU8 edited;
    std::optional<ImageU8> face_edited;
};

/// A 2D image editor, either in-process or behind the plugin protocol.
class Editor {
public:
    virtual ~Editor() = default;
    virtual std::set<std::string> capabilities() const { return {"edit"}; }
    virtual EditOutput edit(const EditInput& in) = 0;
    /// Expression code of an RGB crop; only for editors advertising "embed".
    virtual Eigen::VectorXd embed(const ImageU8& crop);
};

/// Deterministic per-image operation wrapped as an editor; portrait and face
/// crop are processed independently.
class ImageFilterEditor : public Editor {
public:
    EditOutput edit(const EditInput& in) override;
    virtual ImageU8 apply(const ImageU8& img) const = 0;
};

class IdentityEditor final : public ImageFilterEditor {
public:
    ImageU8 apply(const ImageU8& img) const override { return img; }
};

/// out = clamp(M rgb + offset) on values in [0, 1].
class LutEditor final : public ImageFilterEditor {
public:
    LutEditor(const Eigen::Matrix3d& m, const Eigen::Vector3d& offset) : m_(m), offset_(offset) {}
    static Eigen::Matrix3d sepia();
    ImageU8 apply(const ImageU8& img) const override;

private:
    Eigen::Matrix3d m_;
    Eigen::Vector3d offset_;
};

/// Averages block x block cells (aligned to the image origin) and quantizes
/// each channel to `levels` evenly spaced values.
class PosterizeEditor final : public ImageFilterEditor {
public:
    PosterizeEditor(int levels, int block);
    ImageU8 apply(const ImageU8& img) const override;

private:
    int levels_, block_;
};

/// Multiplies by 1 + strength * dot(direction, p) where p spans [-1, 1]^2
/// across the image.
class RelightGainEditor final : public ImageFilterEditor {
public:
    RelightGainEditor(const Eigen::Vector2d& direction, double strength);
    ImageU8 apply(const ImageU8& img) const override;

private:
    Eigen::Vector2d dir_;
    double strength_;
};

/// Always returns the same target image, resampled to the input size.
class ConstantEditor final : public ImageFilterEditor {
public:
    explicit ConstantEditor(ImageU8 target);
    ImageU8 apply(const ImageU8& img) const override;

private:
    ImageU8 target_;
};

/// Builds a builtin editor from "name" or "name:args":
///   identity
///   lut:sepia | lut:m00,m01,...,m22[,o0,o1,o2]
///   posterize:levels,block
///   relight_gain:dx,dy,strength
///   constant:/path/to/image.png
/// Throws InvalidParameter on bad arguments and ValidationError on an
/// unreadable constant image.
std::unique_ptr<ImageFilterEditor> make_builtin_editor(const std::string& spec);

/// Resizes an 8-bit image with area (shrink) or bilinear (grow) filtering.
ImageU8 resize_u8(const ImageU8& img, int width, int height);

} // namespace ngf
