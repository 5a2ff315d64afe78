#pragma once

#include "ngf/editors.hpp"
#include "ngf/image.hpp"

#include <string>

namespace ngf {

struct FaceAwareSettings {
    bool enabled{true};
    int size{512};        // side of the square face crop sent to the editor
    int blur_radius{5};
};

/// Head-torso mask (8-bit gray) restricted to `box`, blurred, and restricted
/// again. Values within 1e-6 of 0 or 1 are snapped.
Image<double> feathered_mask(const ImageU8& head_torso, const PixelRect& box, int blur_radius);

/// Edits the portrait and, when enabled, the face crop resized to size x size,
/// then pastes the face back and blends it in with the feathered mask:
///   out = M * face + (1 - M) * portrait
/// Throws ConfigError on a bad box or mask shape.
ImageU8 face_aware_edit(Editor& editor, const ImageU8& render, const ImageU8& source, const PixelRect& box,
                        const ImageU8& head_torso, const std::string& prompt, const FaceAwareSettings& settings);

} // namespace ngf
