#include "ngf/face_aware.hpp"

#include "ngf/errors.hpp"

#include <cmath>

namespace ngf {

namespace {

Image<double> planar(const ImageU8& img) {
    Image<double> out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(y, x, c);
    return out;
}

// Resamples 0..255 values and rounds back to bytes.
ImageU8 resample_u8(const ImageU8& img, const Resample1D& rows, const Resample1D& cols) {
    const Image<double> r = resample(planar(img), rows, cols);
    ImageU8 out(img.channels, r.height, r.width);
    for (int c = 0; c < r.channels; ++c)
        for (int y = 0; y < r.height; ++y)
            for (int x = 0; x < r.width; ++x)
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(r.at(c, y, x), 0.0, 255.0)));
    return out;
}

} // namespace

Image<double> feathered_mask(const ImageU8& head_torso, const PixelRect& box, int blur_radius) {
    if (head_torso.channels != 1) throw ConfigError("feathered_mask: head-torso mask must be single-channel");
    if (!box.inside(head_torso.width, head_torso.height)) throw ConfigError("feathered_mask: face box outside the mask");
    Image<double> m(1, head_torso.height, head_torso.width);
    for (int y = box.y; y < box.y + box.h; ++y)
        for (int x = box.x; x < box.x + box.w; ++x) m.at(0, y, x) = head_torso.at(y, x, 0) / 255.0;
    Image<double> blurred = gaussian_blur(m, blur_radius);
    Image<double> out(1, m.height, m.width);
    for (int y = box.y; y < box.y + box.h; ++y)
        for (int x = box.x; x < box.x + box.w; ++x) {
            double v = blurred.at(0, y, x);
            if (std::abs(v) < 1e-6) v = 0;
            if (std::abs(v - 1) < 1e-6) v = 1;
            out.at(0, y, x) = v;
        }
    return out;
}

ImageU8 face_aware_edit(Editor& editor, const ImageU8& render, const ImageU8& source, const PixelRect& box,
                        const ImageU8& head_torso, const std::string& prompt, const FaceAwareSettings& settings) {
    if (render.channels != 3 || source.channels != 3) throw ConfigError("face_aware_edit: expected RGB images");
    if (render.width != source.width || render.height != source.height) {
        throw ConfigError("face_aware_edit: render and source differ in size");
    }
    EditInput in;
    in.render = render;
    in.source = source;
    in.prompt = prompt;
    if (!settings.enabled) {
        EditOutput out = editor.edit(in);
        if (out.face_edited) throw ProtocolError("editor returned a face edit that was not requested");
        return out.edited;
    }
    if (head_torso.width != render.width || head_torso.height != render.height) {
        throw ConfigError("face_aware_edit: head-torso mask differs in size from the frame");
    }
    if (!box.inside(render.width, render.height)) throw ConfigError("face_aware_edit: face box outside the frame");
    if (settings.size < 1) throw InvalidParameter("face_aware_edit: crop size must be positive");

    const auto [rows_up, rows_down] = face_resize_pair(box.h, settings.size);
    const auto [cols_up, cols_down] = face_resize_pair(box.w, settings.size);
    in.face_render = resample_u8(crop(render, box.x, box.y, box.w, box.h), rows_up, cols_up);
    in.face_source = resample_u8(crop(source, box.x, box.y, box.w, box.h), rows_up, cols_up);
    const EditOutput out = editor.edit(in);
    if (!out.face_edited) throw ProtocolError("editor returned a portrait but no face edit");
    if (out.edited.width != render.width || out.edited.height != render.height || out.edited.channels != 3) {
        throw ProtocolError("edited portrait has the wrong size");
    }
    if (out.face_edited->width != settings.size || out.face_edited->height != settings.size ||
        out.face_edited->channels != 3) {
        throw ProtocolError("edited face crop has the wrong size");
    }
    const ImageU8 face = resample_u8(*out.face_edited, rows_down, cols_down);
    const Image<double> m = feathered_mask(head_torso, box, settings.blur_radius);

    ImageU8 result = out.edited;
    for (int y = box.y; y < box.y + box.h; ++y)
        for (int x = box.x; x < box.x + box.w; ++x) {
            const double w = m.at(0, y, x);
            if (w == 0) continue;
            for (int c = 0; c < 3; ++c) {
                const double v = w * face.at(y - box.y, x - box.x, c) + (1 - w) * out.edited.at(y, x, c);
                result.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    return result;
}

} // namespace ngf
