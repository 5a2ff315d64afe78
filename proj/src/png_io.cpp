#include "ngf/png_io.hpp"

#include "ngf/errors.hpp"

#include <png.h>

#include <cstring>

namespace ngf {

ImageU8 read_png(const std::filesystem::path& path, int expected_channels) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw ValidationError(path.string() + ": cannot decode PNG (" + image.message + ")");
    }
    const png_uint_32 fmt = image.format;
    auto reject = [&](const char* why) {
        png_image_free(&image);
        throw ValidationError(path.string() + ": " + why);
    };
    if (fmt & PNG_FORMAT_FLAG_LINEAR) reject("expected 8-bit samples, found 16-bit");
    if (fmt & PNG_FORMAT_FLAG_COLORMAP) reject("palette images are not supported");
    if (fmt & PNG_FORMAT_FLAG_ALPHA) reject("unexpected alpha channel");
    const int channels = (fmt & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
    if (channels != expected_channels) {
        reject(expected_channels == 3 ? "expected an RGB image" : "expected a single-channel image");
    }
    image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    ImageU8 out(channels, static_cast<int>(image.height), static_cast<int>(image.width));
    if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw ValidationError(path.string() + ": " + msg);
    }
    return out;
}

void write_png(const std::filesystem::path& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3) throw InvalidParameter("write_png: need 1 or 3 channels");
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.data.data(), 0, nullptr)) {
        throw Error(path.string() + ": cannot write PNG (" + image.message + ")");
    }
}

} // namespace ngf
