#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace ngf {

/// Planar (channel-major) floating-point image.
template <typename T>
struct Image {
    int channels{0}, height{0}, width{0};
    std::vector<T> data;

    Image() = default;
    Image(int c, int h, int w, T fill = T(0))
        : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, fill) {}

    size_t plane_size() const { return static_cast<size_t>(height) * width; }
    T* plane(int c) { return data.data() + c * plane_size(); }
    const T* plane(int c) const { return data.data() + c * plane_size(); }
    T& at(int c, int y, int x) { return data[c * plane_size() + static_cast<size_t>(y) * width + x]; }
    T at(int c, int y, int x) const { return data[c * plane_size() + static_cast<size_t>(y) * width + x]; }
    bool empty() const { return data.empty(); }
    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    bool same_size(const Image& o) const { return height == o.height && width == o.width; }

    template <typename U>
    Image<U> cast() const {
        Image<U> out(channels, height, width);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T> using RgbImage = Image<T>;

/// Interleaved 8-bit image as stored on disk (1 or 3 channels).
struct ImageU8 {
    int channels{0}, height{0}, width{0};
    std::vector<std::uint8_t> data;

    ImageU8() = default;
    ImageU8(int c, int h, int w, std::uint8_t fill = 0)
        : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, fill) {}
    std::uint8_t& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    std::uint8_t at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    bool operator==(const ImageU8&) const = default;
};

template <typename T> Image<T> to_float(const ImageU8& img);
/// round(clamp(v, 0, 1) * 255).
template <typename T> ImageU8 to_u8(const Image<T>& img);

/// First `n` channels of `img`.
template <typename T> Image<T> leading_channels(const Image<T>& img, int n);
template <typename T> Image<T> crop(const Image<T>& img, int x, int y, int w, int h);
ImageU8 crop(const ImageU8& img, int x, int y, int w, int h);

/// Sparse 1D linear resampling operator: out[k] = sum_j w_kj in[j].
struct Resample1D {
    int in_size{0}, out_size{0};
    std::vector<std::vector<std::pair<int, double>>> taps;
};

/// Box filter with fractional coverage (suited to downsampling).
Resample1D area_resample(int in_size, int out_size);
/// Half-pixel-centred linear interpolation with edge clamping.
Resample1D bilinear_resample(int in_size, int out_size);
/// Piecewise-linear upsampling (out >= in) that reproduces every input sample
/// exactly at one designated output pixel, anchor(i) = floor((i + 1/2) out / in).
Resample1D anchored_upsample(int in_size, int out_size);
/// Left inverse of anchored_upsample: picks the anchor pixel of each output.
Resample1D anchor_pick(int in_size, int out_size);
/// Anchored pair when growing, bilinear/area pair otherwise.
std::pair<Resample1D, Resample1D> face_resize_pair(int crop_size, int work_size);

template <typename T> Image<T> resample(const Image<T>& img, const Resample1D& rows, const Resample1D& cols);
/// Adjoint of resample, mapping an output-space gradient to input space.
template <typename T>
Image<T> resample_adjoint(const Image<T>& grad, const Resample1D& rows, const Resample1D& cols);

/// Separable Gaussian blur with replicated borders; kernel half-width `radius`,
/// sigma = radius / 2.
template <typename T> Image<T> gaussian_blur(const Image<T>& img, int radius);

struct PixelRect {
    int x{0}, y{0}, w{0}, h{0};
    bool inside(int W, int H) const { return x >= 0 && y >= 0 && w > 0 && h > 0 && x + w <= W && y + h <= H; }
    bool operator==(const PixelRect&) const = default;
};

} // namespace ngf
