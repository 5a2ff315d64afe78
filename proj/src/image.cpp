#include "ngf/image.hpp"

#include "ngf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ngf {

template <typename T> Image<T> to_float(const ImageU8& img) {
    Image<T> out(img.channels, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = T(img.at(y, x, c)) / T(255);
    return out;
}

template <typename T> ImageU8 to_u8(const Image<T>& img) {
    ImageU8 out(img.channels, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                const double v = std::clamp(double(img.at(c, y, x)), 0.0, 1.0);
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    return out;
}

template <typename T> Image<T> leading_channels(const Image<T>& img, int n) {
    if (n > img.channels) throw ConfigError("image has fewer than " + std::to_string(n) + " channels");
    Image<T> out(n, img.height, img.width);
    std::copy(img.data.begin(), img.data.begin() + n * img.plane_size(), out.data.begin());
    return out;
}

template <typename T> Image<T> crop(const Image<T>& img, int x, int y, int w, int h) {
    if (!PixelRect{x, y, w, h}.inside(img.width, img.height)) throw InvalidParameter("crop outside image");
    Image<T> out(img.channels, h, w);
    for (int c = 0; c < img.channels; ++c)
        for (int r = 0; r < h; ++r)
            std::copy_n(&img.data[c * img.plane_size() + static_cast<size_t>(y + r) * img.width + x], w,
                        &out.at(c, r, 0));
    return out;
}

ImageU8 crop(const ImageU8& img, int x, int y, int w, int h) {
    if (!PixelRect{x, y, w, h}.inside(img.width, img.height)) throw InvalidParameter("crop outside image");
    ImageU8 out(img.channels, h, w);
    for (int r = 0; r < h; ++r)
        std::copy_n(&img.data[(static_cast<size_t>(y + r) * img.width + x) * img.channels], w * img.channels,
                    &out.data[static_cast<size_t>(r) * w * img.channels]);
    return out;
}

Resample1D area_resample(int in_size, int out_size) {
    Resample1D r{in_size, out_size, std::vector<std::vector<std::pair<int, double>>>(out_size)};
    const double step = double(in_size) / out_size;
    for (int k = 0; k < out_size; ++k) {
        const double lo = k * step, hi = (k + 1) * step;
        for (int j = static_cast<int>(std::floor(lo)); j < std::min(in_size, static_cast<int>(std::ceil(hi))); ++j) {
            const double overlap = std::min(hi, double(j + 1)) - std::max(lo, double(j));
            if (overlap > 0) r.taps[k].emplace_back(j, overlap / step);
        }
    }
    return r;
}

namespace {

void push_linear(std::vector<std::pair<int, double>>& taps, double q, int in_size) {
    q = std::clamp(q, 0.0, double(in_size - 1));
    const int j = std::min(static_cast<int>(std::floor(q)), in_size - 1);
    const double f = q - j;
    if (f == 0.0 || j + 1 >= in_size) {
        taps.emplace_back(j, 1.0);
    } else {
        taps.emplace_back(j, 1.0 - f);
        taps.emplace_back(j + 1, f);
    }
}

int anchor_of(int i, int small, int big) {
    return static_cast<int>(std::floor((i + 0.5) * double(big) / small));
}

} // namespace

Resample1D bilinear_resample(int in_size, int out_size) {
    Resample1D r{in_size, out_size, std::vector<std::vector<std::pair<int, double>>>(out_size)};
    for (int k = 0; k < out_size; ++k) push_linear(r.taps[k], (k + 0.5) * in_size / out_size - 0.5, in_size);
    return r;
}

Resample1D anchored_upsample(int in_size, int out_size) {
    if (out_size < in_size) throw InvalidParameter("anchored_upsample requires out_size >= in_size");
    Resample1D r{in_size, out_size, std::vector<std::vector<std::pair<int, double>>>(out_size)};
    for (int k = 0; k < out_size; ++k) {
        const int first = anchor_of(0, in_size, out_size);
        const int last = anchor_of(in_size - 1, in_size, out_size);
        if (k <= first) {
            r.taps[k].emplace_back(0, 1.0);
        } else if (k >= last) {
            r.taps[k].emplace_back(in_size - 1, 1.0);
        } else {
            // Locate the anchor interval [a(i), a(i+1)) containing k.
            int i = std::clamp(static_cast<int>(double(k) * in_size / out_size), 0, in_size - 2);
            while (anchor_of(i + 1, in_size, out_size) <= k) ++i;
            while (anchor_of(i, in_size, out_size) > k) --i;
            const int a0 = anchor_of(i, in_size, out_size), a1 = anchor_of(i + 1, in_size, out_size);
            const double f = double(k - a0) / double(a1 - a0);
            if (f == 0.0) {
                r.taps[k].emplace_back(i, 1.0);
            } else {
                r.taps[k].emplace_back(i, 1.0 - f);
                r.taps[k].emplace_back(i + 1, f);
            }
        }
    }
    return r;
}

Resample1D anchor_pick(int in_size, int out_size) {
    if (out_size > in_size) throw InvalidParameter("anchor_pick requires out_size <= in_size");
    Resample1D r{in_size, out_size, std::vector<std::vector<std::pair<int, double>>>(out_size)};
    for (int i = 0; i < out_size; ++i) r.taps[i].emplace_back(anchor_of(i, out_size, in_size), 1.0);
    return r;
}

std::pair<Resample1D, Resample1D> face_resize_pair(int crop_size, int work_size) {
    if (work_size >= crop_size) {
        return {anchored_upsample(crop_size, work_size), anchor_pick(work_size, crop_size)};
    }
    return {area_resample(crop_size, work_size), bilinear_resample(work_size, crop_size)};
}

template <typename T> Image<T> resample(const Image<T>& img, const Resample1D& rows, const Resample1D& cols) {
    if (rows.in_size != img.height || cols.in_size != img.width) throw ConfigError("resample: size mismatch");
    Image<T> tmp(img.channels, img.height, cols.out_size);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int k = 0; k < cols.out_size; ++k) {
                T acc = 0;
                for (auto [j, w] : cols.taps[k]) acc += T(w) * img.at(c, y, j);
                tmp.at(c, y, k) = acc;
            }
    Image<T> out(img.channels, rows.out_size, cols.out_size);
    for (int c = 0; c < img.channels; ++c)
        for (int k = 0; k < rows.out_size; ++k)
            for (int x = 0; x < cols.out_size; ++x) {
                T acc = 0;
                for (auto [j, w] : rows.taps[k]) acc += T(w) * tmp.at(c, j, x);
                out.at(c, k, x) = acc;
            }
    return out;
}

template <typename T>
Image<T> resample_adjoint(const Image<T>& grad, const Resample1D& rows, const Resample1D& cols) {
    if (rows.out_size != grad.height || cols.out_size != grad.width) {
        throw ConfigError("resample_adjoint: size mismatch");
    }
    Image<T> tmp(grad.channels, rows.in_size, cols.out_size);
    for (int c = 0; c < grad.channels; ++c)
        for (int k = 0; k < rows.out_size; ++k)
            for (auto [j, w] : rows.taps[k])
                for (int x = 0; x < cols.out_size; ++x) tmp.at(c, j, x) += T(w) * grad.at(c, k, x);
    Image<T> out(grad.channels, rows.in_size, cols.in_size);
    for (int c = 0; c < grad.channels; ++c)
        for (int y = 0; y < rows.in_size; ++y)
            for (int k = 0; k < cols.out_size; ++k)
                for (auto [j, w] : cols.taps[k]) out.at(c, y, j) += T(w) * tmp.at(c, y, k);
    return out;
}

template <typename T> Image<T> gaussian_blur(const Image<T>& img, int radius) {
    if (radius <= 0) return img;
    const double sigma = radius / 2.0;
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) sum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& k : kernel) k /= sum;

    Image<T> tmp(img.channels, img.height, img.width), out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[i + radius] * img.at(c, y, std::clamp(x + i, 0, img.width - 1));
                tmp.at(c, y, x) = T(acc);
            }
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[i + radius] * tmp.at(c, std::clamp(y + i, 0, img.height - 1), x);
                out.at(c, y, x) = T(acc);
            }
    return out;
}

#define NGF_INSTANTIATE(T)                                                                                 \
    template Image<T> to_float<T>(const ImageU8&);                                                         \
    template ImageU8 to_u8(const Image<T>&);                                                               \
    template Image<T> leading_channels(const Image<T>&, int);                                              \
    template Image<T> crop(const Image<T>&, int, int, int, int);                                           \
    template Image<T> resample(const Image<T>&, const Resample1D&, const Resample1D&);                      \
    template Image<T> resample_adjoint(const Image<T>&, const Resample1D&, const Resample1D&);              \
    template Image<T> gaussian_blur(const Image<T>&, int);

NGF_INSTANTIATE(float)
NGF_INSTANTIATE(double)

} // namespace ngf
