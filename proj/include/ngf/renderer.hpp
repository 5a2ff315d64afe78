#pragma once

#include "ngf/field.hpp"
#include "ngf/image.hpp"
#include "ngf/splatter.hpp"

#include <cstdint>
#include <vector>

namespace ngf {

inline constexpr double kLeakySlope = 0.01;
/// Output logits are clamped to +-15 so the sigmoid stays inside (0, 1) in 32-bit.
inline constexpr double kOutputLogitClamp = 15.0;

/// Three 3x3 convolutions K_f -> hidden -> hidden -> 3 with reflect padding,
/// leaky ReLU after the first two and a sigmoid on the output. All weights
/// and biases live in one flat vector; layer l occupies
/// [weight_offset(l), weight_offset(l) + out*in*9) followed by its biases.
template <typename T>
struct RendererWeights {
    int num_features{0};
    int hidden{16};
    std::vector<T> params;

    int in_channels(int layer) const { return layer == 0 ? num_features : hidden; }
    int out_channels(int layer) const { return layer == 2 ? 3 : hidden; }
    size_t weight_offset(int layer) const;
    size_t bias_offset(int layer) const {
        return weight_offset(layer) + static_cast<size_t>(out_channels(layer)) * in_channels(layer) * 9;
    }
    static size_t param_count(int num_features, int hidden);
    T& weight(int layer, int out, int in, int ky, int kx) {
        return params[weight_offset(layer) + ((static_cast<size_t>(out) * in_channels(layer) + in) * 3 + ky) * 3 + kx];
    }
    T& bias(int layer, int out) { return params[bias_offset(layer) + out]; }
    std::uint64_t fingerprint() const;

    static RendererWeights zeros(int num_features, int hidden = 16);

    template <typename U>
    RendererWeights<U> cast() const {
        return {num_features, hidden, std::vector<U>(params.begin(), params.end())};
    }
};

/// Fan-in scaled normal weights for the first two layers, with hidden channels
/// 0-2 wired as identity taps of feature channels 0-2, and an output layer
/// passing those channels through at unit gain plus small noise.
template <typename T> RendererWeights<T> init_renderer(int num_features, std::uint64_t seed, int hidden = 16);

template <typename T> using ActMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct DecodeCache {
    std::uint64_t weights_fingerprint{0};
    int height{0}, width{0};
    std::array<ActMatrix<T>, 3> cols; // im2col of each layer input
    std::array<ActMatrix<T>, 3> pre;  // pre-activations
    ActMatrix<T> output;              // 3 x HW after sigmoid
};

/// Decodes the feature planes of I_F (the trailing alpha plane is ignored).
/// Throws ContractViolation on channel mismatch.
template <typename T>
Image<T> decode(const RendererWeights<T>& weights, const FeatureImage<T>& features, DecodeCache<T>* cache = nullptr);

template <typename T>
struct DecodeGrad {
    std::vector<T> params;
    FeatureImage<T> input; // K_f + 1 planes; the alpha plane is zero
};

/// Throws ContractViolation when `cache` does not come from decode with the
/// current weights.
template <typename T>
DecodeGrad<T> decode_backward(const RendererWeights<T>& weights, const DecodeCache<T>& cache, const Image<T>& grad);

} // namespace ngf
