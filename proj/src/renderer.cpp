#include "ngf/renderer.hpp"

#include "ngf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

namespace ngf {

template <typename T> size_t RendererWeights<T>::weight_offset(int layer) const {
    size_t off = 0;
    for (int l = 0; l < layer; ++l) off += static_cast<size_t>(out_channels(l)) * (in_channels(l) * 9 + 1);
    return off;
}

template <typename T> size_t RendererWeights<T>::param_count(int num_features, int hidden) {
    return static_cast<size_t>(hidden) * (num_features * 9 + 1) + static_cast<size_t>(hidden) * (hidden * 9 + 1) +
           3u * (hidden * 9 + 1);
}

template <typename T> std::uint64_t RendererWeights<T>::fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    const auto* p = reinterpret_cast<const unsigned char*>(params.data());
    for (size_t i = 0; i < params.size() * sizeof(T); ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

template <typename T> RendererWeights<T> RendererWeights<T>::zeros(int num_features, int hidden) {
    if (num_features < 3) throw InvalidParameter("renderer needs at least 3 feature channels");
    if (hidden < 3) throw InvalidParameter("renderer hidden width must be at least 3");
    return {num_features, hidden, std::vector<T>(param_count(num_features, hidden), T(0))};
}

template <typename T> RendererWeights<T> init_renderer(int num_features, std::uint64_t seed, int hidden) {
    auto w = RendererWeights<T>::zeros(num_features, hidden);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int layer = 0; layer < 2; ++layer) {
        const int in = w.in_channels(layer);
        const double std = std::sqrt(1.0 / (in * 9));
        for (int o = 0; o < hidden; ++o)
            for (int i = 0; i < in; ++i)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const double r = normal(rng);
                        if (o < 3) {
                            w.weight(layer, o, i, ky, kx) = (i == o && ky == 1 && kx == 1) ? T(1) : T(0);
                        } else {
                            w.weight(layer, o, i, ky, kx) = T(r * std);
                        }
                    }
    }
    for (int o = 0; o < 3; ++o)
        for (int i = 0; i < hidden; ++i)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const double r = 0.01 * normal(rng);
                    w.weight(2, o, i, ky, kx) = (i == o && ky == 1 && kx == 1) ? T(1) : T(r);
                }
    return w;
}

namespace {

inline int reflect(int i, int n) {
    if (n == 1) return 0;
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

template <typename T> ActMatrix<T> im2col(const ActMatrix<T>& act, int H, int W) {
    const int C = static_cast<int>(act.rows());
    ActMatrix<T> cols(C * 9, static_cast<Eigen::Index>(H) * W);
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = &cols(c * 9 + ky * 3 + kx, 0);
                const T* src = &act(c, 0);
                for (int y = 0; y < H; ++y) {
                    const T* row = src + static_cast<size_t>(reflect(y + ky - 1, H)) * W;
                    T* out = dst + static_cast<size_t>(y) * W;
                    out[0] = row[reflect(kx - 1, W)];
                    for (int x = 1; x < W - 1; ++x) out[x] = row[x + kx - 1];
                    if (W > 1) out[W - 1] = row[reflect(W - 2 + kx, W)];
                }
            }
    return cols;
}

template <typename T> ActMatrix<T> col2im(const ActMatrix<T>& cols, int C, int H, int W) {
    ActMatrix<T> act = ActMatrix<T>::Zero(C, static_cast<Eigen::Index>(H) * W);
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = &cols(c * 9 + ky * 3 + kx, 0);
                T* dst = &act(c, 0);
                for (int y = 0; y < H; ++y) {
                    T* row = dst + static_cast<size_t>(reflect(y + ky - 1, H)) * W;
                    const T* in = src + static_cast<size_t>(y) * W;
                    row[reflect(kx - 1, W)] += in[0];
                    for (int x = 1; x < W - 1; ++x) row[x + kx - 1] += in[x];
                    if (W > 1) row[reflect(W - 2 + kx, W)] += in[W - 1];
                }
            }
    return act;
}

template <typename T>
Eigen::Map<const ActMatrix<T>> layer_weights(const RendererWeights<T>& w, int layer) {
    return {w.params.data() + w.weight_offset(layer), w.out_channels(layer), w.in_channels(layer) * 9};
}

template <typename T> Eigen::Map<const VectorX<T>> layer_bias(const RendererWeights<T>& w, int layer) {
    return {w.params.data() + w.bias_offset(layer), w.out_channels(layer)};
}

template <typename T> T leaky(T z) { return z > T(0) ? z : T(kLeakySlope) * z; }

} // namespace

template <typename T>
Image<T> decode(const RendererWeights<T>& weights, const FeatureImage<T>& features, DecodeCache<T>* cache) {
    const int K = weights.num_features;
    if (features.channels != K + 1) {
        throw ContractViolation("decode: expected " + std::to_string(K + 1) + " input planes, got " +
                                std::to_string(features.channels));
    }
    const int H = features.height, W = features.width;
    if (H < 1 || W < 1) throw InvalidParameter("decode: empty image");
    const Eigen::Index HW = static_cast<Eigen::Index>(H) * W;
    DecodeCache<T> local;
    DecodeCache<T>& c = cache ? *cache : local;
    c.weights_fingerprint = weights.fingerprint();
    c.height = H;
    c.width = W;

    ActMatrix<T> act = Eigen::Map<const ActMatrix<T>>(features.data.data(), K, HW);
    for (int layer = 0; layer < 3; ++layer) {
        c.cols[layer] = im2col<T>(act, H, W);
        c.pre[layer].noalias() = layer_weights(weights, layer) * c.cols[layer];
        c.pre[layer].colwise() += layer_bias(weights, layer);
        if (layer < 2) act = c.pre[layer].unaryExpr([](T z) { return leaky(z); });
    }
    c.output = c.pre[2].unaryExpr([](T z) {
        const T zc = std::clamp(z, T(-kOutputLogitClamp), T(kOutputLogitClamp));
        return T(1) / (T(1) + std::exp(-zc));
    });
    Image<T> out(3, H, W);
    std::memcpy(out.data.data(), c.output.data(), sizeof(T) * out.data.size());
    return out;
}

template <typename T>
DecodeGrad<T> decode_backward(const RendererWeights<T>& weights, const DecodeCache<T>& cache, const Image<T>& grad) {
    if (cache.weights_fingerprint != weights.fingerprint() || cache.output.size() == 0) {
        throw ContractViolation("decode_backward: cache is stale or from different weights");
    }
    const int H = cache.height, W = cache.width, K = weights.num_features;
    if (grad.channels != 3 || grad.height != H || grad.width != W) {
        throw ContractViolation("decode_backward: gradient image shape does not match the decoded image");
    }
    const Eigen::Index HW = static_cast<Eigen::Index>(H) * W;
    DecodeGrad<T> out;
    out.params.assign(weights.params.size(), T(0));

    ActMatrix<T> d = Eigen::Map<const ActMatrix<T>>(grad.data.data(), 3, HW);
    d = d.cwiseProduct(cache.output.unaryExpr([](T s) { return s * (T(1) - s); }));
    d = d.cwiseProduct(cache.pre[2].unaryExpr(
        [](T z) { return std::abs(z) < T(kOutputLogitClamp) ? T(1) : T(0); }));
    for (int layer = 2; layer >= 0; --layer) {
        if (layer < 2) {
            d = d.cwiseProduct(cache.pre[layer].unaryExpr([](T z) { return z > T(0) ? T(1) : T(kLeakySlope); }));
        }
        Eigen::Map<ActMatrix<T>> dW(out.params.data() + weights.weight_offset(layer), weights.out_channels(layer),
                                    weights.in_channels(layer) * 9);
        Eigen::Map<VectorX<T>> db(out.params.data() + weights.bias_offset(layer), weights.out_channels(layer));
        dW.noalias() = d * cache.cols[layer].transpose();
        db = d.rowwise().sum();
        const ActMatrix<T> dcols = layer_weights(weights, layer).transpose() * d;
        d = col2im<T>(dcols, weights.in_channels(layer), H, W);
    }
    out.input = FeatureImage<T>(K + 1, H, W);
    std::memcpy(out.input.data.data(), d.data(), sizeof(T) * d.size());
    return out;
}

#define NGF_INSTANTIATE(T)                                                                                    \
    template struct RendererWeights<T>;                                                                       \
    template RendererWeights<T> init_renderer<T>(int, std::uint64_t, int);                                    \
    template Image<T> decode(const RendererWeights<T>&, const FeatureImage<T>&, DecodeCache<T>*);             \
    template DecodeGrad<T> decode_backward(const RendererWeights<T>&, const DecodeCache<T>&, const Image<T>&);

NGF_INSTANTIATE(float)
NGF_INSTANTIATE(double)

} // namespace ngf
