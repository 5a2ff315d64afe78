#pragma once

#include "ngf/image.hpp"
#include "ngf/rig.hpp"

#include <Eigen/Core>

#include <memory>
#include <optional>

namespace ngf {

/// Weights of the recon, mask, perceptual, stable and expression terms.
struct LossWeights {
    double recon{1.0}, mask{0.1}, perceptual{0.1}, stable{0.5}, expression{0.1};

    /// Throws InvalidParameter if any weight is negative or non-finite, or all are zero.
    void validate() const;
    LossWeights scaled(double c) const { return {recon * c, mask * c, perceptual * c, stable * c, expression * c}; }
};

// Each term returns its value and, when `grad` is non-null, adds scale * dL/dI
// into it. `grad` must already have the shape of the first argument.

/// Mean absolute difference.
template <typename T>
double l1_loss(const Image<T>& a, const Image<T>& b, Image<T>* grad = nullptr, double scale = 1.0);

template <typename T>
double recon_loss(const Image<T>& rendered, const Image<T>& target, Image<T>* grad = nullptr, double scale = 1.0);
template <typename T>
double mask_loss(const Image<T>& alpha, const Image<T>& target, Image<T>* grad = nullptr, double scale = 1.0);

/// L1 between the first three planes of `features` and the source RGB.
/// Throws ConfigError when fewer than three planes are present.
template <typename T>
double stable_loss(const Image<T>& features, const Image<T>& source, Image<T>* grad = nullptr, double scale = 1.0);

/// Perceptual distance backend.
class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    virtual double evaluate(const Image<double>& a, const Image<double>& b, Image<double>* grad, double scale) const = 0;
    virtual double evaluate(const Image<float>& a, const Image<float>& b, Image<float>* grad, double scale) const = 0;
};

/// Sum over `levels` pyramid levels (2x box downsampling) of the mean pixel L1
/// plus the mean L1 of horizontal and vertical forward differences.
class PyramidPerceptual final : public PerceptualMetric {
public:
    explicit PyramidPerceptual(int levels = 3) : levels_(levels) {}
    double evaluate(const Image<double>& a, const Image<double>& b, Image<double>* grad, double scale) const override;
    double evaluate(const Image<float>& a, const Image<float>& b, Image<float>* grad, double scale) const override;

private:
    int levels_;
};

template <typename T>
double perceptual_loss(const Image<T>& a, const Image<T>& b, Image<T>* grad = nullptr, double scale = 1.0,
                       const PerceptualMetric* metric = nullptr);

/// Maps a face crop to a fixed-length expression code.
class ExpressionEmbedder {
public:
    virtual ~ExpressionEmbedder() = default;
    virtual Eigen::VectorXd embed(const Image<double>& crop) const = 0;
    virtual bool differentiable() const { return false; }
    /// Vector-Jacobian product for `crop`; only called when differentiable().
    virtual Image<double> backward(const Image<double>& crop, const Eigen::VectorXd& dcode) const;
};

/// Area-resamples the crop to size x size, converts to luma and removes the mean.
class PixelMomentEmbedder final : public ExpressionEmbedder {
public:
    explicit PixelMomentEmbedder(int size = 16) : size_(size) {}
    Eigen::VectorXd embed(const Image<double>& crop) const override;
    bool differentiable() const override { return true; }
    Image<double> backward(const Image<double>& crop, const Eigen::VectorXd& dcode) const override;

private:
    int size_;
};

inline constexpr int kMinFaceBox = 8;

/// Squared L2 between the embeddings of the two face crops. Returns nullopt
/// (term skipped) when the box is smaller than 8 px on a side. Gradient flows
/// into `grad` only for differentiable embedders.
template <typename T>
std::optional<double> expression_loss(const ExpressionEmbedder& embedder, const Image<T>& rendered,
                                      const Image<T>& source, const PixelRect& face_box, Image<T>* grad = nullptr,
                                      double scale = 1.0);

/// Embedding of the face crop of one image.
template <typename T>
Eigen::VectorXd face_embedding(const ExpressionEmbedder& embedder, const Image<T>& img, const PixelRect& face_box);

enum class LossMode { reconstruction, edit };

template <typename T>
struct LossInputs {
    const Image<T>* rendered{nullptr};        // I
    const Image<T>* target{nullptr};          // I_src in reconstruction, I* in edit mode
    const Image<T>* alpha{nullptr};           // A
    const Image<T>* alpha_target{nullptr};    // A_src
    const Image<T>* stable_features{nullptr}; // feature planes 0-2 prepared by the caller
    const Image<T>* source{nullptr};          // I_src
    std::optional<PixelRect> face_box;
    const ExpressionEmbedder* embedder{nullptr};
    const PerceptualMetric* perceptual{nullptr};
};

struct LossTerms {
    double recon{0}, mask{0}, perceptual{0}, stable{0}, expression{0}, total{0};
    bool expression_skipped{false};
};

/// Gradient images, allocated by total_loss to match the inputs.
template <typename T>
struct LossGrads {
    Image<T> rendered, alpha, stable_features;
};

/// Weighted sum of the active terms. Edit mode compares I against I* for the
/// recon and perceptual terms and against I_src for the expression term;
/// reconstruction mode omits the expression term. Throws ConfigError when an
/// input required by a term with positive weight is missing.
template <typename T>
LossTerms total_loss(LossMode mode, const LossWeights& weights, const LossInputs<T>& in, LossGrads<T>* grads = nullptr);

} // namespace ngf
