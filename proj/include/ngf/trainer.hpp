#pragma once

#include "ngf/checkpoint.hpp"
#include "ngf/config.hpp"
#include "ngf/dataset.hpp"
#include "ngf/editors.hpp"
#include "ngf/losses.hpp"
#include "ngf/renderer.hpp"
#include "ngf/rig.hpp"
#include "ngf/splatter.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ngf {

/// SHA-256 of the canonical rig document; stored in checkpoints.
std::string rig_fingerprint(const Rig& rig);

/// Fresh model: init_field, zero displacement and an initial renderer.
Model init_model(const Rig& rig, const TrainConfig& config);

/// Decoded image composited over the background, plus the stable-loss input
/// I_F[:3] + (1 - A) bg. With the decoder off, rgb equals stable.
template <typename T>
struct Composite {
    Image<T> rgb, alpha, stable;
    Image<T> decoded; // empty when the decoder is off
    DecodeCache<T> cache;
};

/// `decoder` may be null (decoder off).
template <typename T>
void composite(const FeatureImage<T>& features, const RendererWeights<T>* decoder, const Vec3<double>& background,
               Composite<T>& out);

/// Maps loss gradients on rgb, alpha and stable back onto the K_f + 1 planes
/// of I_F; renderer parameter gradients go to `drenderer` when the decoder is on.
template <typename T>
FeatureImage<T> composite_backward(const FeatureImage<T>& features, const RendererWeights<T>* decoder,
                                   const Vec3<double>& background, const Composite<T>& c, const LossGrads<T>& grads,
                                   std::vector<T>* drenderer);

struct FrameRender {
    Image<float> rgb;   // composited over the background
    Image<float> alpha;
    ImageU8 to_u8() const { return ngf::to_u8(rgb); }
};

/// Renders one frame of the model: deformed_mesh, embed, rasterize, decode
/// and composite. The training preview uses the same function.
FrameRender render_frame(const Model& model, const Rig& rig, const BodyParams<double>& params, const Camera& cam,
                         const TrainConfig& config);

struct StepRecord {
    std::string phase;
    std::int64_t step{0};
    int frame{0};
    LossTerms terms;
    double wall_ms{0};
    std::string to_json() const;
};

/// Where a run writes its side outputs. Empty paths disable the output.
struct TrainOutputs {
    std::filesystem::path log_path;    // one JSON record per step, appended
    std::filesystem::path preview_dir; // preview_<phase>_<step>.png of frame 0
    std::filesystem::path dump_dir;    // diagnostics and last-good checkpoint on abort
    std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
    Model model;
    std::vector<StepRecord> history;
};

/// Photometric reconstruction. Starts from `init` when given (continued
/// training), otherwise from init_model. Throws TrainingAborted when the loss
/// or a gradient becomes non-finite, after writing a diagnostic dump and the
/// last good checkpoint into outputs.dump_dir.
TrainResult reconstruct(const Dataset& dataset, const Rig& rig, const TrainConfig& config,
                        const TrainOutputs& outputs = {}, const std::optional<Model>& init = std::nullopt);

/// Per-frame data of an edit session. Sources are never modified; targets
/// start as copies of the sources and are replaced by edited renders.
struct EditSession {
    std::vector<ImageU8> sources, targets;
    int cursor{0};
    int updates{0};
};

struct EditResult {
    Model model;
    std::vector<StepRecord> history;
    EditSession session;
};

/// Iterative dataset update. Every update_period steps the cursor frame is
/// rendered, edited (face-aware unless disabled) and written into its target.
/// `embedder` serves the expression term; nullptr selects the pixel-moment
/// embedder. Editor failures propagate after the current model is saved to
/// outputs.dump_dir.
EditResult edit(const Model& model, const Dataset& dataset, const Rig& rig, Editor& editor, const std::string& prompt,
                const TrainConfig& config, const TrainOutputs& outputs = {},
                const ExpressionEmbedder* embedder = nullptr);

struct VideoReport {
    int frames{0};
    int skipped{0};
    double wall_s{0};
    double fps{0};
    std::vector<double> frame_ms;
    std::string to_json() const;
};

/// Renders every frame of `dataset` into out_dir/NNNNN.png. Frames whose
/// parameters do not fit the rig are skipped with a warning.
VideoReport render_video(const Model& model, const Rig& rig, const Dataset& dataset, const TrainConfig& config,
                         const std::filesystem::path& out_dir);

/// Peak signal-to-noise ratio in dB for values in [0, 1]; infinite for equal images.
double psnr(const Image<float>& a, const Image<float>& b);

/// Throws ContractViolation unless opacities lie in (0, 1), scales are
/// positive and finite, and every displacement is within d_max.
void check_model_invariants(const Model& model, double max_displacement);

} // namespace ngf
