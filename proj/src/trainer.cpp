#include "ngf/trainer.hpp"

#include "ngf/errors.hpp"
#include "ngf/face_aware.hpp"
#include "ngf/hash.hpp"
#include "ngf/optim.hpp"
#include "ngf/png_io.hpp"
#include "ngf/renderer.hpp"
#include "ngf/splatter.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

namespace ngf {

namespace fs = std::filesystem;
using nlohmann::json;

std::string rig_fingerprint(const Rig& rig) { return sha256_hex(rig_to_json(rig)); }

Model init_model(const Rig& rig, const TrainConfig& config) {
    config.validate();
    Model m;
    m.field = init_field<float>(rig, config.field_resolution, config.num_features, config.seed);
    m.delta = Vertices<float>::Zero(rig.num_vertices(), 3);
    m.renderer = init_renderer<float>(config.num_features, config.seed + 1, config.renderer_hidden);
    m.rig_hash = rig_fingerprint(rig);
    m.config_json = config_to_json(config);
    return m;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

void check_compatible(const Model& model, const Rig& rig, const TrainConfig& config) {
    if (model.rig_hash != rig_fingerprint(rig)) throw ConfigError("checkpoint was trained with a different rig");
    if (model.delta.rows() != rig.num_vertices()) throw ConfigError("checkpoint displacement does not match the rig");
    if (model.field.num_features != model.renderer.num_features) {
        throw ConfigError("checkpoint field and renderer disagree on the feature count");
    }
    if (model.field.num_features != config.num_features || model.field.resolution != config.field_resolution) {
        spdlog::warn("field settings of the configuration differ from the checkpoint; the checkpoint wins");
    }
}

/// Everything the forward pass produces that backward needs.
struct Forward {
    Vertices<float> vertices;
    FrameGaussians<float> gaussians;
    SplatWorkspace<float> workspace;
    FeatureImage<float> features;
    Composite<float> image;
    Camera camera;
};

void run_forward(const Model& model, const Rig& rig, const BodyParams<double>& params, const Camera& cam,
                 const TrainConfig& config, Forward& f) {
    const BodyParams<float> p = params.cast<float>();
    f.camera = cam;
    f.vertices = deformed_mesh(rig, p, model.delta);
    f.gaussians = embed(model.field, f.vertices, rig);
    f.features = rasterize_forward(f.gaussians, cam, f.workspace, config.raster);
    composite(f.features, config.decoder ? &model.renderer : nullptr, config.background, f.image);
}

template <typename M> bool all_finite(const M& m) { return m.allFinite(); }
bool all_finite(const std::vector<float>& v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

/// Model plus optimizer state for one phase.
class Optimizer {
public:
    Optimizer(Model model, const Rig& rig, const TrainConfig& config, const Dataset& dataset, std::string phase,
              const TrainOutputs& outputs)
        : model_(std::move(model)), rig_(rig), config_(config), dataset_(dataset), phase_(std::move(phase)),
          outputs_(outputs) {
        const double scale = phase_ == "edit" ? config.edit_lr_scale : 1.0;
        auto settings = [&](double lr) { return AdamSettings{scale * lr, config.beta1, config.beta2, config.eps}; };
        const auto& f = model_.field;
        features_ = Adam(f.features.size(), settings(config.lr.features));
        opacity_ = Adam(f.opacity_logit.size(), settings(config.lr.opacity));
        scale_ = Adam(f.log_scale.size(), settings(config.lr.scale));
        rotation_ = Adam(f.rotation.size(), settings(config.lr.rotation));
        delta_ = Adam(model_.delta.size(), settings(config.lr.delta));
        renderer_ = Adam(model_.renderer.params.size(), settings(config.lr.renderer));
        if (!outputs_.log_path.empty()) {
            if (outputs_.log_path.has_parent_path()) fs::create_directories(outputs_.log_path.parent_path());
            log_.open(outputs_.log_path, std::ios::app);
            if (!log_) throw ConfigError(outputs_.log_path.string() + ": cannot open loss log");
        }
    }

    Model& model() { return model_; }
    std::vector<StepRecord>& history() { return history_; }

    /// One optimizer step on `frame` against `target`.
    void step(int frame, const Image<float>& target, const Image<float>& source, const Image<float>& alpha_target,
              LossMode mode, const ExpressionEmbedder* embedder) {
        const auto t0 = Clock::now();
        const FrameRecord& rec = dataset_.frames[frame];
        run_forward(model_, rig_, rec.params, dataset_.camera(frame), config_, fwd_);
        LossInputs<float> in;
        in.rendered = &fwd_.image.rgb;
        in.target = &target;
        in.alpha = &fwd_.image.alpha;
        in.alpha_target = &alpha_target;
        in.stable_features = &fwd_.image.stable;
        in.source = &source;
        in.face_box = rec.face_box;
        in.embedder = embedder;
        LossGrads<float> g;
        const LossTerms terms = total_loss(mode, config_.weights, in, &g);
        if (!std::isfinite(terms.total)) abort(frame, terms, "non-finite loss");

        std::vector<float> drenderer;
        const FeatureImage<float> dIF = composite_backward(fwd_.features, config_.decoder ? &model_.renderer : nullptr,
                                                          config_.background, fwd_.image, g, &drenderer);

        const GaussianGrad<float> dgauss = rasterize_backward(fwd_.gaussians, fwd_.camera, fwd_.workspace, dIF);
        FieldGrad<float> dfield = FieldGrad<float>::zeros(model_.field);
        const Vertices<float> dverts = embed_backward(model_.field, fwd_.vertices, rig_, dgauss, dfield);
        if (!all_finite(dfield.features) || !all_finite(dfield.opacity_logit) || !all_finite(dfield.log_scale) ||
            !all_finite(dfield.rotation) || !all_finite(dverts) || !all_finite(drenderer)) {
            abort(frame, terms, "non-finite gradient");
        }

        auto& f = model_.field;
        features_.step(f.features.data(), dfield.features.data(), f.features.size());
        opacity_.step(f.opacity_logit.data(), dfield.opacity_logit.data(), f.opacity_logit.size());
        scale_.step(f.log_scale.data(), dfield.log_scale.data(), f.log_scale.size());
        rotation_.step(f.rotation.data(), dfield.rotation.data(), f.rotation.size());
        delta_.step(model_.delta.data(), dverts.data(), model_.delta.size());
        if (config_.decoder) renderer_.step(model_.renderer.params.data(), drenderer.data(), drenderer.size());
        clamp_displacement(model_.delta, config_.max_displacement);
        ++model_.step;
#ifndef NDEBUG
        check_model_invariants(model_, config_.max_displacement);
#endif

        StepRecord r{phase_, model_.step, frame, terms, ms_since(t0)};
        if (log_) log_ << r.to_json() << '\n';
        if (outputs_.on_step) outputs_.on_step(r);
        history_.push_back(std::move(r));
        if (config_.preview_every > 0 && !outputs_.preview_dir.empty() && model_.step % config_.preview_every == 0) {
            preview();
        }
    }

    void preview() {
        fs::create_directories(outputs_.preview_dir);
        const FrameRender r = render_frame(model_, rig_, dataset_.frames[0].params, dataset_.camera(0), config_);
        write_png(outputs_.preview_dir / ("preview_" + phase_ + "_" + std::to_string(model_.step) + ".png"), r.to_u8());
    }

    /// Saves the current model next to the diagnostics; returns its path.
    std::string save_last_good() {
        if (outputs_.dump_dir.empty()) return {};
        fs::create_directories(outputs_.dump_dir);
        const fs::path p = outputs_.dump_dir / "last_good.ngf";
        save_checkpoint(p, model_);
        return p.string();
    }

private:
    Model model_;
    const Rig& rig_;
    const TrainConfig& config_;
    const Dataset& dataset_;
    std::string phase_;
    const TrainOutputs& outputs_;
    Adam features_, opacity_, scale_, rotation_, delta_, renderer_;
    Forward fwd_;
    std::vector<StepRecord> history_;
    std::ofstream log_;

    [[noreturn]] void abort(int frame, const LossTerms& terms, const std::string& reason) {
        const std::int64_t step = model_.step + 1;
        std::string dump;
        if (!outputs_.dump_dir.empty()) {
            fs::create_directories(outputs_.dump_dir);
            json d;
            d["phase"] = phase_;
            d["step"] = step;
            d["frame"] = frame;
            d["reason"] = reason;
            d["terms"] = json::parse(StepRecord{phase_, step, frame, terms, 0}.to_json())["terms"];
            d["last_good_checkpoint"] = save_last_good();
            const auto& f = model_.field;
            d["finite"] = {{"features", f.features.allFinite()}, {"opacity_logit", f.opacity_logit.allFinite()},
                           {"log_scale", f.log_scale.allFinite()}, {"rotation", f.rotation.allFinite()},
                           {"delta", model_.delta.allFinite()}, {"renderer", all_finite(model_.renderer.params)}};
            const fs::path p = outputs_.dump_dir / ("abort_step_" + std::to_string(step) + ".json");
            write_text_file(p, d.dump(2));
            dump = p.string();
        }
        spdlog::error("{} step {}: {} on frame {}", phase_, step, reason, frame);
        throw TrainingAborted(phase_ + " aborted at step " + std::to_string(step) + ": " + reason, dump);
    }
};

std::vector<Image<float>> to_float_all(const std::vector<ImageU8>& imgs) {
    std::vector<Image<float>> out;
    out.reserve(imgs.size());
    for (const auto& i : imgs) out.push_back(to_float<float>(i));
    return out;
}

void require_images(const Dataset& ds) {
    if (static_cast<int>(ds.images.size()) != ds.size() || static_cast<int>(ds.masks.size()) != ds.size()) {
        throw ConfigError("training needs a dataset loaded with its images");
    }
}

} // namespace

template <typename T>
void composite(const FeatureImage<T>& features, const RendererWeights<T>* decoder, const Vec3<double>& background,
               Composite<T>& out) {
    const int K = features.channels - 1, H = features.height, W = features.width;
    if (K < 3) throw ConfigError("composite: need at least 3 feature planes");
    const size_t n = static_cast<size_t>(H) * W;
    const T* A = features.plane(K);
    out.alpha = Image<T>(1, H, W);
    std::copy(A, A + n, out.alpha.data.begin());
    out.rgb = Image<T>(3, H, W);
    out.stable = Image<T>(3, H, W);
    if (decoder) {
        out.decoded = decode(*decoder, features, &out.cache);
    } else {
        out.decoded = Image<T>();
    }
    for (int c = 0; c < 3; ++c) {
        const T bg = T(background[c]);
        const T* F = features.plane(c);
        T* S = out.stable.plane(c);
        T* I = out.rgb.plane(c);
        for (size_t i = 0; i < n; ++i) S[i] = F[i] + (T(1) - A[i]) * bg;
        if (decoder) {
            const T* U = out.decoded.plane(c);
            for (size_t i = 0; i < n; ++i) I[i] = A[i] * U[i] + (T(1) - A[i]) * bg;
        } else {
            std::copy(S, S + n, I);
        }
    }
}

template <typename T>
FeatureImage<T> composite_backward(const FeatureImage<T>& features, const RendererWeights<T>* decoder,
                                   const Vec3<double>& background, const Composite<T>& c, const LossGrads<T>& g,
                                   std::vector<T>* drenderer) {
    const int K = features.channels - 1, H = features.height, W = features.width;
    const size_t n = static_cast<size_t>(H) * W;
    const T* A = c.alpha.data.data();
    FeatureImage<T> dIF(K + 1, H, W);
    const bool have_rgb = !g.rendered.empty();
    if (decoder && have_rgb) {
        Image<T> dU(3, H, W);
        for (int ch = 0; ch < 3; ++ch) {
            const T* gI = g.rendered.plane(ch);
            T* d = dU.plane(ch);
            for (size_t i = 0; i < n; ++i) d[i] = A[i] * gI[i];
        }
        DecodeGrad<T> dg = decode_backward(*decoder, c.cache, dU);
        dIF = std::move(dg.input);
        if (drenderer) *drenderer = std::move(dg.params);
    } else if (decoder && drenderer) {
        drenderer->assign(decoder->params.size(), T(0));
    }
    T* dA = dIF.plane(K);
    for (int ch = 0; ch < 3; ++ch) {
        const T bg = T(background[ch]);
        T* d = dIF.plane(ch);
        if (have_rgb) {
            const T* gI = g.rendered.plane(ch);
            if (decoder) {
                const T* U = c.decoded.plane(ch);
                for (size_t i = 0; i < n; ++i) dA[i] += gI[i] * (U[i] - bg);
            } else {
                for (size_t i = 0; i < n; ++i) {
                    d[i] += gI[i];
                    dA[i] -= gI[i] * bg;
                }
            }
        }
        if (!g.stable_features.empty()) {
            const T* gS = g.stable_features.plane(ch);
            for (size_t i = 0; i < n; ++i) {
                d[i] += gS[i];
                dA[i] -= gS[i] * bg;
            }
        }
    }
    if (!g.alpha.empty()) {
        const T* gA = g.alpha.data.data();
        for (size_t i = 0; i < n; ++i) dA[i] += gA[i];
    }
    return dIF;
}

FrameRender render_frame(const Model& model, const Rig& rig, const BodyParams<double>& params, const Camera& cam,
                         const TrainConfig& config) {
    Forward f;
    run_forward(model, rig, params, cam, config, f);
    return {std::move(f.image.rgb), std::move(f.image.alpha)};
}

std::string StepRecord::to_json() const {
    json j;
    j["phase"] = phase;
    j["step"] = step;
    j["frame"] = frame;
    j["terms"] = {{"recon", terms.recon}, {"mask", terms.mask}, {"perceptual", terms.perceptual},
                  {"stable", terms.stable}, {"expression", terms.expression}};
    if (terms.expression_skipped) j["expression_skipped"] = true;
    j["total"] = terms.total;
    j["wall_ms"] = wall_ms;
    return j.dump();
}

TrainResult reconstruct(const Dataset& dataset, const Rig& rig, const TrainConfig& config, const TrainOutputs& outputs,
                        const std::optional<Model>& init) {
    config.validate();
    require_images(dataset);
    Model start = init ? *init : init_model(rig, config);
    if (init) check_compatible(start, rig, config);
    start.config_json = config_to_json(config);

    const auto sources = to_float_all(dataset.images);
    const auto masks = to_float_all(dataset.masks);
    Optimizer opt(std::move(start), rig, config, dataset, "reconstruct", outputs);
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<int> pick(0, dataset.size() - 1);
    for (std::int64_t it = 0; it < config.iterations; ++it) {
        const int frame = pick(rng);
        opt.step(frame, sources[frame], sources[frame], masks[frame], LossMode::reconstruction, nullptr);
    }
    if (config.preview_every > 0 && !outputs.preview_dir.empty()) opt.preview();
    return {std::move(opt.model()), std::move(opt.history())};
}

EditResult edit(const Model& model, const Dataset& dataset, const Rig& rig, Editor& editor, const std::string& prompt,
                const TrainConfig& config, const TrainOutputs& outputs, const ExpressionEmbedder* embedder) {
    config.validate();
    require_images(dataset);
    check_compatible(model, rig, config);
    if (!editor.capabilities().count("edit")) throw ProtocolError("editor does not support the edit verb");
    PixelMomentEmbedder default_embedder;
    if (!embedder) embedder = &default_embedder;

    EditSession session;
    session.sources = dataset.images;
    session.targets = dataset.images;
    const auto sources = to_float_all(dataset.images);
    const auto masks = to_float_all(dataset.masks);
    auto targets = sources;

    Model start = model;
    start.config_json = config_to_json(config);
    Optimizer opt(std::move(start), rig, config, dataset, "edit", outputs);
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<int> pick(0, dataset.size() - 1);
    const int N = dataset.size();
    for (std::int64_t it = 0; it < config.edit_iterations; ++it) {
        if (config.update_period != kNeverUpdate && it % config.update_period == 0) {
            const int c = session.cursor;
            const FrameRender r = render_frame(opt.model(), rig, dataset.frames[c].params, dataset.camera(c), config);
            const PixelRect& box = dataset.frames[c].face_box;
            FaceAwareSettings fa = config.face_aware;
            if (fa.enabled && (box.w < kMinFaceBox || box.h < kMinFaceBox)) {
                spdlog::warn("frame {}: face box too small for face-aware editing; editing the portrait only", c);
                fa.enabled = false;
            }
            ImageU8 edited;
            try {
                edited = face_aware_edit(editor, r.to_u8(), session.sources[c], box, dataset.head_torso[c], prompt, fa);
            } catch (const Error& e) {
                const std::string saved = opt.save_last_good();
                spdlog::error("editor failed on frame {}: {}{}", c, e.what(),
                              saved.empty() ? "" : "; current model saved to " + saved);
                throw;
            }
            if (edited.width != r.rgb.width || edited.height != r.rgb.height || edited.channels != 3) {
                throw ProtocolError("editor returned an image of the wrong size");
            }
            session.targets[c] = std::move(edited);
            targets[c] = to_float<float>(session.targets[c]);
            session.cursor = (c + 1) % N;
            ++session.updates;
        }
        const int frame = pick(rng);
        opt.step(frame, targets[frame], sources[frame], masks[frame], LossMode::edit, embedder);
    }
    if (config.preview_every > 0 && !outputs.preview_dir.empty()) opt.preview();
    return {std::move(opt.model()), std::move(opt.history()), std::move(session)};
}

std::string VideoReport::to_json() const {
    json j;
    j["frames"] = frames;
    j["skipped"] = skipped;
    j["wall_s"] = wall_s;
    j["fps"] = fps;
    j["frame_ms"] = frame_ms;
    return j.dump(1);
}

VideoReport render_video(const Model& model, const Rig& rig, const Dataset& dataset, const TrainConfig& config,
                         const fs::path& out_dir) {
    const auto t0 = Clock::now();
    check_compatible(model, rig, config);
    fs::create_directories(out_dir);
    VideoReport report;
    for (int i = 0; i < dataset.size(); ++i) {
        const auto f0 = Clock::now();
        try {
            dataset.frames[i].params.validate(rig);
        } catch (const Error& e) {
            spdlog::warn("frame {}: skipped ({})", i, e.what());
            ++report.skipped;
            continue;
        }
        const FrameRender r = render_frame(model, rig, dataset.frames[i].params, dataset.camera(i), config);
        write_png(out_dir / frame_name(i), r.to_u8());
        report.frame_ms.push_back(ms_since(f0));
        ++report.frames;
    }
    report.wall_s = ms_since(t0) / 1000.0;
    report.fps = report.wall_s > 0 ? report.frames / report.wall_s : 0.0;
    return report;
}

double psnr(const Image<float>& a, const Image<float>& b) {
    if (!a.same_shape(b) || a.data.empty()) throw ConfigError("psnr: images differ in shape");
    double se = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        se += d * d;
    }
    const double mse = se / double(a.data.size());
    return mse == 0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(mse);
}

void check_model_invariants(const Model& model, double max_displacement) {
    const auto& f = model.field;
    for (Eigen::Index i = 0; i < f.opacity_logit.size(); ++i) {
        const double o = 1.0 / (1.0 + std::exp(-double(f.opacity_logit[i])));
        if (!(o > 0 && o < 1)) throw ContractViolation("opacity of Gaussian " + std::to_string(i) + " left (0, 1)");
    }
    for (Eigen::Index i = 0; i < f.log_scale.size(); ++i) {
        const double s = std::exp(double(f.log_scale.data()[i]));
        if (!(s > 0) || !std::isfinite(s)) throw ContractViolation("scale is not positive and finite");
    }
    for (Eigen::Index v = 0; v < model.delta.rows(); ++v) {
        if (!(model.delta.row(v).template cast<double>().norm() <= max_displacement * (1 + 1e-6))) {
            throw ContractViolation("displacement of vertex " + std::to_string(v) + " exceeds the bound");
        }
    }
}

#define NGF_INSTANTIATE(T)                                                                                      \
    template void composite(const FeatureImage<T>&, const RendererWeights<T>*, const Vec3<double>&, Composite<T>&); \
    template FeatureImage<T> composite_backward(const FeatureImage<T>&, const RendererWeights<T>*,                 \
                                                const Vec3<double>&, const Composite<T>&, const LossGrads<T>&,     \
                                                std::vector<T>*);

NGF_INSTANTIATE(float)
NGF_INSTANTIATE(double)

} // namespace ngf
