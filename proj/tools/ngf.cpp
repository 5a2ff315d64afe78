// ngf: command-line entry point.

#include "ngf/checkpoint.hpp"
#include "ngf/config.hpp"
#include "ngf/dataset.hpp"
#include "ngf/errors.hpp"
#include "ngf/gradcheck.hpp"
#include "ngf/hash.hpp"
#include "ngf/parallel.hpp"
#include "ngf/plugin.hpp"
#include "ngf/splatter.hpp"
#include "ngf/synthetic.hpp"
#include "ngf/trainer.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace ngf;

namespace {

enum Exit { ok = 0, other = 1, usage = 2, aborted = 3, plugin_failure = 4 };

struct Common {
    bool deterministic{false};
    int threads{0};
    std::string config_path;
    std::optional<std::int64_t> iterations;
    std::optional<std::uint64_t> seed;
    std::optional<double> lambda_exp;
    std::string decoder; // "", "on" or "off"
    bool no_face_aware{false};
    std::optional<std::int64_t> update_period;
};

void add_config_flags(CLI::App* cmd, Common& c, bool edit_flags) {
    cmd->add_option("--config", c.config_path, "Configuration file (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--iterations", c.iterations, "Override the step count of this phase");
    cmd->add_option("--seed", c.seed, "Override the seed");
    cmd->add_option("--decoder", c.decoder, "on | off (off splats feature channels 0-2 as RGB)")
        ->check(CLI::IsMember({"on", "off"}));
    if (edit_flags) {
        cmd->add_option("--lambda-exp", c.lambda_exp, "Weight of the expression term")->check(CLI::NonNegativeNumber);
        cmd->add_flag("--no-face-aware", c.no_face_aware, "Edit whole portraits only");
        cmd->add_option("--update-period", c.update_period, "Dataset update period in steps")
            ->check(CLI::PositiveNumber);
    }
}

TrainConfig resolve_config(const Common& c, bool edit_phase) {
    TrainConfig cfg = c.config_path.empty() ? TrainConfig{} : load_config(c.config_path);
    if (c.iterations) (edit_phase ? cfg.edit_iterations : cfg.iterations) = *c.iterations;
    if (c.seed) cfg.seed = *c.seed;
    if (c.lambda_exp) cfg.weights.expression = *c.lambda_exp;
    if (!c.decoder.empty()) cfg.decoder = c.decoder == "on";
    if (c.no_face_aware) cfg.face_aware.enabled = false;
    if (c.update_period) cfg.update_period = *c.update_period;
    if (c.threads > 0) cfg.threads = c.threads;
    if (c.deterministic) cfg.threads = 1;
    cfg.validate();
    set_max_threads(cfg.threads);
    return cfg;
}

Rig rig_for(const Dataset& ds, const std::string& rig_flag) {
    const fs::path p = rig_flag.empty() ? ds.root / ds.rig_path : fs::path(rig_flag);
    Rig rig = load_rig(p);
    if (rig_flag.empty() && !ds.rig_sha256.empty() && sha256_file(p) != ds.rig_sha256) {
        throw ValidationError(p.string() + ": SHA-256 does not match the dataset's rig reference");
    }
    return rig;
}

void save_last_good(const TrainingAborted& e, const fs::path& out) {
    const fs::path last = fs::path(e.dump_path()).parent_path() / "last_good.ngf";
    if (!e.dump_path().empty() && fs::exists(last)) {
        fs::copy_file(last, out, fs::copy_options::overwrite_existing);
        spdlog::error("last good checkpoint written to {}; diagnostics in {}", out.string(), e.dump_path());
    }
}

} // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("ngf"));
    CLI::App app{"Neural Gaussian avatar reconstruction and editing"};
    app.require_subcommand(1);
    Common common;
    app.add_flag("--deterministic", common.deterministic, "Single-threaded, bit-reproducible execution");
    app.add_option("--threads", common.threads, "Worker thread cap (0 = all cores)")->check(CLI::NonNegativeNumber);
    app.add_flag_callback("--quiet", [] { spdlog::set_level(spdlog::level::warn); }, "Only print warnings and errors");

    // synth
    std::string synth_spec, synth_out;
    auto* synth = app.add_subcommand("synth", "Generate the synthetic sphere-head dataset");
    synth->add_option("--spec", synth_spec, "Dataset spec (JSON)")->required()->check(CLI::ExistingFile);
    synth->add_option("--out", synth_out, "Output directory")->required();

    // reconstruct
    std::string rec_dataset, rec_rig, rec_out, rec_log, rec_preview, rec_init;
    auto* rec = app.add_subcommand("reconstruct", "Fit the avatar to a dataset");
    rec->add_option("--dataset", rec_dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    rec->add_option("--rig", rec_rig, "Rig file")->required()->check(CLI::ExistingFile);
    rec->add_option("--out", rec_out, "Output checkpoint")->required();
    rec->add_option("--log", rec_log, "Loss log (default <out>.losses.jsonl)");
    rec->add_option("--preview-dir", rec_preview, "Directory for preview renders");
    rec->add_option("--init", rec_init, "Continue from this checkpoint")->check(CLI::ExistingFile);
    add_config_flags(rec, common, false);

    // edit
    std::string ed_ckpt, ed_dataset, ed_rig, ed_plugin, ed_builtin, ed_prompt, ed_out, ed_log, ed_preview;
    bool ed_plugin_embed = false;
    auto* ed = app.add_subcommand("edit", "Edit a reconstructed avatar by iterative dataset update");
    ed->add_option("--ckpt", ed_ckpt, "Reconstruction checkpoint")->required()->check(CLI::ExistingFile);
    ed->add_option("--dataset", ed_dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    ed->add_option("--rig", ed_rig, "Rig file (default: the dataset's rig)")->check(CLI::ExistingFile);
    auto* plug = ed->add_option("--plugin", ed_plugin, "Editor plugin command line");
    auto* builtin = ed->add_option("--builtin", ed_builtin, "Builtin editor name[:args]");
    plug->excludes(builtin);
    ed->add_option("--prompt", ed_prompt, "Edit instruction passed to the editor")->required();
    ed->add_option("--out", ed_out, "Output checkpoint")->required();
    ed->add_option("--log", ed_log, "Loss log (default <out>.losses.jsonl)");
    ed->add_option("--preview-dir", ed_preview, "Directory for preview renders");
    ed->add_flag("--plugin-embed", ed_plugin_embed, "Use the plugin's embed verb for the expression term");
    add_config_flags(ed, common, true);

    // render
    std::string rd_ckpt, rd_dataset, rd_rig, rd_out, rd_report;
    auto* rd = app.add_subcommand("render", "Render every frame of a dataset");
    rd->add_option("--ckpt", rd_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    rd->add_option("--dataset", rd_dataset, "Dataset directory (params.json is enough)")
        ->required()
        ->check(CLI::ExistingDirectory);
    rd->add_option("--rig", rd_rig, "Rig file (default: the dataset's rig)")->check(CLI::ExistingFile);
    rd->add_option("--out", rd_out, "Output directory")->required();
    rd->add_option("--report", rd_report, "Timing report (JSON)");
    add_config_flags(rd, common, false);

    // gradcheck
    GradcheckOptions gc;
    std::string gc_report;
    auto* gcc = app.add_subcommand("gradcheck", "Finite-difference checks of all backward passes");
    gcc->add_option("--seed", gc.seed, "Seed");
    gcc->add_option("--probes", gc.probes, "Probes per class")->check(CLI::PositiveNumber);
    gcc->add_option("--filter", gc.filter, "Only classes whose name contains this");
    gcc->add_option("--report", gc_report, "Write the report (JSON) here");

    // bench
    int bench_count = 0, bench_repeats = 20;
    std::vector<int> bench_res;
    std::uint64_t bench_seed = 0;
    std::string bench_report;
    auto* bench = app.add_subcommand("bench", "Time the tiled rasterizer on a random scene");
    bench->add_option("--gaussians", bench_count, "Gaussian count")->required()->check(CLI::PositiveNumber);
    bench->add_option("--res", bench_res, "Width and height")->required()->expected(2)->check(CLI::PositiveNumber);
    bench->add_option("--repeats", bench_repeats, "Timed repetitions (at least 10)")->check(CLI::Range(10, 100000));
    bench->add_option("--seed", bench_seed, "Scene seed");
    bench->add_option("--report", bench_report, "Write the report (JSON) here");

    // plugin
    std::string pl_builtin;
    bool pl_embed = false;
    auto* pl = app.add_subcommand("plugin", "Serve a builtin editor over the plugin protocol on stdin/stdout");
    pl->add_option("--builtin", pl_builtin, "Builtin editor name[:args]")->required();
    pl->add_flag("--embed", pl_embed, "Also answer embed requests with the pixel-moment embedder");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? Exit::ok : Exit::usage;
    }

    try {
        if (common.deterministic) set_max_threads(1);
        if (common.threads > 0 && !common.deterministic) set_max_threads(common.threads);

        if (*synth) {
            const SynthSpec spec = parse_synth_spec(read_text_file(synth_spec));
            make_synthetic(spec, synth_out);
            spdlog::info("wrote {} frames to {}", spec.n_frames, synth_out);
        } else if (*rec) {
            const TrainConfig cfg = resolve_config(common, false);
            const Rig rig = load_rig(rec_rig);
            const Dataset ds = load_dataset(rec_dataset, &rig);
            TrainOutputs outs;
            outs.log_path = rec_log.empty() ? fs::path(rec_out + ".losses.jsonl") : fs::path(rec_log);
            if (fs::exists(outs.log_path)) fs::remove(outs.log_path);
            outs.preview_dir = rec_preview;
            outs.dump_dir = rec_out + ".abort";
            std::optional<Model> init;
            if (!rec_init.empty()) init = load_checkpoint(rec_init);
            try {
                const TrainResult r = reconstruct(ds, rig, cfg, outs, init);
                save_checkpoint(rec_out, r.model);
                spdlog::info("reconstruction finished after {} steps; checkpoint {}", r.model.step, rec_out);
            } catch (const TrainingAborted& e) {
                save_last_good(e, rec_out);
                throw;
            }
        } else if (*ed) {
            if (ed_plugin.empty() == ed_builtin.empty()) {
                std::cerr << "edit: exactly one of --plugin or --builtin is required\n";
                return Exit::usage;
            }
            const TrainConfig cfg = resolve_config(common, true);
            const Dataset probe = load_dataset(ed_dataset, nullptr, false);
            const Rig rig = rig_for(probe, ed_rig);
            const Dataset ds = load_dataset(ed_dataset, &rig);
            const Model model = load_checkpoint(ed_ckpt);
            std::unique_ptr<Editor> editor;
            if (!ed_builtin.empty()) {
                editor = make_builtin_editor(ed_builtin);
            } else {
                PluginOptions po;
                po.handshake_timeout_s = cfg.handshake_timeout_s;
                po.request_timeout_s = cfg.request_timeout_s;
                po.workdir = fs::absolute(ed_out + ".plugin");
                editor = std::make_unique<PluginEditor>(ed_plugin, po);
            }
            std::unique_ptr<PluginEmbedder> plugin_embedder;
            if (ed_plugin_embed) {
                if (!editor->capabilities().count("embed")) throw ProtocolError("editor does not offer the embed verb");
                plugin_embedder = std::make_unique<PluginEmbedder>(*editor);
            }
            TrainOutputs outs;
            outs.log_path = ed_log.empty() ? fs::path(ed_out + ".losses.jsonl") : fs::path(ed_log);
            if (fs::exists(outs.log_path)) fs::remove(outs.log_path);
            outs.preview_dir = ed_preview;
            outs.dump_dir = ed_out + ".abort";
            try {
                const EditResult r = edit(model, ds, rig, *editor, ed_prompt, cfg, outs, plugin_embedder.get());
                save_checkpoint(ed_out, r.model);
                spdlog::info("edit finished: {} dataset updates, checkpoint {}", r.session.updates, ed_out);
            } catch (const TrainingAborted& e) {
                save_last_good(e, ed_out);
                throw;
            }
        } else if (*rd) {
            const TrainConfig cfg = resolve_config(common, false);
            const Model model = load_checkpoint(rd_ckpt);
            TrainConfig used = cfg;
            if (common.config_path.empty() && !model.config_json.empty()) used = parse_config(model.config_json);
            if (!common.decoder.empty()) used.decoder = common.decoder == "on";
            const Dataset ds = load_dataset(rd_dataset, nullptr, false);
            const Rig rig = rig_for(ds, rd_rig);
            const VideoReport report = render_video(model, rig, ds, used, rd_out);
            if (!rd_report.empty()) write_text_file(rd_report, report.to_json());
            spdlog::info("rendered {} frames ({} skipped) at {:.1f} frames/s", report.frames, report.skipped,
                         report.fps);
        } else if (*gcc) {
            const GradcheckReport report = run_gradcheck(gc);
            for (const auto& c : report.classes) {
                std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << "  probes=" << c.probes
                          << " resampled=" << c.resampled << " max_rel_err=" << c.max_rel_err
                          << " tol=" << c.tolerance << '\n';
            }
            if (!gc_report.empty()) write_text_file(gc_report, report.to_json());
            return report.passed() ? Exit::ok : Exit::other;
        } else if (*bench) {
            const Camera cam = default_camera(bench_res[0], bench_res[1]);
            const FrameGaussians<float> g = random_scene(bench_count, 8, cam, bench_seed).cast<float>();
            const BenchmarkReport report = benchmark(g, cam, bench_repeats);
            std::cout << report.to_json() << '\n';
            if (!bench_report.empty()) write_text_file(bench_report, report.to_json());
        } else if (*pl) {
            std::unique_ptr<Editor> editor = make_builtin_editor(pl_builtin);
            if (pl_embed) editor = with_pixel_moment_embed(std::move(editor));
            serve_plugin(*editor, std::cin, std::cout);
        }
    } catch (const TrainingAborted& e) {
        spdlog::error("{}", e.what());
        return Exit::aborted;
    } catch (const ProtocolError& e) {
        spdlog::error("plugin: {}", e.what());
        return Exit::plugin_failure;
    } catch (const SpawnError& e) {
        spdlog::error("plugin: {}", e.what());
        return Exit::plugin_failure;
    } catch (const PluginTimeout& e) {
        spdlog::error("plugin: {}", e.what());
        return Exit::plugin_failure;
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return Exit::usage;
    } catch (const ValidationError& e) {
        spdlog::error("{}", e.what());
        return Exit::usage;
    } catch (const InvalidParameter& e) {
        spdlog::error("{}", e.what());
        return Exit::usage;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return Exit::other;
    }
    return Exit::ok;
}
