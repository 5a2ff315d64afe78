#pragma once

#include "ngf/editors.hpp"
#include "ngf/losses.hpp"
#include "ngf/protocol.hpp"

#include <sys/types.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <memory>
#include <string>

namespace ngf {

struct PluginOptions {
    double handshake_timeout_s{30};
    double request_timeout_s{120};
    std::filesystem::path workdir; // scratch space for exchanged images; created if missing
    std::filesystem::path transcript; // optional: every exchanged line is appended here
};

/// A child process speaking wire protocol v1 over its stdin/stdout. Stderr is
/// captured to <workdir>/plugin.stderr and quoted in spawn errors.
class PluginProcess {
public:
    PluginProcess(const std::string& command_line, const PluginOptions& options);
    ~PluginProcess();
    PluginProcess(const PluginProcess&) = delete;
    PluginProcess& operator=(const PluginProcess&) = delete;

    void send_line(const std::string& line);
    /// Throws PluginTimeout after `timeout_s`, ProtocolError if the child exits.
    std::string read_line(double timeout_s);
    bool alive();
    void kill();
    std::string captured_stderr() const;

private:
    pid_t pid_{-1};
    int to_child_{-1}, from_child_{-1};
    std::string buffer_;
    std::filesystem::path stderr_path_;
    std::filesystem::path transcript_;
    void record(const std::string& line);
};

/// Editor backed by an external plugin. Requests are serialized; a crash or
/// timeout triggers one restart and resend before the error propagates.
class PluginEditor final : public Editor {
public:
    PluginEditor(std::string command_line, PluginOptions options);
    std::set<std::string> capabilities() const override { return capabilities_; }
    EditOutput edit(const EditInput& in) override;
    Eigen::VectorXd embed(const ImageU8& crop) override;

private:
    std::string command_;
    PluginOptions options_;
    std::unique_ptr<PluginProcess> process_;
    std::set<std::string> capabilities_;
    std::int64_t next_id_{1};

    void start();
    EditResponse round_trip(const EditRequest& req);
};

/// Non-differentiable expression embedder served by a plugin's "embed" verb.
class PluginEmbedder final : public ExpressionEmbedder {
public:
    explicit PluginEmbedder(Editor& editor) : editor_(editor) {}
    Eigen::VectorXd embed(const Image<double>& crop) const override;

private:
    Editor& editor_;
};

/// Plugin-side loop: answers requests from `in` on `out` using `editor` until
/// end of input. Edited images are written next to the request's render path.
void serve_plugin(Editor& editor, std::istream& in, std::ostream& out);

/// Wraps an editor so that it also answers "embed" with the pixel-moment code.
std::unique_ptr<Editor> with_pixel_moment_embed(std::unique_ptr<Editor> editor);

} // namespace ngf
