#include "ngf/plugin.hpp"

#include "ngf/errors.hpp"
#include "ngf/hash.hpp"
#include "ngf/png_io.hpp"

#include <spdlog/spdlog.h>

#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <iostream>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace ngf {

namespace fs = std::filesystem;

namespace {

/// The child closed its output or exited.
class PluginExited : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

std::string tail_of(const std::string& s, size_t n) { return s.size() <= n ? s : "..." + s.substr(s.size() - n); }

} // namespace

PluginProcess::PluginProcess(const std::string& command_line, const PluginOptions& options)
    : transcript_(options.transcript) {
    std::signal(SIGPIPE, SIG_IGN);
    fs::create_directories(options.workdir);
    stderr_path_ = options.workdir / "plugin.stderr";
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0) throw SpawnError("cannot create pipe: " + std::string(std::strerror(errno)));
    if (pipe(out_pipe) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw SpawnError("cannot create pipe: " + std::string(std::strerror(errno)));
    }
    const int err_fd = open(stderr_path_.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    const std::string shell_cmd = "exec " + command_line;
    const std::string workdir = options.workdir.string();
    pid_ = fork();
    if (pid_ < 0) throw SpawnError("fork failed: " + std::string(std::strerror(errno)));
    if (pid_ == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        if (err_fd >= 0) dup2(err_fd, STDERR_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        if (chdir(workdir.c_str()) != 0) _exit(126);
        execl("/bin/sh", "sh", "-c", shell_cmd.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    if (err_fd >= 0) close(err_fd);
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    fcntl(to_child_, F_SETFD, FD_CLOEXEC);
    fcntl(from_child_, F_SETFD, FD_CLOEXEC);
}

PluginProcess::~PluginProcess() {
    if (to_child_ >= 0) close(to_child_);
    to_child_ = -1;
    if (pid_ > 0) {
        // Give the plugin a moment to exit on end of input.
        for (int i = 0; i < 50; ++i) {
            if (waitpid(pid_, nullptr, WNOHANG) != 0) {
                pid_ = -1;
                break;
            }
            usleep(10000);
        }
        if (pid_ > 0) kill();
    }
    if (from_child_ >= 0) close(from_child_);
}

void PluginProcess::kill() {
    if (pid_ > 0) {
        ::kill(pid_, SIGKILL);
        waitpid(pid_, nullptr, 0);
        pid_ = -1;
    }
}

bool PluginProcess::alive() {
    if (pid_ <= 0) return false;
    if (waitpid(pid_, nullptr, WNOHANG) == 0) return true;
    pid_ = -1;
    return false;
}

std::string PluginProcess::captured_stderr() const {
    try {
        return tail_of(read_text_file(stderr_path_), 2000);
    } catch (const std::exception&) {
        return {};
    }
}

void PluginProcess::record(const std::string& line) {
    if (transcript_.empty()) return;
    std::ofstream out(transcript_, std::ios::app | std::ios::binary);
    out << line << '\n';
}

void PluginProcess::send_line(const std::string& line) {
    record(line);
    const std::string data = line + "\n";
    size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = write(to_child_, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw PluginExited("plugin input closed: " + std::string(std::strerror(errno)));
        }
        off += static_cast<size_t>(n);
    }
}

std::string PluginProcess::read_line(double timeout_s) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    for (;;) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            record(line);
            return line;
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw PluginTimeout("plugin did not answer within " + std::to_string(timeout_s) + " s");
        pollfd pfd{from_child_, POLLIN, 0};
        const int rc = poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1000)));
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError("poll failed: " + std::string(std::strerror(errno)));
        }
        if (rc == 0) continue;
        char chunk[4096];
        const ssize_t n = read(from_child_, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw PluginExited("plugin output failed: " + std::string(std::strerror(errno)));
        }
        if (n == 0) throw PluginExited("plugin exited");
        buffer_.append(chunk, static_cast<size_t>(n));
    }
}

// ---------------------------------------------------------------------------

PluginEditor::PluginEditor(std::string command_line, PluginOptions options)
    : command_(std::move(command_line)), options_(std::move(options)) {
    if (options_.workdir.empty()) {
        options_.workdir = fs::temp_directory_path() / ("ngf-plugin-" + std::to_string(getpid()));
    }
    start();
}

void PluginEditor::start() {
    process_.reset();
    process_ = std::make_unique<PluginProcess>(command_, options_);
    EditRequest hs;
    hs.verb = "handshake";
    try {
        process_->send_line(to_line(hs));
        const EditResponse resp = parse_response(process_->read_line(options_.handshake_timeout_s));
        if (!resp.capabilities) throw ProtocolError("handshake reply carries no capabilities");
        capabilities_ = std::set<std::string>(resp.capabilities->begin(), resp.capabilities->end());
        if (!capabilities_.count("edit") && !capabilities_.count("embed")) {
            throw ProtocolError("plugin advertises neither edit nor embed");
        }
    } catch (const Error& e) {
        const std::string diag = process_->captured_stderr();
        process_->kill();
        process_.reset();
        throw SpawnError("plugin '" + command_ + "' failed to start: " + e.what() +
                         (diag.empty() ? "" : "\nplugin stderr:\n" + diag));
    }
}

EditResponse PluginEditor::round_trip(const EditRequest& req) {
    for (int attempt = 0;; ++attempt) {
        try {
            if (!process_) start();
            process_->send_line(to_line(req));
            const std::string line = process_->read_line(options_.request_timeout_s);
            EditResponse resp = parse_response(line);
            if (resp.id != req.id) throw ProtocolError("response id does not match request " + std::to_string(req.id) + ": " + line);
            if (resp.error) throw ProtocolError("plugin reported an error: " + *resp.error);
            return resp;
        } catch (const PluginExited& e) {
            if (attempt > 0) throw;
            spdlog::warn("plugin crashed ({}); restarting once", e.what());
        } catch (const PluginTimeout& e) {
            if (attempt > 0) throw;
            spdlog::warn("plugin timed out; restarting once");
        }
        if (process_) process_->kill();
        process_.reset();
    }
}

EditOutput PluginEditor::edit(const EditInput& in) {
    if (!capabilities_.count("edit")) throw ProtocolError("plugin does not support the edit verb");
    EditRequest req;
    req.verb = "edit";
    req.id = next_id_++;
    req.prompt = in.prompt;
    const fs::path dir = fs::absolute(options_.workdir);
    const std::string stem = "req" + std::to_string(req.id);
    req.render_path = (dir / (stem + "_render.png")).string();
    req.source_path = (dir / (stem + "_source.png")).string();
    write_png(req.render_path, in.render);
    write_png(req.source_path, in.source);
    if (in.face_render.has_value() != in.face_source.has_value()) {
        throw InvalidParameter("face render and face source must be sent together");
    }
    if (in.face_render) {
        req.face_render_path = (dir / (stem + "_face_render.png")).string();
        req.face_source_path = (dir / (stem + "_face_source.png")).string();
        write_png(*req.face_render_path, *in.face_render);
        write_png(*req.face_source_path, *in.face_source);
    }
    const EditResponse resp = round_trip(req);
    if (!resp.edited_path) throw ProtocolError("edit response carries no edited_path");
    if (in.face_render.has_value() != resp.face_edited_path.has_value()) {
        throw ProtocolError(in.face_render ? "plugin returned a portrait but no face edit"
                                           : "plugin returned a face edit that was not requested");
    }
    EditOutput out;
    try {
        out.edited = read_png(*resp.edited_path, 3);
        if (resp.face_edited_path) out.face_edited = read_png(*resp.face_edited_path, 3);
    } catch (const ValidationError& e) {
        throw ProtocolError(std::string("plugin produced an unreadable image: ") + e.what());
    }
    if (out.edited.width != in.render.width || out.edited.height != in.render.height) {
        throw ProtocolError("edited portrait has the wrong size");
    }
    if (out.face_edited &&
        (out.face_edited->width != in.face_render->width || out.face_edited->height != in.face_render->height)) {
        throw ProtocolError("edited face crop has the wrong size");
    }
    return out;
}

Eigen::VectorXd PluginEditor::embed(const ImageU8& crop) {
    if (!capabilities_.count("embed")) throw ProtocolError("plugin does not support the embed verb");
    EditRequest req;
    req.verb = "embed";
    req.id = next_id_++;
    req.render_path = (fs::absolute(options_.workdir) / ("req" + std::to_string(req.id) + "_crop.png")).string();
    write_png(req.render_path, crop);
    const EditResponse resp = round_trip(req);
    if (!resp.embedding) throw ProtocolError("embed response carries no embedding");
    Eigen::VectorXd v(resp.embedding->size());
    for (size_t i = 0; i < resp.embedding->size(); ++i) v[i] = (*resp.embedding)[i];
    if (!v.allFinite()) throw ProtocolError("embedding contains non-finite values");
    return v;
}

Eigen::VectorXd PluginEmbedder::embed(const Image<double>& crop) const { return editor_.embed(to_u8(crop)); }

// ---------------------------------------------------------------------------

namespace {

std::string edited_name(const std::string& path) {
    const fs::path p(path);
    return (p.parent_path() / (p.stem().string() + ".edited.png")).string();
}

class EmbeddingEditor final : public Editor {
public:
    explicit EmbeddingEditor(std::unique_ptr<Editor> inner) : inner_(std::move(inner)) {}
    std::set<std::string> capabilities() const override {
        auto caps = inner_->capabilities();
        caps.insert("embed");
        return caps;
    }
    EditOutput edit(const EditInput& in) override { return inner_->edit(in); }
    Eigen::VectorXd embed(const ImageU8& crop) override { return embedder_.embed(to_float<double>(crop)); }

private:
    std::unique_ptr<Editor> inner_;
    PixelMomentEmbedder embedder_;
};

} // namespace

std::unique_ptr<Editor> with_pixel_moment_embed(std::unique_ptr<Editor> editor) {
    return std::make_unique<EmbeddingEditor>(std::move(editor));
}

void serve_plugin(Editor& editor, std::istream& in, std::ostream& out) {
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        EditResponse resp;
        try {
            const EditRequest req = parse_request(line);
            if (req.verb == "handshake") {
                const auto caps = editor.capabilities();
                resp.capabilities = std::vector<std::string>(caps.begin(), caps.end());
            } else {
                resp.id = req.id;
                if (req.verb == "edit") {
                    EditInput input;
                    input.render = read_png(req.render_path, 3);
                    input.source = read_png(req.source_path, 3);
                    if (req.face_render_path) {
                        input.face_render = read_png(*req.face_render_path, 3);
                        input.face_source = read_png(*req.face_source_path, 3);
                    }
                    input.prompt = req.prompt;
                    const EditOutput result = editor.edit(input);
                    resp.edited_path = edited_name(req.render_path);
                    write_png(*resp.edited_path, result.edited);
                    if (result.face_edited) {
                        resp.face_edited_path = edited_name(*req.face_render_path);
                        write_png(*resp.face_edited_path, *result.face_edited);
                    }
                } else {
                    const Eigen::VectorXd e = editor.embed(read_png(req.render_path, 3));
                    resp.embedding = std::vector<double>(e.data(), e.data() + e.size());
                }
            }
        } catch (const std::exception& e) {
            resp = EditResponse{};
            try {
                resp.id = parse_request(line).id;
            } catch (const std::exception&) {
                resp.id = -1;
            }
            resp.error = e.what();
        }
        out << to_line(resp) << '\n';
        out.flush();
    }
}

} // namespace ngf
