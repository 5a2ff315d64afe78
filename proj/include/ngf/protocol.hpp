#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ngf {

inline constexpr int kProtocolVersion = 1;

/// One host-to-plugin message. Handshakes carry only the version and verb.
struct EditRequest {
    std::string verb; // "handshake" | "edit" | "embed"
    std::int64_t id{0};
    std::string render_path, source_path;
    std::optional<std::string> face_render_path, face_source_path;
    std::string prompt;

    bool operator==(const EditRequest&) const = default;
};

/// One plugin-to-host message. Exactly one payload kind is set: capabilities
/// (handshake reply), edited_path, embedding or error.
struct EditResponse {
    std::optional<std::int64_t> id;
    std::optional<std::vector<std::string>> capabilities;
    std::optional<std::string> edited_path, face_edited_path;
    std::optional<std::vector<double>> embedding;
    std::optional<std::string> error;

    bool operator==(const EditResponse&) const = default;
};

/// Serialize to one line (no trailing newline) with keys in a fixed order.
std::string to_line(const EditRequest& req);
std::string to_line(const EditResponse& resp);

/// Throw ProtocolError quoting the offending line on any framing or schema problem.
EditRequest parse_request(const std::string& line);
EditResponse parse_response(const std::string& line);

} // namespace ngf
