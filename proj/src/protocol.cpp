#include "ngf/protocol.hpp"

#include "ngf/errors.hpp"

#include <json.hpp>

#include <set>

namespace ngf {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& line, const std::string& why) {
    throw ProtocolError("malformed message (" + why + "): " + line);
}

json parse_object(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception&) {
        bad(line, "not valid JSON");
    }
    if (!j.is_object()) bad(line, "expected an object");
    if (!j.contains("v") || !j["v"].is_number_integer()) bad(line, "missing version");
    if (j["v"].get<int>() != kProtocolVersion) bad(line, "unsupported protocol version");
    return j;
}

void only_keys(const json& j, const std::set<std::string>& allowed, const std::string& line) {
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) bad(line, "unexpected field '" + k + "'");
}

std::string string_field(const json& j, const char* key, const std::string& line) {
    if (!j.contains(key) || !j[key].is_string()) bad(line, std::string("missing string field '") + key + "'");
    return j[key].get<std::string>();
}

} // namespace

std::string to_line(const EditRequest& r) {
    json j;
    j["v"] = kProtocolVersion;
    j["verb"] = r.verb;
    if (r.verb != "handshake") {
        j["id"] = r.id;
        j["render_path"] = r.render_path;
        if (!r.source_path.empty()) j["source_path"] = r.source_path;
        if (r.face_render_path) j["face_render_path"] = *r.face_render_path;
        if (r.face_source_path) j["face_source_path"] = *r.face_source_path;
        j["prompt"] = r.prompt;
    }
    return j.dump(-1, ' ', false, json::error_handler_t::strict);
}

std::string to_line(const EditResponse& r) {
    json j;
    j["v"] = kProtocolVersion;
    if (r.id) j["id"] = *r.id;
    if (r.capabilities) j["capabilities"] = *r.capabilities;
    if (r.edited_path) j["edited_path"] = *r.edited_path;
    if (r.face_edited_path) j["face_edited_path"] = *r.face_edited_path;
    if (r.embedding) j["embedding"] = *r.embedding;
    if (r.error) j["error"] = *r.error;
    return j.dump(-1, ' ', false, json::error_handler_t::strict);
}

EditRequest parse_request(const std::string& line) {
    const json j = parse_object(line);
    EditRequest r;
    r.verb = string_field(j, "verb", line);
    if (r.verb == "handshake") {
        only_keys(j, {"v", "verb"}, line);
        return r;
    }
    if (r.verb != "edit" && r.verb != "embed") bad(line, "unknown verb '" + r.verb + "'");
    only_keys(j, {"v", "verb", "id", "render_path", "source_path", "face_render_path", "face_source_path", "prompt"},
              line);
    if (!j.contains("id") || !j["id"].is_number_integer()) bad(line, "missing integer id");
    r.id = j["id"].get<std::int64_t>();
    r.render_path = string_field(j, "render_path", line);
    if (j.contains("source_path")) r.source_path = string_field(j, "source_path", line);
    if (r.verb == "edit" && r.source_path.empty()) bad(line, "edit requests need source_path");
    if (j.contains("face_render_path")) r.face_render_path = string_field(j, "face_render_path", line);
    if (j.contains("face_source_path")) r.face_source_path = string_field(j, "face_source_path", line);
    if (r.face_render_path.has_value() != r.face_source_path.has_value()) {
        bad(line, "face_render_path and face_source_path must be sent together");
    }
    r.prompt = j.contains("prompt") ? string_field(j, "prompt", line) : std::string();
    return r;
}

EditResponse parse_response(const std::string& line) {
    const json j = parse_object(line);
    only_keys(j, {"v", "id", "capabilities", "edited_path", "face_edited_path", "embedding", "error"}, line);
    EditResponse r;
    if (j.contains("id")) {
        if (!j["id"].is_number_integer()) bad(line, "id must be an integer");
        r.id = j["id"].get<std::int64_t>();
    }
    int payloads = 0;
    if (j.contains("capabilities")) {
        ++payloads;
        if (!j["capabilities"].is_array()) bad(line, "capabilities must be an array");
        std::vector<std::string> caps;
        for (const auto& c : j["capabilities"]) {
            if (!c.is_string()) bad(line, "capabilities must be strings");
            caps.push_back(c.get<std::string>());
        }
        r.capabilities = std::move(caps);
    }
    if (j.contains("edited_path")) {
        ++payloads;
        r.edited_path = string_field(j, "edited_path", line);
    }
    if (j.contains("face_edited_path")) {
        if (!r.edited_path) bad(line, "face_edited_path without edited_path");
        r.face_edited_path = string_field(j, "face_edited_path", line);
    }
    if (j.contains("embedding")) {
        ++payloads;
        if (!j["embedding"].is_array()) bad(line, "embedding must be an array");
        std::vector<double> e;
        for (const auto& x : j["embedding"]) {
            if (!x.is_number()) bad(line, "embedding must be numeric");
            e.push_back(x.get<double>());
        }
        r.embedding = std::move(e);
    }
    if (j.contains("error")) {
        ++payloads;
        r.error = string_field(j, "error", line);
    }
    if (payloads != 1) bad(line, "expected exactly one of capabilities, edited_path, embedding, error");
    if (!r.capabilities && !r.id) bad(line, "missing id");
    return r;
}

} // namespace ngf
