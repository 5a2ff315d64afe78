#include "ngf/config.hpp"

#include "ngf/errors.hpp"
#include "ngf/hash.hpp"

#include <json.hpp>

#include <cmath>
#include <set>

namespace ngf {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key + ": " + what);
}

class Reader {
public:
    Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        require(obj_.is_object(), path_.empty() ? "config" : path_, "expected an object");
    }
    ~Reader() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (const auto& [k, v] : obj_.items()) {
            if (!seen_.count(k)) throw ConfigError(key(k) + ": unknown key");
        }
    }

    std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
    const json* get(const std::string& k) {
        seen_.insert(k);
        auto it = obj_.find(k);
        return it == obj_.end() ? nullptr : &*it;
    }

    void number(const std::string& k, double& out, double lo, double hi, bool open_lo = false) {
        if (const json* v = get(k)) {
            require(v->is_number(), key(k), "expected a number");
            const double d = v->get<double>();
            require(std::isfinite(d) && (open_lo ? d > lo : d >= lo) && d <= hi, key(k), "value out of range");
            out = d;
        }
    }
    template <typename I> void integer(const std::string& k, I& out, std::int64_t lo, std::int64_t hi) {
        if (const json* v = get(k)) {
            require(v->is_number_integer(), key(k), "expected an integer");
            const std::int64_t i = v->get<std::int64_t>();
            require(i >= lo && i <= hi, key(k), "value out of range");
            out = static_cast<I>(i);
        }
    }
    void boolean(const std::string& k, bool& out) {
        if (const json* v = get(k)) {
            require(v->is_boolean(), key(k), "expected true or false");
            out = v->get<bool>();
        }
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

constexpr double kHuge = 1e300;

} // namespace

void TrainConfig::validate() const {
    require(iterations >= 0, "iterations", "must be non-negative");
    require(edit_iterations >= 0, "edit_iterations", "must be non-negative");
    for (auto [name, v] : {std::pair{"features", lr.features}, {"opacity", lr.opacity}, {"scale", lr.scale},
                           {"rotation", lr.rotation}, {"delta", lr.delta}, {"renderer", lr.renderer}}) {
        require(std::isfinite(v) && v > 0, std::string("lr.") + name, "must be positive");
    }
    require(beta1 >= 0 && beta1 < 1, "adam.beta1", "must lie in [0, 1)");
    require(beta2 >= 0 && beta2 < 1, "adam.beta2", "must lie in [0, 1)");
    require(eps > 0, "adam.eps", "must be positive");
    require(update_period >= 1, "update_period", "must be at least 1");
    for (int c = 0; c < 3; ++c) require(background[c] >= 0 && background[c] <= 1, "background", "must lie in [0, 1]");
    try {
        weights.validate();
    } catch (const InvalidParameter& e) {
        throw ConfigError(std::string("loss_weights: ") + e.what());
    }
    require(field_resolution >= 2 && field_resolution <= 4096, "field.resolution", "must lie in [2, 4096]");
    require(num_features >= 3, "field.features", "must be at least 3");
    require(renderer_hidden >= 3, "renderer.hidden", "must be at least 3");
    require(std::isfinite(edit_lr_scale) && edit_lr_scale > 0, "edit_lr_scale", "must be positive");
    require(max_displacement >= 0, "max_displacement", "must be non-negative");
    require(preview_every >= 0, "preview_every", "must be non-negative");
    require(face_aware.size >= 8, "face_aware.size", "must be at least 8");
    require(face_aware.blur_radius >= 0, "face_aware.blur_radius", "must be non-negative");
    require(handshake_timeout_s > 0, "plugin.handshake_timeout_s", "must be positive");
    require(request_timeout_s > 0, "plugin.request_timeout_s", "must be positive");
    require(raster.tile_size >= 1, "raster.tile_size", "must be positive");
    require(raster.alpha_clamp > 0 && raster.alpha_clamp < 1, "raster.alpha_clamp", "must lie in (0, 1)");
    require(raster.alpha_min > 0 && raster.alpha_min < raster.alpha_clamp, "raster.alpha_min",
            "must lie in (0, alpha_clamp)");
    require(raster.transmittance_min > 0 && raster.transmittance_min < 1, "raster.transmittance_min",
            "must lie in (0, 1)");
    require(threads >= 0, "threads", "must be non-negative");
}

TrainConfig parse_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    TrainConfig c;
    {
        Reader r(doc, "");
        r.integer("iterations", c.iterations, 0, kNeverUpdate);
        r.integer("edit_iterations", c.edit_iterations, 0, kNeverUpdate);
        if (const json* v = r.get("lr")) {
            Reader lr(*v, "lr");
            lr.number("features", c.lr.features, 0, kHuge, true);
            lr.number("opacity", c.lr.opacity, 0, kHuge, true);
            lr.number("scale", c.lr.scale, 0, kHuge, true);
            lr.number("rotation", c.lr.rotation, 0, kHuge, true);
            lr.number("delta", c.lr.delta, 0, kHuge, true);
            lr.number("renderer", c.lr.renderer, 0, kHuge, true);
        }
        r.number("edit_lr_scale", c.edit_lr_scale, 0, kHuge, true);
        if (const json* v = r.get("adam")) {
            Reader a(*v, "adam");
            a.number("beta1", c.beta1, 0, 0.999999999);
            a.number("beta2", c.beta2, 0, 0.999999999);
            a.number("eps", c.eps, 0, 1, true);
        }
        if (const json* v = r.get("update_period")) {
            if (v->is_string()) {
                require(v->get<std::string>() == "inf", "update_period", "expected a positive integer or \"inf\"");
                c.update_period = kNeverUpdate;
            } else {
                r.integer("update_period", c.update_period, 1, kNeverUpdate);
            }
        }
        r.integer("seed", c.seed, 0, std::numeric_limits<std::int64_t>::max());
        if (const json* v = r.get("background")) {
            require(v->is_array() && v->size() == 3, "background", "expected [r, g, b]");
            for (int i = 0; i < 3; ++i) {
                require((*v)[i].is_number(), "background", "expected numbers");
                c.background[i] = (*v)[i].get<double>();
                require(c.background[i] >= 0 && c.background[i] <= 1, "background", "values must lie in [0, 1]");
            }
        }
        if (const json* v = r.get("loss_weights")) {
            Reader w(*v, "loss_weights");
            w.number("recon", c.weights.recon, 0, kHuge);
            w.number("mask", c.weights.mask, 0, kHuge);
            w.number("perceptual", c.weights.perceptual, 0, kHuge);
            w.number("stable", c.weights.stable, 0, kHuge);
            w.number("expression", c.weights.expression, 0, kHuge);
        }
        if (const json* v = r.get("field")) {
            Reader f(*v, "field");
            f.integer("resolution", c.field_resolution, 2, 4096);
            f.integer("features", c.num_features, 3, 256);
        }
        if (const json* v = r.get("renderer")) {
            Reader f(*v, "renderer");
            f.integer("hidden", c.renderer_hidden, 3, 1024);
            f.boolean("decoder", c.decoder);
        }
        r.number("max_displacement", c.max_displacement, 0, kHuge);
        r.integer("preview_every", c.preview_every, 0, kNeverUpdate);
        if (const json* v = r.get("face_aware")) {
            Reader f(*v, "face_aware");
            f.boolean("enabled", c.face_aware.enabled);
            f.integer("size", c.face_aware.size, 8, 4096);
            f.integer("blur_radius", c.face_aware.blur_radius, 0, 256);
        }
        if (const json* v = r.get("plugin")) {
            Reader p(*v, "plugin");
            p.number("handshake_timeout_s", c.handshake_timeout_s, 0, kHuge, true);
            p.number("request_timeout_s", c.request_timeout_s, 0, kHuge, true);
        }
        if (const json* v = r.get("raster")) {
            Reader s(*v, "raster");
            s.integer("tile_size", c.raster.tile_size, 1, 256);
            s.number("alpha_clamp", c.raster.alpha_clamp, 0, 1, true);
            s.number("alpha_min", c.raster.alpha_min, 0, 1, true);
            s.number("transmittance_min", c.raster.transmittance_min, 0, 1, true);
        }
        r.integer("threads", c.threads, 0, 4096);
    }
    c.validate();
    return c;
}

TrainConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    try {
        return parse_config(text);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string config_to_json(const TrainConfig& c) {
    json j;
    j["iterations"] = c.iterations;
    j["edit_iterations"] = c.edit_iterations;
    j["lr"] = {{"features", c.lr.features}, {"opacity", c.lr.opacity}, {"scale", c.lr.scale},
               {"rotation", c.lr.rotation}, {"delta", c.lr.delta},     {"renderer", c.lr.renderer}};
    j["edit_lr_scale"] = c.edit_lr_scale;
    j["adam"] = {{"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
    if (c.update_period == kNeverUpdate) {
        j["update_period"] = "inf";
    } else {
        j["update_period"] = c.update_period;
    }
    j["seed"] = c.seed;
    j["background"] = {c.background[0], c.background[1], c.background[2]};
    j["loss_weights"] = {{"recon", c.weights.recon},
                         {"mask", c.weights.mask},
                         {"perceptual", c.weights.perceptual},
                         {"stable", c.weights.stable},
                         {"expression", c.weights.expression}};
    j["field"] = {{"resolution", c.field_resolution}, {"features", c.num_features}};
    j["renderer"] = {{"hidden", c.renderer_hidden}, {"decoder", c.decoder}};
    j["max_displacement"] = c.max_displacement;
    j["preview_every"] = c.preview_every;
    j["face_aware"] = {
        {"enabled", c.face_aware.enabled}, {"size", c.face_aware.size}, {"blur_radius", c.face_aware.blur_radius}};
    j["plugin"] = {{"handshake_timeout_s", c.handshake_timeout_s}, {"request_timeout_s", c.request_timeout_s}};
    j["raster"] = {{"tile_size", c.raster.tile_size},
                   {"alpha_clamp", c.raster.alpha_clamp},
                   {"alpha_min", c.raster.alpha_min},
                   {"transmittance_min", c.raster.transmittance_min}};
    j["threads"] = c.threads;
    return j.dump();
}

} // namespace ngf
