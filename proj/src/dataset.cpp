#include "ngf/dataset.hpp"

#include "ngf/errors.hpp"
#include "ngf/hash.hpp"
#include "ngf/png_io.hpp"

#include <json.hpp>

#include <cstdio>
#include <regex>
#include <set>

namespace ngf {

using nlohmann::json;
namespace fs = std::filesystem;

std::string frame_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05d.png", index);
    return buf;
}

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) { throw ValidationError(where + ": " + what); }

double number(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
}

const json& member(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) fail(path + "." + key, "missing");
    return obj.at(key);
}

const json& array(const json& v, const std::string& path) {
    if (!v.is_array()) fail(path, "expected an array");
    return v;
}

Eigen::VectorXd vector_of(const json& v, const std::string& path) {
    array(v, path);
    Eigen::VectorXd out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = number(v[i], path + "[" + std::to_string(i) + "]");
    return out;
}

// Indices of NNNNN.png files in a directory; must be exactly 0..n-1.
int count_frames(const fs::path& dir, const std::string& name) {
    if (!fs::is_directory(dir)) fail(name + "/", "directory missing");
    static const std::regex pattern("^([0-9]{5})\\.png$");
    std::set<int> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string file = entry.path().filename().string();
        if (std::regex_match(file, m, pattern)) found.insert(std::stoi(m[1].str()));
    }
    int expected = 0;
    for (int idx : found) {
        if (idx != expected) fail(name + "/" + frame_name(expected), "missing (indices must be contiguous from 0)");
        ++expected;
    }
    return static_cast<int>(found.size());
}

} // namespace

Dataset load_dataset(const fs::path& dir, const Rig* rig, bool load_images) {
    if (!fs::is_directory(dir)) throw ValidationError(dir.string() + ": dataset directory does not exist");
    Dataset ds;
    ds.root = dir;
    const fs::path params_path = dir / "params.json";
    if (!fs::exists(params_path)) fail("params.json", "missing");
    json doc;
    try {
        doc = json::parse(read_text_file(params_path));
    } catch (const json::exception& e) {
        fail("params.json", std::string("not a valid structured document (") + e.what() + ")");
    }
    try {
        const json& schema = member(doc, "schema", "$");
        if (!schema.is_string() || schema.get<std::string>() != "ngf-ds/1") fail("$.schema", "expected \"ngf-ds/1\"");
        const json& cam = member(doc, "camera", "$");
        ds.intrinsics.fx = number(member(cam, "fx", "$.camera"), "$.camera.fx");
        ds.intrinsics.fy = number(member(cam, "fy", "$.camera"), "$.camera.fy");
        ds.intrinsics.cx = number(member(cam, "cx", "$.camera"), "$.camera.cx");
        ds.intrinsics.cy = number(member(cam, "cy", "$.camera"), "$.camera.cy");
        const json& w = member(cam, "width", "$.camera");
        const json& h = member(cam, "height", "$.camera");
        if (!w.is_number_integer() || !h.is_number_integer()) fail("$.camera", "width/height must be integers");
        ds.intrinsics.width = w.get<int>();
        ds.intrinsics.height = h.get<int>();
        try {
            ds.intrinsics.validate();
        } catch (const InvalidParameter& e) {
            fail("$.camera", e.what());
        }
        const json& rigref = member(doc, "rig", "$");
        const json& rp = member(rigref, "path", "$.rig");
        const json& rh = member(rigref, "sha256", "$.rig");
        if (!rp.is_string() || !rh.is_string()) fail("$.rig", "path and sha256 must be strings");
        ds.rig_path = rp.get<std::string>();
        ds.rig_sha256 = rh.get<std::string>();

        const json& frames = array(member(doc, "frames", "$"), "$.frames");
        for (size_t i = 0; i < frames.size(); ++i) {
            const std::string p = "$.frames[" + std::to_string(i) + "]";
            const json& fr = frames[i];
            FrameRecord rec;
            const Eigen::VectorXd pose = vector_of(member(fr, "pose", p), p + ".pose");
            if (pose.size() != 16) fail(p + ".pose", "expected 16 numbers (4x4 row-major)");
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) rec.pose(r, c) = pose[4 * r + c];
            Camera probe = ds.intrinsics;
            probe.world_to_camera = rec.pose;
            try {
                probe.validate();
            } catch (const InvalidParameter& e) {
                fail(p + ".pose", e.what());
            }
            rec.params.beta = vector_of(member(fr, "beta", p), p + ".beta");
            rec.params.psi = vector_of(member(fr, "psi", p), p + ".psi");
            const Eigen::VectorXd theta = vector_of(member(fr, "theta", p), p + ".theta");
            if (theta.size() % 3 != 0) fail(p + ".theta", "length must be a multiple of 3");
            rec.params.theta = Eigen::Map<const Vertices<double>>(theta.data(), theta.size() / 3, 3);
            const Eigen::VectorXd box = vector_of(member(fr, "face_bbox", p), p + ".face_bbox");
            if (box.size() != 4) fail(p + ".face_bbox", "expected [x, y, w, h]");
            for (int k = 0; k < 4; ++k)
                if (box[k] != std::floor(box[k])) fail(p + ".face_bbox", "expected integer pixels");
            rec.face_box = {int(box[0]), int(box[1]), int(box[2]), int(box[3])};
            if (!rec.face_box.inside(ds.intrinsics.width, ds.intrinsics.height)) {
                fail(p + ".face_bbox", "box lies outside the frame");
            }
            if (rig) {
                try {
                    rec.params.validate(*rig);
                } catch (const Error& e) {
                    fail(p, e.what());
                }
            }
            ds.frames.push_back(std::move(rec));
        }
    } catch (const ValidationError& e) {
        throw ValidationError((dir / "params.json").string() + ": " + e.what());
    }
    if (ds.frames.empty()) fail((dir / "params.json").string(), "dataset has no frames");

    if (!load_images) return ds;
    const int n = ds.size();
    const char* dirs[3] = {"frames", "masks", "head_torso"};
    std::vector<ImageU8>* stores[3] = {&ds.images, &ds.masks, &ds.head_torso};
    for (int d = 0; d < 3; ++d) {
        const int found = count_frames(dir / dirs[d], dirs[d]);
        for (int i = 0; i < n; ++i) {
            const fs::path file = dir / dirs[d] / frame_name(i);
            if (!fs::exists(file)) fail(std::string(dirs[d]) + "/" + frame_name(i), "missing");
        }
        if (found != n) {
            fail(std::string(dirs[d]) + "/",
                 "count mismatch: " + std::to_string(found) + " images for " + std::to_string(n) + " parameter frames");
        }
        for (int i = 0; i < n; ++i) {
            const std::string rel = std::string(dirs[d]) + "/" + frame_name(i);
            ImageU8 img = read_png(dir / rel, d == 0 ? 3 : 1);
            if (img.width != ds.intrinsics.width || img.height != ds.intrinsics.height) {
                fail(rel, "resolution " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                              " differs from the declared " + std::to_string(ds.intrinsics.width) + "x" +
                              std::to_string(ds.intrinsics.height));
            }
            stores[d]->push_back(std::move(img));
        }
    }
    return ds;
}

std::string dataset_params_json(const Dataset& ds) {
    json doc;
    doc["schema"] = "ngf-ds/1";
    doc["camera"] = {{"fx", ds.intrinsics.fx}, {"fy", ds.intrinsics.fy}, {"cx", ds.intrinsics.cx},
                     {"cy", ds.intrinsics.cy}, {"width", ds.intrinsics.width}, {"height", ds.intrinsics.height}};
    doc["rig"] = {{"path", ds.rig_path}, {"sha256", ds.rig_sha256}};
    json frames = json::array();
    for (const auto& f : ds.frames) {
        json fr;
        std::vector<double> pose(16);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) pose[4 * r + c] = f.pose(r, c);
        fr["pose"] = pose;
        fr["beta"] = std::vector<double>(f.params.beta.data(), f.params.beta.data() + f.params.beta.size());
        fr["theta"] = std::vector<double>(f.params.theta.data(), f.params.theta.data() + f.params.theta.size());
        fr["psi"] = std::vector<double>(f.params.psi.data(), f.params.psi.data() + f.params.psi.size());
        fr["face_bbox"] = {f.face_box.x, f.face_box.y, f.face_box.w, f.face_box.h};
        frames.push_back(std::move(fr));
    }
    doc["frames"] = std::move(frames);
    return doc.dump(1);
}

} // namespace ngf
