#include "ngf/checkpoint.hpp"

#include "ngf/errors.hpp"
#include "ngf/hash.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ngf {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t fnv64(const char* p, size_t n) {
    std::uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(p[i]);
        h *= 1099511628211ull;
    }
    return h;
}

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_ += s;
    }
    void raw(const char* p, size_t n) { out_.append(p, n); }
    std::string& bytes() { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    Reader(const std::string& bytes, std::string origin) : b_(bytes), origin_(std::move(origin)) {}
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void need(size_t n) const {
        if (pos_ + n > b_.size()) throw ValidationError(origin_ + ": truncated checkpoint");
    }
    size_t pos() const { return pos_; }

private:
    const std::string& b_;
    std::string origin_;
    size_t pos_{0};
};

} // namespace

std::string serialize_checkpoint(const Model& m) {
    const auto& f = m.field;
    const int n = f.num_active(), K = f.num_features;
    Writer w;
    w.raw("NGF1", 4);
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(f.resolution));
    w.u32(static_cast<std::uint32_t>(K));
    w.u32(static_cast<std::uint32_t>(n));
    w.u32(static_cast<std::uint32_t>(m.delta.rows()));
    w.u32(static_cast<std::uint32_t>(m.renderer.hidden));
    w.u64(static_cast<std::uint64_t>(m.step));
    w.str(m.rig_hash);
    w.str(m.config_json);
    for (int i = 0; i < n; ++i) {
        w.i32(f.texel[i]);
        w.i32(f.surface[i].face);
        for (int k = 0; k < 3; ++k) w.f64(f.surface[i].bary[k]);
    }
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k) w.f32(f.features(i, k));
    for (int i = 0; i < n; ++i) w.f32(f.opacity_logit[i]);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) w.f32(f.log_scale(i, k));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 4; ++k) w.f32(f.rotation(i, k));
    for (Eigen::Index v = 0; v < m.delta.rows(); ++v)
        for (int k = 0; k < 3; ++k) w.f32(m.delta(v, k));
    w.u32(static_cast<std::uint32_t>(m.renderer.num_features));
    w.u64(m.renderer.params.size());
    for (float p : m.renderer.params) w.f32(p);
    const std::uint64_t check = fnv64(w.bytes().data(), w.bytes().size());
    w.u64(check);
    return std::move(w.bytes());
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    const std::string bytes = serialize_checkpoint(model);
    // Write then rename so a crash never leaves a half-written checkpoint.
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(path.string() + ": cannot open for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(path.string() + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

Model deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 12 || bytes.compare(0, 4, "NGF1") != 0) {
        throw ValidationError(origin + ": not an NGF1 checkpoint (bad magic)");
    }
    const size_t body = bytes.size() - 8;
    {
        std::uint64_t stored = 0;
        for (int i = 0; i < 8; ++i) stored |= std::uint64_t(static_cast<unsigned char>(bytes[body + i])) << (8 * i);
        if (stored != fnv64(bytes.data(), body)) throw ValidationError(origin + ": checksum mismatch");
    }
    Reader r(bytes, origin);
    r.need(4);
    r.u32(); // magic
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw ValidationError(origin + ": unsupported checkpoint version " + std::to_string(version));
    }
    Model m;
    auto& f = m.field;
    f.resolution = static_cast<int>(r.u32());
    f.num_features = static_cast<int>(r.u32());
    const int n = static_cast<int>(r.u32());
    const int V = static_cast<int>(r.u32());
    const int hidden = static_cast<int>(r.u32());
    m.step = static_cast<std::int64_t>(r.u64());
    m.rig_hash = r.str();
    m.config_json = r.str();
    const size_t expected = static_cast<size_t>(n) * (8 + 24 + 4 * (f.num_features + 1 + 3 + 4)) + size_t(V) * 12;
    r.need(expected);
    f.texel.resize(n);
    f.surface.resize(n);
    for (int i = 0; i < n; ++i) {
        f.texel[i] = r.i32();
        f.surface[i].face = r.i32();
        for (int k = 0; k < 3; ++k) f.surface[i].bary[k] = r.f64();
    }
    f.features.resize(n, f.num_features);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < f.num_features; ++k) f.features(i, k) = r.f32();
    f.opacity_logit.resize(n);
    for (int i = 0; i < n; ++i) f.opacity_logit[i] = r.f32();
    f.log_scale.resize(n, 3);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) f.log_scale(i, k) = r.f32();
    f.rotation.resize(n, 4);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 4; ++k) f.rotation(i, k) = r.f32();
    m.delta.resize(V, 3);
    for (int v = 0; v < V; ++v)
        for (int k = 0; k < 3; ++k) m.delta(v, k) = r.f32();
    m.renderer.num_features = static_cast<int>(r.u32());
    m.renderer.hidden = hidden;
    const std::uint64_t count = r.u64();
    if (count != RendererWeights<float>::param_count(m.renderer.num_features, hidden)) {
        throw ValidationError(origin + ": renderer parameter count does not match its shape");
    }
    r.need(count * 4);
    m.renderer.params.resize(count);
    for (auto& p : m.renderer.params) p = r.f32();
    if (r.pos() != body) throw ValidationError(origin + ": trailing bytes in checkpoint");
    return m;
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(path.string() + ": cannot open checkpoint");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes, path.string());
}

} // namespace ngf
