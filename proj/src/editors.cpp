#include "ngf/editors.hpp"

#include "ngf/errors.hpp"
#include "ngf/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ngf {

Eigen::VectorXd Editor::embed(const ImageU8&) { throw ProtocolError("editor does not support the embed verb"); }

EditOutput ImageFilterEditor::edit(const EditInput& in) {
    EditOutput out;
    out.edited = apply(in.render);
    if (in.face_render) out.face_edited = apply(*in.face_render);
    return out;
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

} // namespace

Eigen::Matrix3d LutEditor::sepia() {
    Eigen::Matrix3d m;
    m << 0.393, 0.769, 0.189, 0.349, 0.686, 0.168, 0.272, 0.534, 0.131;
    return m;
}

ImageU8 LutEditor::apply(const ImageU8& img) const {
    if (img.channels != 3) throw InvalidParameter("lut editor expects RGB");
    ImageU8 out(3, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const Eigen::Vector3d rgb(img.at(y, x, 0) / 255.0, img.at(y, x, 1) / 255.0, img.at(y, x, 2) / 255.0);
            const Eigen::Vector3d o = m_ * rgb + offset_;
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = to_byte(o[c]);
        }
    return out;
}

PosterizeEditor::PosterizeEditor(int levels, int block) : levels_(levels), block_(block) {
    if (levels < 2) throw InvalidParameter("posterize needs levels >= 2");
    if (block < 1) throw InvalidParameter("posterize needs block >= 1");
}

ImageU8 PosterizeEditor::apply(const ImageU8& img) const {
    ImageU8 out(img.channels, img.height, img.width);
    for (int by = 0; by < img.height; by += block_)
        for (int bx = 0; bx < img.width; bx += block_) {
            const int y1 = std::min(img.height, by + block_), x1 = std::min(img.width, bx + block_);
            for (int c = 0; c < img.channels; ++c) {
                double sum = 0;
                for (int y = by; y < y1; ++y)
                    for (int x = bx; x < x1; ++x) sum += img.at(y, x, c);
                const double mean = sum / ((y1 - by) * (x1 - bx)) / 255.0;
                const double q = std::round(mean * (levels_ - 1)) / (levels_ - 1);
                const std::uint8_t v = to_byte(q);
                for (int y = by; y < y1; ++y)
                    for (int x = bx; x < x1; ++x) out.at(y, x, c) = v;
            }
        }
    return out;
}

RelightGainEditor::RelightGainEditor(const Eigen::Vector2d& direction, double strength)
    : dir_(direction), strength_(strength) {
    if (!(direction.norm() > 0)) throw InvalidParameter("relight_gain needs a non-zero direction");
    dir_.normalize();
}

ImageU8 RelightGainEditor::apply(const ImageU8& img) const {
    ImageU8 out(img.channels, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double px = img.width > 1 ? 2.0 * x / (img.width - 1) - 1.0 : 0.0;
            const double py = img.height > 1 ? 2.0 * y / (img.height - 1) - 1.0 : 0.0;
            const double gain = 1.0 + strength_ * (dir_.x() * px + dir_.y() * py);
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = to_byte(img.at(y, x, c) / 255.0 * gain);
        }
    return out;
}

ConstantEditor::ConstantEditor(ImageU8 target) : target_(std::move(target)) {
    if (target_.channels != 3) throw InvalidParameter("constant editor target must be RGB");
}

ImageU8 ConstantEditor::apply(const ImageU8& img) const { return resize_u8(target_, img.width, img.height); }

ImageU8 resize_u8(const ImageU8& img, int width, int height) {
    if (img.width == width && img.height == height) return img;
    auto pick = [](int in, int out) { return out < in ? area_resample(in, out) : bilinear_resample(in, out); };
    Image<double> planar(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) planar.at(c, y, x) = img.at(y, x, c);
    const Image<double> r = resample(planar, pick(img.height, height), pick(img.width, width));
    ImageU8 out(img.channels, height, width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(r.at(c, y, x), 0.0, 255.0)));
    return out;
}

namespace {

std::vector<double> numbers(const std::string& args, const std::string& spec) {
    std::vector<double> out;
    std::stringstream ss(args);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw InvalidParameter("editor '" + spec + "': '" + tok + "' is not a number");
        }
    }
    return out;
}

} // namespace

std::unique_ptr<ImageFilterEditor> make_builtin_editor(const std::string& spec) {
    const auto colon = spec.find(':');
    const std::string name = spec.substr(0, colon);
    const std::string args = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (name == "identity") return std::make_unique<IdentityEditor>();
    if (name == "lut") {
        if (args == "sepia" || args.empty()) return std::make_unique<LutEditor>(LutEditor::sepia(), Eigen::Vector3d::Zero());
        const auto v = numbers(args, spec);
        if (v.size() != 9 && v.size() != 12) throw InvalidParameter("lut expects 9 matrix entries and optionally 3 offsets");
        Eigen::Matrix3d m;
        for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = v[i];
        Eigen::Vector3d o = Eigen::Vector3d::Zero();
        if (v.size() == 12) o << v[9], v[10], v[11];
        return std::make_unique<LutEditor>(m, o);
    }
    if (name == "posterize") {
        const auto v = numbers(args, spec);
        if (v.size() != 2 || v[0] != std::floor(v[0]) || v[1] != std::floor(v[1])) {
            throw InvalidParameter("posterize expects integer levels,block");
        }
        return std::make_unique<PosterizeEditor>(int(v[0]), int(v[1]));
    }
    if (name == "relight_gain") {
        const auto v = numbers(args, spec);
        if (v.size() != 3) throw InvalidParameter("relight_gain expects dx,dy,strength");
        return std::make_unique<RelightGainEditor>(Eigen::Vector2d(v[0], v[1]), v[2]);
    }
    if (name == "constant") {
        if (args.empty()) throw InvalidParameter("constant expects an image path");
        return std::make_unique<ConstantEditor>(read_png(args, 3));
    }
    throw InvalidParameter("unknown builtin editor '" + name + "'");
}

} // namespace ngf
