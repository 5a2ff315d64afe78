#pragma once

#include "ngf/field.hpp"
#include "ngf/renderer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace ngf {

/// Everything learned for one subject.
struct Model {
    NeuralGaussianField<float> field;
    Vertices<float> delta;          // posed-space displacement, V x 3
    RendererWeights<float> renderer;
    std::string rig_hash;           // SHA-256 of the rig document
    std::string config_json;        // configuration echo
    std::int64_t step{0};
};

/// Writes the binary "NGF1" checkpoint described in docs/checkpoint-format.md.
/// The bytes depend only on the model contents.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
std::string serialize_checkpoint(const Model& model);

/// Throws ValidationError naming the file on a bad magic, truncation or checksum mismatch.
Model load_checkpoint(const std::filesystem::path& path);
Model deserialize_checkpoint(const std::string& bytes, const std::string& origin);

} // namespace ngf
