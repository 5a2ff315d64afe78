#pragma once

#include "ngf/face_aware.hpp"
#include "ngf/geometry.hpp"
#include "ngf/losses.hpp"
#include "ngf/splatter.hpp"

#include <cstdint>
#include <limits>
#include <string>

namespace ngf {

struct LearningRates {
    double features{1e-2}, opacity{5e-2}, scale{5e-3}, rotation{1e-3}, delta{1e-4}, renderer{1e-3};
};

inline constexpr std::int64_t kNeverUpdate = std::numeric_limits<std::int64_t>::max();

struct TrainConfig {
    std::int64_t iterations{2000};      // reconstruction phase
    std::int64_t edit_iterations{1000}; // edit phase
    LearningRates lr;
    double edit_lr_scale{0.25}; // multiplies every learning rate in the edit phase
    double beta1{0.9}, beta2{0.999}, eps{1e-8};
    std::int64_t update_period{10}; // kNeverUpdate disables dataset updates
    std::uint64_t seed{0};
    Vec3<double> background{1, 1, 1};
    LossWeights weights;
    int field_resolution{64};
    int num_features{8};
    int renderer_hidden{16};
    bool decoder{true};
    double max_displacement{kDefaultMaxDisplacement};
    std::int64_t preview_every{250}; // 0 disables previews
    FaceAwareSettings face_aware;
    double handshake_timeout_s{30}, request_timeout_s{120};
    RasterSettings raster;
    int threads{0}; // 0 = library default

    /// Throws ConfigError naming the offending key.
    void validate() const;
};

/// Parses a configuration document on top of the defaults. Unknown keys and
/// out-of-range values are rejected with ConfigError naming the key path.
/// "update_period" accepts a positive integer or "inf".
TrainConfig parse_config(const std::string& json_text);
TrainConfig load_config(const std::string& path);

/// Canonical document with every key present (sorted, compact).
std::string config_to_json(const TrainConfig& config);

} // namespace ngf
