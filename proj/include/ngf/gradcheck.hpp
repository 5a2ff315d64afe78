#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ngf {

struct GradcheckOptions {
    std::uint64_t seed{0};
    int probes{100};       // per class
    double h{1e-3};
    bool single_precision{true}; // also check 32-bit gradients against 64-bit differences
    std::string filter;    // only classes whose name contains this
};

struct GradcheckClass {
    std::string name;
    int probes{0}, resampled{0};
    double max_rel_err{0}, tolerance{0};
    std::string worst; // description of the worst probe
    bool passed{false};
};

struct GradcheckReport {
    std::vector<GradcheckClass> classes;
    double seconds{0};
    bool passed() const;
    std::string to_json() const;
};

/// Finite-difference checks of every hand-written backward pass: covariance
/// and projection, rasterizer (position, rotation, scale, opacity, features),
/// decoder, each loss term and the full frame chain down to the rig
/// parameters. Probes that straddle a non-smooth point are redrawn.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

/// (-f(2h) + 8 f(h) - 8 f(-h) + f(-2h)) / 12h.
double five_point_difference(const std::function<double(double)>& f, double h);

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

} // namespace ngf
