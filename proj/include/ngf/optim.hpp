#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace ngf {

struct AdamSettings {
    double lr{1e-3};
    double beta1{0.9}, beta2{0.999}, eps{1e-8};
};

/// Adam over one flat parameter group. Moments are stored in double.
class Adam {
public:
    Adam() = default;
    Adam(std::size_t size, AdamSettings settings) : settings_(settings), m_(size, 0.0), v_(size, 0.0) {}

    template <typename T> void step(T* params, const T* grad, std::size_t n);

    std::size_t size() const { return m_.size(); }
    std::int64_t steps() const { return t_; }
    const AdamSettings& settings() const { return settings_; }
    void set_lr(double lr) { settings_.lr = lr; }
    const std::vector<double>& first_moment() const { return m_; }
    const std::vector<double>& second_moment() const { return v_; }
    void restore(std::int64_t t, std::vector<double> m, std::vector<double> v);

private:
    AdamSettings settings_;
    std::vector<double> m_, v_;
    std::int64_t t_{0};
};

} // namespace ngf
