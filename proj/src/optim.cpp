#include "ngf/optim.hpp"

#include "ngf/errors.hpp"

#include <cmath>

namespace ngf {

template <typename T> void Adam::step(T* params, const T* grad, std::size_t n) {
    if (n != m_.size()) throw ConfigError("Adam: parameter count changed");
    ++t_;
    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const double c1 = 1.0 - std::pow(b1, double(t_)), c2 = 1.0 - std::pow(b2, double(t_));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grad[i];
        m_[i] = b1 * m_[i] + (1.0 - b1) * g;
        v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
        const double mh = m_[i] / c1, vh = v_[i] / c2;
        params[i] = T(double(params[i]) - settings_.lr * mh / (std::sqrt(vh) + settings_.eps));
    }
}

void Adam::restore(std::int64_t t, std::vector<double> m, std::vector<double> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw ConfigError("Adam: restored state has wrong size");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

template void Adam::step(float*, const float*, std::size_t);
template void Adam::step(double*, const double*, std::size_t);

} // namespace ngf
