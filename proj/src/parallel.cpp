#include "ngf/parallel.hpp"

#include <tbb/blocked_range.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>

#include <memory>
#include <mutex>

namespace ngf {

namespace {
std::mutex g_mutex;
std::unique_ptr<tbb::global_control> g_control;
} // namespace

void set_max_threads(int n) {
    std::lock_guard lock(g_mutex);
    g_control.reset();
    if (n > 0) {
        g_control = std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism,
                                                          static_cast<std::size_t>(n));
    }
}

int max_threads() {
    return static_cast<int>(tbb::global_control::active_value(tbb::global_control::max_allowed_parallelism));
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    if (max_threads() <= 1) {
        body(0, n);
        return;
    }
    tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n),
                      [&](const tbb::blocked_range<std::size_t>& r) { body(r.begin(), r.end()); });
}

} // namespace ngf
