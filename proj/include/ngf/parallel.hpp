#pragma once

#include <cstddef>
#include <functional>

namespace ngf {

/// Caps worker threads for all parallel loops; 0 restores the default.
/// A cap of 1 gives the single-thread deterministic mode.
void set_max_threads(int n);
int max_threads();

/// Runs body(begin, end) over disjoint chunks covering [0, n). Callers must
/// not depend on chunk boundaries for their results.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

} // namespace ngf
