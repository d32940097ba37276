#pragma once

#include <cstddef>
#include <functional>

namespace d2c {

/// Worker cap: D2C_THREADS if set to a positive integer, else the number of
/// logical cores.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) on up to `workers` threads. Work is handed
/// out dynamically, so body must not depend on which thread runs it. The
/// first exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, std::size_t workers = worker_count());

}  // namespace d2c
