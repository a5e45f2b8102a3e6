#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace mbcr {

/// Worker cap: MBCR_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_threads();

/// Runs body(0..n-1) on up to worker_threads() threads. Each index runs
/// exactly once; the first exception (by index) is rethrown after all finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Independent seed for sub-stream `stream` of `base` (splitmix64 mix).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace mbcr
