#pragma once

#include <cstdint>

namespace mct {

// Kernel thread count; 1 selects the single-threaded reference path. Every
// kernel assigns each output element to exactly one thread and reduces in a
// fixed order, so results do not depend on this setting.
void set_thread_count(int threads);
int thread_count();

template <class F>
void parallel_for(std::int64_t n, F&& body) {
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (thread_count() > 1)
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

// SplitMix64 step, used to derive independent per-item RNG seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace mct
