#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace muse {

// Bounded worker pool over an index range. Each index owns its output slot
// and (where relevant) its own RNG stream, so results do not depend on the
// thread count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, unsigned max_threads = 0) {
    if (n == 0) return;
    unsigned hw = max_threads > 0 ? max_threads : std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(hw, n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace muse
