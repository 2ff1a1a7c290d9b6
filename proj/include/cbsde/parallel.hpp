#pragma once

#include <algorithm>
#include <mutex>
#include <thread>
#include <vector>

namespace cbsde {

/// Process-wide worker cap for parallel loops. Defaults to 1 (serial).
inline int& max_threads() {
    static int n = 1;
    return n;
}

inline void set_max_threads(int n) { max_threads() = std::max(1, n); }

/// Chunked parallel loop over [0, count). The chunk layout is fixed (64
/// chunks) regardless of the worker count, so any per-chunk reduction
/// combined in chunk order is bitwise independent of the thread count.
/// The body must only write to slots it owns.
template <class Fn>
void parallel_for(std::size_t count, Fn&& body) {
    const int workers = std::min<int>(max_threads(), 8);
    if (count == 0) return;
    if (workers <= 1) {
        body(std::size_t{0}, count);
        return;
    }
    constexpr std::size_t kChunks = 64;
    const std::size_t chunk = (count + kChunks - 1) / kChunks;
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex err_mu;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t c = static_cast<std::size_t>(w); c * chunk < count;
                 c += static_cast<std::size_t>(workers)) {
                const std::size_t lo = c * chunk;
                const std::size_t hi = std::min(count, lo + chunk);
                try {
                    body(lo, hi);
                } catch (...) {
                    std::lock_guard<std::mutex> g(err_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace cbsde
