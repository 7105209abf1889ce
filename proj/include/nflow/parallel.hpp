#ifndef NFLOW_PARALLEL_HPP
#define NFLOW_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace nflow {

/// Resolves a requested worker count; 0 means hardware concurrency.
inline unsigned resolve_threads(unsigned requested) {
    if (requested != 0) {
        return requested;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Splits [0, count) into `workers` contiguous chunks and runs
/// fn(begin, end, worker_index) for each. The first exception thrown by any
/// worker is rethrown after all workers join.
template <typename Fn> void parallel_chunks(std::size_t count, unsigned workers, Fn &&fn) {
    workers = std::max(1u, workers);
    if (workers == 1 || count <= 1) {
        fn(std::size_t{0}, count, 0u);
        return;
    }
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, count));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t begin = count * w / workers;
        const std::size_t end = count * (w + 1) / workers;
        pool.emplace_back([&, begin, end, w] {
            try {
                fn(begin, end, w);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto &t : pool) {
        t.join();
    }
    for (auto &e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace nflow

#endif // NFLOW_PARALLEL_HPP
