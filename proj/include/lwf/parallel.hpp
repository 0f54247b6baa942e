#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace lwf {

// Static index partitioning: results land in caller-owned per-index slots,
// so aggregation order (and therefore output) is independent of the thread
// count. body(i) must only touch slot i.
inline void parallel_for(long begin, long end, int threads,
                         const std::function<void(long)>& body) {
    const long count = end - begin;
    if (count <= 0) return;
    if (threads < 1) threads = 1;
    if (threads == 1 || count == 1) {
        for (long i = begin; i < end; ++i) body(i);
        return;
    }
    const int workers = int(std::min<long>(threads, count));
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mu;
    pool.reserve(size_t(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (long i = begin + w; i < end; i += workers) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace lwf
