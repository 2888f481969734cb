#include "xprompt/threading.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace xp {

int resolve_threads(int n) {
    if (n > 0) {
        return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(size_t count, int threads, const std::function<void(size_t)>& fn) {
    const int workers = resolve_threads(threads);
    if (count == 0) {
        return;
    }
    if (workers <= 1 || count == 1) {
        for (size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }

    std::atomic<size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto run = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= count) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) {
                    err = std::current_exception();
                }
                next.store(count);
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    const int spawn = static_cast<int>(std::min<size_t>(static_cast<size_t>(workers), count)) - 1;
    pool.reserve(static_cast<size_t>(spawn));
    for (int t = 0; t < spawn; ++t) {
        pool.emplace_back(run);
    }
    run();
    for (auto& th : pool) {
        th.join();
    }
    if (err) {
        std::rethrow_exception(err);
    }
}

}  // namespace xp
