#include "mqn/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mqn {

int thread_count()
{
    if (const char* env = std::getenv("MQN_THREADS")) {
        int n = std::atoi(env);
        return n <= 0 ? 1 : n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::int64_t count, const std::function<void(std::int64_t, std::int64_t)>& body)
{
    if (count <= 0)
        return;
    const std::int64_t workers = std::min<std::int64_t>(thread_count(), count);
    if (workers <= 1) {
        body(0, count);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    const std::int64_t chunk = (count + workers - 1) / workers;
    for (std::int64_t w = 1; w < workers; ++w) {
        std::int64_t b = w * chunk, e = std::min(count, b + chunk);
        if (b < e)
            pool.emplace_back([&body, b, e] { body(b, e); });
    }
    body(0, std::min(count, chunk));
}

} // namespace mqn
