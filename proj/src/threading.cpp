#include "pyrdiff/threading.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace pyrdiff {

namespace {
std::atomic<int> g_thread_override{0};

int probe_default() {
    if (const char* env = std::getenv("PYRDIFF_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}
}  // namespace

int thread_count() {
    int o = g_thread_override.load();
    if (o > 0) return o;
    static const int def = probe_default();
    return def;
}

void set_thread_count(int n) { g_thread_override.store(n < 0 ? 0 : n); }

void parallel_chunks(int n, const std::function<void(int, int)>& fn) {
    if (n <= 0) return;
    int workers = std::min(thread_count(), n);
    if (workers <= 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    int base = n / workers, rem = n % workers;
    int begin = 0;
    std::vector<std::pair<int, int>> ranges;
    for (int w = 0; w < workers; ++w) {
        int len = base + (w < rem ? 1 : 0);
        ranges.emplace_back(begin, begin + len);
        begin += len;
    }
    for (int w = 1; w < workers; ++w)
        threads.emplace_back([&fn, r = ranges[w]] { fn(r.first, r.second); });
    fn(ranges[0].first, ranges[0].second);
    for (auto& t : threads) t.join();
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    parallel_chunks(n, [&fn](int b, int e) {
        for (int i = b; i < e; ++i) fn(i);
    });
}

}  // namespace pyrdiff
