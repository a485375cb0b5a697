#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mae {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define MAE_CHECK(cond, msg)                                   \
    do {                                                       \
        if (!(cond)) {                                         \
            std::ostringstream os_;                            \
            os_ << msg;                                        \
            throw std::invalid_argument(os_.str());            \
        }                                                      \
    } while (0)

// Worker cap for element-wise data parallelism. MAE_THREADS=1 forces
// serial execution; results are identical either way because parallel
// regions only write disjoint output elements.
inline unsigned max_threads() {
    static unsigned cached = [] {
        unsigned hw = std::thread::hardware_concurrency();
        if (hw == 0) hw = 1;
        if (const char* env = std::getenv("MAE_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v >= 1 && static_cast<unsigned>(v) < hw) hw = static_cast<unsigned>(v);
        }
        return hw;
    }();
    return cached;
}

inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    unsigned workers = max_threads();
    if (workers <= 1 || n < 2048) {
        body(0, n);
        return;
    }
    if (workers > n) workers = static_cast<unsigned>(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned t = 0; t < workers; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace mae
