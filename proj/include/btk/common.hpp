#pragma once

#include <cstdint>
#include <cstdlib>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace btk {

// Error hierarchy. Every throwing path in the library uses one of these so
// callers (and the CLI) can map failures to categories.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};
struct ValueError : Error {
    explicit ValueError(const std::string& msg) : Error(msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class A, class... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
    os << a;
    format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string format(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    return os.str();
}

template <class E = ShapeError, class... Args>
void check(bool cond, const Args&... args) {
    if (!cond) throw E(format(args...));
}

// Worker cap for sample-partitioned parallelism. BTK_THREADS overrides the
// hardware default; 1 forces fully serial kernels. Outputs are written to
// disjoint slots and partial reductions run in fixed order, so results are
// bit-identical across runs for a fixed thread count.
inline int64_t worker_threads() {
    static const int64_t n = [] {
        if (const char* env = std::getenv("BTK_THREADS"))
            return std::max<int64_t>(1, std::strtoll(env, nullptr, 10));
        unsigned hc = std::thread::hardware_concurrency();
        return int64_t(hc == 0 ? 1 : std::min(hc, 8u));
    }();
    return n;
}

// Runs fn(begin, end, chunk_index) over [0, n) split into contiguous chunks,
// one per worker. fn must only write chunk-local or index-disjoint data.
template <class Fn>
void parallel_chunks(int64_t n, Fn&& fn) {
    int64_t threads = std::min<int64_t>(worker_threads(), n);
    if (threads <= 1) {
        if (n > 0) fn(int64_t(0), n, int64_t(0));
        return;
    }
    int64_t per = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    for (int64_t t = 1; t < threads; ++t) {
        int64_t b = t * per, e = std::min(n, b + per);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e, t]() { fn(b, e, t); });
    }
    fn(int64_t(0), std::min(per, n), int64_t(0));
    for (auto& th : pool) th.join();
}

inline int64_t parallel_chunk_count(int64_t n) {
    int64_t threads = std::min<int64_t>(worker_threads(), n);
    if (threads <= 1) return 1;
    int64_t per = (n + threads - 1) / threads;
    return (n + per - 1) / per;
}

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Deterministic RNG. Wraps mt19937_64 with our own uniform/normal transforms
// so streams are bit-identical across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {
        // splitmix64 warmup to decorrelate small seeds
        for (int i = 0; i < 4; ++i) next_u64();
    }

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int64_t uniform_int(int64_t n) { return int64_t(next_u64() % uint64_t(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal via Box-Muller with cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace btk
