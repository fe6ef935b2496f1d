#ifndef RGBADIT_COMMON_HPP
#define RGBADIT_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace rgbadit {

// Error taxonomy. Everything derives from std::runtime_error so callers can
// catch broadly; the subtypes matter for tests of specific contracts.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void log_warn(const std::string& msg);
void log_info(const std::string& msg);

// Deterministic RNG. mt19937_64 plus hand-rolled uniform/normal transforms so
// that streams do not depend on libstdc++ distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    // standard normal via Box-Muller, pair cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        double r  = std::sqrt(-2.0 * std::log(u1));
        double a  = 6.283185307179586476925286766559 * u2;
        spare_      = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // derived stream, decorrelated by a splitmix-style hash
    Rng fork(uint64_t stream) {
        uint64_t z = next_u64() + 0x9e3779b97f4a7c15ull * (stream + 1);
        z          = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z          = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return Rng(z ^ (z >> 31));
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_    = 0.0;
};

// Row-parallel work dispatch. Splits [0, n) into contiguous chunks, one per
// thread; each chunk writes disjoint outputs so results are bitwise identical
// to a sequential run for any thread count.
class ThreadPool {
public:
    static ThreadPool& instance();

    // fn(begin, end) over a contiguous range
    void parallel_ranges(int n, const std::function<void(int, int)>& fn);

    int threads() const { return threads_; }
    static void set_threads(int n);  // call before first use

private:
    explicit ThreadPool(int threads);
    ~ThreadPool();
    ThreadPool(const ThreadPool&)            = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    struct Impl;
    Impl* impl_;
    int threads_;
};

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace rgbadit

#endif  // RGBADIT_COMMON_HPP
