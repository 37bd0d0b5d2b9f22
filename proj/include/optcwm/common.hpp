#pragma once

#include <cstdint>
#include <cstddef>
#include <cmath>
#include <string>
#include <stdexcept>
#include <vector>
#include <thread>
#include <functional>

#include <Eigen/Core>

namespace optcwm {

using Scalar = double;
// Row-major throughout: token sequences are (rows = tokens, cols = features).
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct PixelLoc {
    Scalar row = 0;
    Scalar col = 0;
};

struct FlowVec {
    Scalar drow = 0;
    Scalar dcol = 0;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. We avoid std:: distributions so that sampled values are
// identical across standard-library versions, which keeps the bit-identical
// re-run contract honest.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x8af3b1d2c44e9d01ull) {
        // warm up so nearby seeds decorrelate
        splitmix64(state_);
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    Scalar uniform() {
        return static_cast<Scalar>(next_u64() >> 11) * 0x1.0p-53;
    }

    Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(uniform() * static_cast<Scalar>(n));
    }

    // inclusive integer range
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + uniform_int(hi - lo + 1);
    }

    Scalar normal() {
        // Box-Muller; consumes two uniforms, second value discarded for simplicity
        Scalar u1 = uniform();
        Scalar u2 = uniform();
        u1 = std::max(u1, Scalar(1e-300));
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // k distinct indices from [0, n), sampled without replacement (partial Fisher-Yates)
    std::vector<int> sample_without_replacement(int n, int k);

private:
    std::uint64_t state_;
};

// Named substream: decorrelates RNG uses of the same global seed.
std::uint64_t stream_seed(std::uint64_t global_seed, const std::string& purpose, std::uint64_t index = 0);

// ---------------------------------------------------------------------------
// Content hashing (FNV-1a 64) for provenance manifests and frozen-model checks.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_hex(std::uint64_t h);
std::uint64_t hash_mat(const Mat& m, std::uint64_t h = 0xcbf29ce484222325ull);
std::uint64_t hash_file(const std::string& path);

// ---------------------------------------------------------------------------
// Deterministic parallel map: results land in index order, so any reduction
// over them is independent of thread timing.
// ---------------------------------------------------------------------------

int default_job_count();
void set_default_job_count(int jobs);

void parallel_for(int n, const std::function<void(int)>& body, int jobs = 0);

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace optcwm
