#include "optcwm/common.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>

namespace optcwm {

std::vector<int> Rng::sample_without_replacement(int n, int k) {
    if (k > n) throw ConfigError("sample_without_replacement: k > n");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out(k);
    for (int i = 0; i < k; ++i) {
        int j = i + static_cast<int>(uniform_int(n - i));
        std::swap(pool[i], pool[j]);
        out[i] = pool[i];
    }
    return out;
}

std::uint64_t stream_seed(std::uint64_t global_seed, const std::string& purpose, std::uint64_t index) {
    std::uint64_t h = fnv1a(purpose.data(), purpose.size());
    std::uint64_t s = global_seed ^ (h * 0x9e3779b97f4a7c15ull);
    s ^= index * 0xd1b54a32d192ed03ull + 0x2545f4914f6cdd1dull;
    splitmix64(s);
    return s;
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::uint64_t hash_mat(const Mat& m, std::uint64_t h) {
    std::int64_t dims[2] = {m.rows(), m.cols()};
    h = fnv1a(dims, sizeof(dims), h);
    return fnv1a(m.data(), sizeof(Scalar) * static_cast<std::size_t>(m.size()), h);
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("hash_file: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    return h;
}

namespace {
std::atomic<int> g_jobs{0};
}

int default_job_count() {
    int j = g_jobs.load();
    if (j > 0) return j;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_default_job_count(int jobs) { g_jobs.store(jobs); }

void parallel_for(int n, const std::function<void(int)>& body, int jobs) {
    if (jobs <= 0) jobs = default_job_count();
    jobs = std::min(jobs, n);
    if (jobs <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(jobs));
    std::vector<std::exception_ptr> errs(static_cast<std::size_t>(jobs));
    for (int t = 0; t < jobs; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (;;) {
                    int i = next.fetch_add(1);
                    if (i >= n) break;
                    body(i);
                }
            } catch (...) {
                errs[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

}  // namespace optcwm
