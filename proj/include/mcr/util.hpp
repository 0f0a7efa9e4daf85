#pragma once

#include <cstdint>
#include <functional>
#include <random>

namespace mcr {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// seed for item `index` of a batch drawn with `seed`; independent of thread schedule
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}
    // 53-bit uniform in [0, 1), identical across standard libraries
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    template <class Probs>
    int categorical(const Probs& p, int n) {
        double u = uniform();
        double acc = 0.0;
        int last = -1;
        for (int i = 0; i < n; ++i) {
            if (p[i] <= 0.0) continue;
            acc += p[i];
            last = i;
            if (u < acc) return i;
        }
        return last;
    }

private:
    std::mt19937_64 eng_;
};

// 0 means: MCR_LAB_THREADS if set, else hardware concurrency
void set_thread_cap(int n);
int thread_cap();

// runs fn(i) for i in [0, n); fn must only write to slot i
void parallel_for(int n, const std::function<void(int)>& fn);

} // namespace mcr
