#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dpbnn {

// One run seed fans out into independent named substreams so that e.g.
// batch sampling never perturbs the noise sequence.
inline std::uint64_t derive_stream_seed(std::uint64_t seed, std::string_view name) {
    // FNV-1a over the stream name, then splitmix64 finalizer.
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    std::uint64_t z = seed ^ h;
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Counting wrapper over mt19937_64. The draw counter lets tests verify that
// non-DP runs never touch the noise substream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double normal() {
        ++draws_;
        std::normal_distribution<double> d(0.0, 1.0);
        return d(gen_);
    }

    double uniform() {
        ++draws_;
        std::uniform_real_distribution<double> d(0.0, 1.0);
        return d(gen_);
    }

    double uniform(double lo, double hi) {
        ++draws_;
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen_);
    }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        ++draws_;
        std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
        return d(gen_);
    }

    bool bernoulli(double p) {
        ++draws_;
        std::bernoulli_distribution d(p);
        return d(gen_);
    }

    std::uint64_t draws() const { return draws_; }

private:
    std::mt19937_64 gen_;
    std::uint64_t draws_ = 0;
};

// The named substreams every training run uses.
struct RunStreams {
    Rng init;
    Rng batch;
    Rng noise;
    Rng mask;
    Rng bbp_eps;

    explicit RunStreams(std::uint64_t seed)
        : init(derive_stream_seed(seed, "init")),
          batch(derive_stream_seed(seed, "batch")),
          noise(derive_stream_seed(seed, "noise")),
          mask(derive_stream_seed(seed, "mask")),
          bbp_eps(derive_stream_seed(seed, "bbp-eps")) {}
};

}  // namespace dpbnn
