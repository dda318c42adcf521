#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace maskdm {

// Seeded random source shared by every stochastic component. All draws go
// through libstdc++ distributions, so a fixed seed reproduces bit-for-bit on
// the same toolchain. The complete state (engine plus the normal
// distribution's cached deviate) can be captured as text for checkpoints.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);
    // Independent stream keyed by (seed, stream), e.g. one per sample index.
    Rng(std::uint64_t seed, std::uint64_t stream);

    double uniform();  // [0, 1)
    double normal();   // N(0, 1)
    // Uniform integer in the closed range [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    bool bernoulli(double p);

    std::mt19937_64& engine() { return engine_; }

    std::string state() const;
    void set_state(std::string_view text);

    bool operator==(const Rng& other) const;

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

}  // namespace maskdm
