#include "maskdm/rng.hpp"

#include <sstream>

#include "maskdm/errors.hpp"

namespace maskdm {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
}

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

double Rng::normal() { return normal_(engine_); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::string Rng::state() const {
    std::ostringstream out;
    out << engine_ << ' ' << normal_;
    return out.str();
}

void Rng::set_state(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::mt19937_64 engine;
    std::normal_distribution<double> normal;
    in >> engine >> normal;
    if (!in) {
        throw FormatError("malformed rng state");
    }
    engine_ = engine;
    normal_ = normal;
}

bool Rng::operator==(const Rng& other) const {
    return engine_ == other.engine_ && normal_ == other.normal_;
}

}  // namespace maskdm
