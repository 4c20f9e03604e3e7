#ifndef BICLSTM_RNG_HPP
#define BICLSTM_RNG_HPP

#include <cmath>
#include <cstdint>

#include "biclstm/errors.hpp"
#include "biclstm/tensor.hpp"

namespace biclstm {

// Counter-based pseudo-random generator. The state is a single 64-bit counter
// advanced by a fixed odd increment; each output is a bijective 64-bit mix of
// the counter (the SplitMix64 finalizer, written out below so the stream is
// reproducible from the seed on any platform):
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   output = z ^ (z >> 31)
//
// Uniform doubles take the top 53 bits: (output >> 11) * 2^-53, giving [0,1).
// derive(tag) spawns an independent child stream without advancing the parent:
// child seed = mix(state + (tag+1) * 0xD1B54A32D192ED03).
//
// Each Rng instance is single-owner; never share one across threads.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    // Uniform in [0,1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) {
        if (!(lo < hi))
            throw argument_error("uniform: lo must be < hi, got lo=" + std::to_string(lo) +
                                 " hi=" + std::to_string(hi));
        return lo + next_double() * (hi - lo);
    }

    // Index in [0,n). Plain modulo; the bias is negligible for the n used here
    // and keeps the stream portable.
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    // Standard normal via Box-Muller on two uniforms; the second value of each
    // pair is cached. Bit-portability depends on the platform's log/cos/sin.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - next_double(); // (0,1]
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    Rng derive(std::uint64_t tag) const { return Rng(mix(state_ + (tag + 1) * 0xD1B54A32D192ED03ull)); }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline Tensor rng_uniform(Rng& rng, Shape shape, double lo, double hi) {
    if (!(lo < hi))
        throw argument_error("rng_uniform: lo must be < hi, got lo=" + std::to_string(lo) +
                             " hi=" + std::to_string(hi));
    Tensor out(std::move(shape));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lo + rng.next_double() * (hi - lo);
    return out;
}

inline Tensor rng_gaussian(Rng& rng, Shape shape, double mean = 0.0, double stddev = 1.0) {
    Tensor out(std::move(shape));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean + stddev * rng.gaussian();
    return out;
}

} // namespace biclstm

#endif
