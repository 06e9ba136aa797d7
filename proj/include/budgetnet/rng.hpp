#pragma once

#include <cmath>
#include <cstdint>

namespace bnet {

// Counter-tracked splitmix64 stream.
//
// Every consumer of randomness in the library draws from one of these. The
// full generator state is (seed, draws): the internal state after n draws is
// seed + n * GAMMA (mod 2^64), so a stream can be checkpointed as two 64-bit
// integers and resumed exactly. Integer draws and uniform() are bit-identical
// across platforms; normal() additionally involves libm's log/sin/cos, which
// are correctly rounded to within 1 ulp on the toolchains we target.
class RngStream {
  public:
    explicit RngStream(uint64_t seed = 0) : seed_(seed), state_(seed), draws_(0) {}

    uint64_t seed() const { return seed_; }
    uint64_t draws() const { return draws_; }

    // Restore to "stream with this seed after this many draws".
    void set_state(uint64_t seed, uint64_t draws) {
        seed_ = seed;
        state_ = seed + draws * kGamma;
        draws_ = draws;
    }

    // splitmix64 (Steele, Lea, Flood 2014). One draw.
    uint64_t next_u64() {
        state_ += kGamma;
        ++draws_;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits. One draw.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). One draw. Uses the multiply-high reduction;
    // the residual bias is below 2^-59 for every n we ever pass.
    uint32_t uniform_int(uint32_t n) {
        return static_cast<uint32_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller. Exactly two draws.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * kPi * u2);
    }

  private:
    static constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    static constexpr double kPi = 3.14159265358979323846;

    uint64_t seed_;
    uint64_t state_;
    uint64_t draws_;
};

}  // namespace bnet
