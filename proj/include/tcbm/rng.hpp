#pragma once

#include <cmath>
#include <cstdint>

namespace tcbm {

// Counter-based pseudo-random stream: the k-th draw is a pure function of
// (key, k), so substreams derived per path / per batch element are
// independent and a stream can be replayed from its seed alone.
//
// The word function is the splitmix64 output finalizer applied to
// key + k * golden_gamma; normals come from Box-Muller on two uniforms.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : key_(finalize(seed ^ 0x5851f42d4c957f2dULL)) {}

    // Independent stream derived from (this stream's key, stream id).
    Rng substream(std::uint64_t stream) const {
        Rng r(0);
        r.key_ = finalize(key_ ^ finalize(stream + 0x9e3779b97f4a7c15ULL));
        r.counter_ = 0;
        r.has_spare_ = false;
        return r;
    }

    std::uint64_t next_u64() { return finalize(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL); }

    // Uniform on the open interval (0, 1).
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

   private:
    static std::uint64_t finalize(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace tcbm
