#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mhetd {

/// Name of the pinned generator. Configs carry this string so a result file
/// can be tied to the exact stream that produced it.
inline constexpr std::string_view kRngName = "mt19937_64";

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed for run `run` (and sub-stream `stream`) of an experiment.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t run,
                                    std::uint64_t stream = 0) noexcept {
    return mix64(mix64(master ^ mix64(run)) + stream);
}

/// Seeded random source with platform-independent variate transforms.
///
/// std::mt19937_64 output is fixed by the standard, but the standard
/// distributions are not, so uniforms/normals/t-variates are built here from
/// raw 64-bit words.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept {
        // 53 random mantissa bits, offset by half an ulp to exclude 0.
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via the Marsaglia polar method.
    double normal() noexcept;

    /// Standard Student-t with `nu` degrees of freedom (Bailey's polar method).
    double student_t(double nu) noexcept;

    std::uint64_t next_u64() noexcept { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mhetd
