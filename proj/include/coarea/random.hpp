#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11) and a
// stream wrapper producing uniform and normal variates.

#include <array>
#include <cstdint>

namespace coarea {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// One block of the Philox4x32 bijection with 10 rounds.
PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key);

inline constexpr const char* kGeneratorName = "philox4x32-10";

/// Independent stream keyed by (seed, stream_id): the key is the seed and
/// the upper counter words hold the stream id, so streams never overlap.
class PhiloxStream {
public:
    PhiloxStream(std::uint64_t seed, std::uint64_t stream_id = 0);

    std::uint32_t next_u32();
    std::uint64_t next_u64();
    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform();
    /// Standard normal by the Marsaglia polar method.
    double normal();

private:
    PhiloxKey key_;
    PhiloxCounter ctr_;
    PhiloxCounter block_{};
    unsigned used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace coarea
