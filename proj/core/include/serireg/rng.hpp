// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace serireg {

/// Name recorded in distortion records so data sets are self-describing.
inline constexpr const char* kRngAlgorithm = "philox4x32-10";

/// Counter-based random substream (Philox 4x32, 10 rounds).
///
/// A stream is fully identified by (seed, stream, purpose): the 64-bit seed
/// becomes the Philox key, the stream index and a 32-bit hash of the purpose
/// string occupy the top counter words, and the draw index occupies the low
/// words. Draw i is therefore a pure function of the identifying triple, so
/// any slice/purpose combination can be sampled independently of evaluation
/// order and thread count.
class SubstreamRng {
public:
    SubstreamRng(std::uint64_t seed, std::uint64_t stream, std::string_view purpose)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_lo_(static_cast<std::uint32_t>(stream)),
          stream_hi_(static_cast<std::uint32_t>(stream >> 32) ^ fnv1a32(purpose)) {}

    std::uint32_t next_u32() {
        if (buffer_pos_ == 4) {
            buffer_ = block(block_index_++);
            buffer_pos_ = 0;
        }
        return buffer_[buffer_pos_++];
    }

    /// Uniform double in [0, 1).
    double next_unit() {
        return static_cast<double>(next_u32()) * 0x1p-32;
    }

    /// Standard normal via Box-Muller; second value of each pair is cached.
    double next_normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        // u1 in (0, 1] keeps the log finite.
        const double u1 = (static_cast<double>(next_u32()) + 1.0) * 0x1p-32;
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    static std::uint32_t fnv1a32(std::string_view s) {
        std::uint32_t h = 0x811c9dc5u;
        for (const char c : s) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 0x01000193u;
        }
        return h;
    }

private:
    std::array<std::uint32_t, 4> block(std::uint64_t index) const {
        std::array<std::uint32_t, 4> ctr{
            static_cast<std::uint32_t>(index),
            static_cast<std::uint32_t>(index >> 32),
            stream_lo_,
            stream_hi_,
        };
        std::uint32_t k0 = key_[0];
        std::uint32_t k1 = key_[1];
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(0xD2511F53u) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(0xCD9E8D57u) * ctr[2];
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        return ctr;
    }

    std::array<std::uint32_t, 2> key_;
    std::uint32_t stream_lo_;
    std::uint32_t stream_hi_;
    std::uint64_t block_index_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int buffer_pos_ = 4;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

} // namespace serireg
