/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_RATE_SAMPLER_HPP
#define HEAPSCOPE_RATE_SAMPLER_HPP

#include <cstdint>
#include <optional>
#include <random>

namespace heapscope {

/// Classical per-byte Bernoulli sampler implemented as a countdown.
///
/// With a seed the countdown is drawn geometric(1/rate) on [1, inf), so each
/// byte is independently sampled with probability 1/rate. Without a seed the
/// countdown is always reset to exactly `rate`; that mode exists for
/// reproducible tests and is not a uniform sampler.
class RateSampler {
public:
    // Throws std::invalid_argument for rate == 0.
    RateSampler(std::uint64_t rate, std::optional<std::uint64_t> seed);

    /// Decrements the countdown by n and returns how many samples fired.
    std::uint64_t record_bytes(std::uint64_t n);

    std::uint64_t rate() const { return rate_; }
    std::int64_t countdown() const { return countdown_; }
    std::uint64_t samples_emitted() const { return emitted_; }
    bool deterministic() const { return !seeded_; }

private:
    std::int64_t draw();

    std::uint64_t rate_;
    bool seeded_;
    std::mt19937_64 rng_;
    std::geometric_distribution<std::int64_t> gap_;
    std::int64_t countdown_ = 0;
    std::uint64_t emitted_ = 0;
};

}  // namespace heapscope

#endif  // HEAPSCOPE_RATE_SAMPLER_HPP
