/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/rate_sampler.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace heapscope {

namespace {

std::uint64_t validated_rate(std::uint64_t rate) {
    if (rate == 0) {
        throw std::invalid_argument("sampling rate must be >= 1");
    }
    if (rate > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max() / 2)) {
        throw std::invalid_argument("sampling rate too large");
    }
    return rate;
}

}  // namespace

RateSampler::RateSampler(std::uint64_t rate, std::optional<std::uint64_t> seed)
    : rate_(validated_rate(rate)),
      seeded_(seed.has_value()),
      rng_(seed.value_or(0)),
      gap_(1.0 / static_cast<double>(rate_)) {
    countdown_ = draw();
}

// Byte index (1-based) of the next sampled byte.
std::int64_t RateSampler::draw() {
    if (!seeded_) {
        return static_cast<std::int64_t>(rate_);
    }
    return gap_(rng_) + 1;
}

std::uint64_t RateSampler::record_bytes(std::uint64_t n) {
    if (n == 0) {
        return 0;
    }
    std::uint64_t fired = 0;
    while (n > 0) {
        // Feed in chunks so the signed countdown cannot overflow.
        const std::uint64_t chunk = std::min<std::uint64_t>(n, std::numeric_limits<std::int64_t>::max() / 2);
        n -= chunk;
        countdown_ -= static_cast<std::int64_t>(chunk);
        if (countdown_ > 0) {
            continue;
        }
        if (!seeded_) {
            const auto step = static_cast<std::int64_t>(rate_);
            const std::int64_t k = (-countdown_) / step + 1;
            countdown_ += k * step;
            fired += static_cast<std::uint64_t>(k);
        } else {
            while (countdown_ <= 0) {
                countdown_ += draw();
                ++fired;
            }
        }
    }
    emitted_ += fired;
    return fired;
}

}  // namespace heapscope
