/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_THRESHOLD_SAMPLER_HPP
#define HEAPSCOPE_THRESHOLD_SAMPLER_HPP

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "heapscope/core_model.hpp"

namespace heapscope {

/// Smallest prime >= base. Requires base >= 2.
std::uint64_t choose_sampling_threshold(std::uint64_t base);

/// Result of one threshold crossing, before attribution is attached.
struct ThresholdCrossing {
    SampleKind kind = SampleKind::growth;
    std::int64_t net_delta = 0;
    std::uint64_t footprint = 0;
    std::uint64_t peak_footprint = 0;
    double managed_fraction = 0.0;
};

/// Footprint-driven sampler: emits when |allocated - freed| since the last
/// emission reaches the threshold, then resets both counters.
///
/// Single-owner. Callers that share one instance across threads must
/// serialize record()/apply(); see ShimRuntime.
class ThresholdSampler {
public:
    explicit ThresholdSampler(std::uint64_t threshold);

    /// Applies an alloc or free and returns the sample it triggers, if any.
    /// Appends a trend point on every emission. Throws std::invalid_argument
    /// for copy events.
    std::optional<SampleRecord> record(const AllocEvent& event);

    /// Counter update without attribution or trend bookkeeping. The hot path
    /// of the live shim; callsite and timestamp are resolved only on crossing.
    std::optional<ThresholdCrossing> apply(EventKind kind, std::uint64_t size, DomainTag domain);

    const std::vector<FootprintPoint>& trend_series() const { return trend_; }

    std::uint64_t threshold() const { return threshold_; }
    std::uint64_t allocated_since_reset() const { return allocated_; }
    std::uint64_t freed_since_reset() const { return freed_; }
    std::uint64_t managed_bytes_since_reset() const { return managed_; }
    std::uint64_t footprint() const { return footprint_; }
    std::uint64_t peak_footprint() const { return peak_; }
    std::uint64_t samples_emitted() const { return emitted_; }
    // Frees larger than the tracked footprint; only possible on invalid streams.
    std::uint64_t underflows() const { return underflows_; }

private:
    std::uint64_t threshold_;
    std::uint64_t allocated_ = 0;
    std::uint64_t freed_ = 0;
    std::uint64_t managed_ = 0;
    std::uint64_t footprint_ = 0;
    std::uint64_t peak_ = 0;
    std::uint64_t emitted_ = 0;
    std::uint64_t underflows_ = 0;
    std::vector<FootprintPoint> trend_;
};

inline std::optional<ThresholdCrossing> ThresholdSampler::apply(EventKind kind, std::uint64_t size, DomainTag domain) {
    if (kind == EventKind::alloc) {
        allocated_ += size;
        if (domain == DomainTag::managed) {
            managed_ += size;
        }
        footprint_ += size;
        peak_ = std::max(peak_, footprint_);
    } else if (kind == EventKind::free) {
        freed_ += size;
        if (size > footprint_) {
            ++underflows_;
            footprint_ = 0;
        } else {
            footprint_ -= size;
        }
    } else {
        throw std::invalid_argument("threshold sampler does not accept copy events");
    }

    const std::int64_t net = static_cast<std::int64_t>(allocated_) - static_cast<std::int64_t>(freed_);
    const std::uint64_t magnitude = net < 0 ? static_cast<std::uint64_t>(-net) : static_cast<std::uint64_t>(net);
    if (magnitude < threshold_) {
        return std::nullopt;
    }

    ThresholdCrossing crossing;
    crossing.kind = net > 0 ? SampleKind::growth : SampleKind::decline;
    crossing.net_delta = net;
    crossing.footprint = footprint_;
    crossing.peak_footprint = peak_;
    crossing.managed_fraction =
        static_cast<double>(managed_) / static_cast<double>(std::max<std::uint64_t>(allocated_, 1));
    allocated_ = 0;
    freed_ = 0;
    managed_ = 0;
    ++emitted_;
    return crossing;
}

}  // namespace heapscope

#endif  // HEAPSCOPE_THRESHOLD_SAMPLER_HPP
