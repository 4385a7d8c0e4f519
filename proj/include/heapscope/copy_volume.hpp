/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_COPY_VOLUME_HPP
#define HEAPSCOPE_COPY_VOLUME_HPP

#include <cstdint>
#include <map>
#include <optional>

#include "heapscope/core_model.hpp"
#include "heapscope/rate_sampler.hpp"

namespace heapscope {

struct CopyStats {
    // Estimated bytes (samples x rate) per callsite.
    std::map<Callsite, std::uint64_t> sampled_copy_bytes;
    Nanos window_start = 0;
    Nanos window_end = 0;
};

/// MB/s (MB = 2^20) for one callsite over the stats window. Throws
/// std::invalid_argument for a zero-length window.
double copy_mbps(const CopyStats& stats, const Callsite& callsite);

/// Rate-sampled bulk-copy volume per callsite. Copies never touch the
/// allocation footprint counters.
class CopyVolumeTracker {
public:
    CopyVolumeTracker(std::uint64_t copy_rate_bytes, std::optional<std::uint64_t> seed);
    explicit CopyVolumeTracker(const ProfilerConfig& config);

    /// Feeds n copied bytes. When the sampler fires k times, returns one copy
    /// record crediting k x rate bytes to the callsite. footprint/peak are
    /// echoed into the record for the sample file.
    std::optional<SampleRecord> record_copy(std::uint64_t n, const Callsite& callsite, Nanos timestamp,
                                            std::uint64_t footprint = 0, std::uint64_t peak = 0);

    // Sets the reporting window explicitly, overriding the observed one.
    void set_window(Nanos start, Nanos end);

    const CopyStats& stats() const { return stats_; }
    std::uint64_t rate() const { return sampler_.rate(); }
    std::uint64_t samples_emitted() const { return sampler_.samples_emitted(); }
    std::uint64_t bytes_seen() const { return bytes_seen_; }
    RateSampler& sampler() { return sampler_; }

private:
    RateSampler sampler_;
    CopyStats stats_;
    bool window_open_ = false;
    std::uint64_t bytes_seen_ = 0;
};

}  // namespace heapscope

#endif  // HEAPSCOPE_COPY_VOLUME_HPP
