/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/copy_volume.hpp"

#include <stdexcept>

namespace heapscope {

double copy_mbps(const CopyStats& stats, const Callsite& callsite) {
    if (stats.window_end <= stats.window_start) {
        throw std::invalid_argument("copy volume window has zero duration");
    }
    auto it = stats.sampled_copy_bytes.find(callsite);
    if (it == stats.sampled_copy_bytes.end()) {
        return 0.0;
    }
    const double seconds = static_cast<double>(stats.window_end - stats.window_start) / 1e9;
    return static_cast<double>(it->second) / static_cast<double>(1 << 20) / seconds;
}

CopyVolumeTracker::CopyVolumeTracker(std::uint64_t copy_rate_bytes, std::optional<std::uint64_t> seed)
    : sampler_(copy_rate_bytes, seed) {}

CopyVolumeTracker::CopyVolumeTracker(const ProfilerConfig& config)
    : CopyVolumeTracker(config.copy_rate_bytes(), config.deterministic_rng_seed) {}

std::optional<SampleRecord> CopyVolumeTracker::record_copy(std::uint64_t n, const Callsite& callsite,
                                                           Nanos timestamp, std::uint64_t footprint,
                                                           std::uint64_t peak) {
    if (!window_open_) {
        stats_.window_start = timestamp;
        stats_.window_end = timestamp;
        window_open_ = true;
    } else if (timestamp > stats_.window_end) {
        stats_.window_end = timestamp;
    }
    bytes_seen_ += n;
    const std::uint64_t fired = sampler_.record_bytes(n);
    if (fired == 0) {
        return std::nullopt;
    }
    const std::uint64_t credited = fired * sampler_.rate();
    stats_.sampled_copy_bytes[callsite] += credited;

    SampleRecord record;
    record.kind = SampleKind::copy;
    record.timestamp = timestamp;
    record.net_delta = static_cast<std::int64_t>(credited);
    record.footprint = footprint;
    record.peak_footprint = peak < footprint ? footprint : peak;
    record.managed_fraction = 0.0;
    record.callsite = callsite;
    return record;
}

void CopyVolumeTracker::set_window(Nanos start, Nanos end) {
    stats_.window_start = start;
    stats_.window_end = end;
    window_open_ = true;
}

}  // namespace heapscope
