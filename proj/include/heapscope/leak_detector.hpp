/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_LEAK_DETECTOR_HPP
#define HEAPSCOPE_LEAK_DETECTOR_HPP

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "heapscope/core_model.hpp"

namespace heapscope {

/// Tracking episodes started (mallocs) and tracked objects reclaimed (frees)
/// for one callsite.
struct LeakScore {
    std::uint64_t mallocs = 0;
    std::uint64_t frees = 0;

    friend bool operator==(const LeakScore&, const LeakScore&) = default;
};

enum class SuccessionRule {
    // 1 - (frees + 1) / (mallocs - frees + 2), clamped to [0, 1]. Default.
    as_printed,
    // Textbook Laplace estimator: 1 - (frees + 1) / (mallocs + 2).
    standard,
};

inline constexpr double kLeakProbabilityThreshold = 0.95;
inline constexpr double kMinimumGrowthSlope = 0.01;

double leak_probability(const LeakScore& score, SuccessionRule rule = SuccessionRule::as_printed);

struct TrackedAllocation {
    AllocId alloc_id = 0;
    Callsite callsite;
    Nanos tracked_since = 0;
    bool reclaimed = false;
};

struct LeakReportEntry {
    Callsite callsite;
    double probability = 0.0;
    double leak_rate = 0.0;  // MB/s
    LeakScore score;
};

/// Follows one sampled allocation at a time between high-water-mark
/// crossings and keeps per-callsite leak scores.
///
/// on_free() may run concurrently with readers; on_growth_sample() must be
/// serialized with sample emission (single writer).
class LeakDetector {
public:
    LeakDetector() = default;
    LeakDetector(const LeakDetector&) = delete;
    LeakDetector& operator=(const LeakDetector&) = delete;

    /// Returns true when the sample set a new high-water mark (state changed).
    bool on_growth_sample(const SampleRecord& sample);

    // One identity comparison; nothing else on the untracked path.
    void on_free(AllocId id) noexcept {
        free_checks_.store(free_checks_.load(std::memory_order_relaxed) + 1, std::memory_order_relaxed);
        if (id == tracked_id_.load(std::memory_order_relaxed)) {
            reclaimed_.store(true, std::memory_order_relaxed);
        }
    }

    const std::map<Callsite, LeakScore>& scores() const { return scores_; }
    std::optional<TrackedAllocation> tracked() const;
    std::uint64_t high_water_mark() const { return high_water_mark_; }
    std::uint64_t tracking_episodes() const { return episodes_; }
    // Instrumentation: on_free() calls observed. Exact when callers are serialized.
    std::uint64_t free_checks() const { return free_checks_.load(std::memory_order_relaxed); }

private:
    static constexpr AllocId kNothingTracked = ~AllocId{0};

    std::map<Callsite, LeakScore> scores_;
    std::atomic<AllocId> tracked_id_{kNothingTracked};
    std::atomic<bool> reclaimed_{false};
    std::optional<Callsite> tracked_callsite_;
    Nanos tracked_since_ = 0;
    std::uint64_t high_water_mark_ = 0;
    std::uint64_t episodes_ = 0;
    std::atomic<std::uint64_t> free_checks_{0};
};

/// Relative growth (last - first) / max(first, 1) over the window.
/// Throws std::domain_error for fewer than two points.
double growth_slope(std::span<const FootprintPoint> trend);

/// MB/s, with MB = 2^20 bytes. Throws std::invalid_argument for elapsed <= 0.
double leak_rate(std::uint64_t bytes_allocated, double elapsed_seconds);

/// High-confidence leaks ordered by leak rate, fastest first. Empty unless
/// the trend grew by at least 1% (a trend with fewer than two points never
/// qualifies).
std::vector<LeakReportEntry> filter_leak_reports(const std::map<Callsite, LeakScore>& scores,
                                                 std::span<const FootprintPoint> trend,
                                                 const std::map<Callsite, double>& rates,
                                                 SuccessionRule rule = SuccessionRule::as_printed);

}  // namespace heapscope

#endif  // HEAPSCOPE_LEAK_DETECTOR_HPP
