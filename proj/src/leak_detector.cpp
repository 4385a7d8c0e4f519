/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/leak_detector.hpp"

#include <algorithm>
#include <stdexcept>

namespace heapscope {

double leak_probability(const LeakScore& score, SuccessionRule rule) {
    if (score.frees > score.mallocs) {
        throw std::invalid_argument("leak score has more frees than mallocs");
    }
    const double frees = static_cast<double>(score.frees);
    const double mallocs = static_cast<double>(score.mallocs);
    const double denominator = rule == SuccessionRule::as_printed ? mallocs - frees + 2.0 : mallocs + 2.0;
    const double p = 1.0 - (frees + 1.0) / denominator;
    return std::clamp(p, 0.0, 1.0);
}

bool LeakDetector::on_growth_sample(const SampleRecord& sample) {
    if (sample.kind != SampleKind::growth || sample.footprint <= high_water_mark_) {
        return false;
    }
    high_water_mark_ = sample.footprint;

    if (tracked_callsite_) {
        if (reclaimed_.load(std::memory_order_relaxed)) {
            ++scores_[*tracked_callsite_].frees;
        }
        tracked_callsite_.reset();
        tracked_id_.store(kNothingTracked, std::memory_order_relaxed);
    }

    if (sample.alloc_id) {
        reclaimed_.store(false, std::memory_order_relaxed);
        tracked_callsite_ = sample.callsite;
        tracked_since_ = sample.timestamp;
        ++scores_[sample.callsite].mallocs;
        ++episodes_;
        tracked_id_.store(*sample.alloc_id, std::memory_order_release);
    }
    return true;
}

std::optional<TrackedAllocation> LeakDetector::tracked() const {
    if (!tracked_callsite_) {
        return std::nullopt;
    }
    return TrackedAllocation{tracked_id_.load(std::memory_order_relaxed), *tracked_callsite_, tracked_since_,
                             reclaimed_.load(std::memory_order_relaxed)};
}

double growth_slope(std::span<const FootprintPoint> trend) {
    if (trend.size() < 2) {
        throw std::domain_error("growth slope needs at least two trend points");
    }
    const double first = static_cast<double>(trend.front().footprint);
    const double last = static_cast<double>(trend.back().footprint);
    return (last - first) / std::max(first, 1.0);
}

double leak_rate(std::uint64_t bytes_allocated, double elapsed_seconds) {
    if (!(elapsed_seconds > 0.0)) {
        throw std::invalid_argument("leak rate needs a positive elapsed time");
    }
    return static_cast<double>(bytes_allocated) / static_cast<double>(1 << 20) / elapsed_seconds;
}

std::vector<LeakReportEntry> filter_leak_reports(const std::map<Callsite, LeakScore>& scores,
                                                 std::span<const FootprintPoint> trend,
                                                 const std::map<Callsite, double>& rates, SuccessionRule rule) {
    std::vector<LeakReportEntry> report;
    if (trend.size() < 2 || growth_slope(trend) < kMinimumGrowthSlope) {
        return report;
    }
    for (const auto& [callsite, score] : scores) {
        const double p = leak_probability(score, rule);
        if (p <= kLeakProbabilityThreshold) {
            continue;
        }
        auto rate = rates.find(callsite);
        report.push_back(LeakReportEntry{callsite, p, rate == rates.end() ? 0.0 : rate->second, score});
    }
    // scores is ordered by callsite, so stable_sort keeps ties deterministic.
    std::stable_sort(report.begin(), report.end(),
                     [](const LeakReportEntry& a, const LeakReportEntry& b) { return a.leak_rate > b.leak_rate; });
    return report;
}

}  // namespace heapscope
