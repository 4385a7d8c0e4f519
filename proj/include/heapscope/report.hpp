/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_REPORT_HPP
#define HEAPSCOPE_REPORT_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "heapscope/cpu_attributor.hpp"
#include "heapscope/leak_detector.hpp"
#include "heapscope/sample_file.hpp"
#include "heapscope/timer_log.hpp"

namespace heapscope {

inline constexpr int kProfileFormatVersion = 1;

struct CallsiteStats {
    Callsite callsite;
    CpuCounters cpu;
    // Sum of growth-sample deltas credited to this line.
    std::uint64_t alloc_bytes_sampled = 0;
    // Maximum of the line's cumulative sampled net contribution.
    std::uint64_t peak_contribution = 0;
    // Time-weighted mean of the cumulative contribution over the trend window.
    std::uint64_t avg_footprint_share = 0;
    double managed_alloc_fraction = 0.0;
    double copy_mbps = 0.0;
    std::optional<LeakReportEntry> leak;
};

struct ProfileTotals {
    std::int64_t cpu_managed_ns = 0;
    std::int64_t cpu_native_ns = 0;
    std::uint64_t alloc_bytes_sampled = 0;
    double copy_mbps = 0.0;
};

struct RunSummary {
    std::uint64_t files = 0;
    std::uint64_t samples = 0;
    std::uint64_t timer_samples = 0;
    std::uint64_t peak_footprint = 0;
    Nanos elapsed_ns = 0;
};

enum class SortKey { cpu, peak_mem, copy, leak_rate };

SortKey parse_sort_key(std::string_view text);  // throws std::invalid_argument
const char* to_string(SortKey key);

struct ProfileDocument {
    int format_version = kProfileFormatVersion;
    SampleFileHeader config;
    RunSummary run;
    std::vector<FootprintPoint> trend;
    std::vector<CallsiteStats> rows;
    std::vector<LeakReportEntry> leaks;
    ProfileTotals totals;
    SortKey sort_key = SortKey::cpu;
    // Parse diagnostics; not serialized.
    std::vector<std::string> warnings;
};

/// Merges parsed sample files (in any order) and an optional timer log into
/// per-callsite rows.
ProfileDocument aggregate(std::span<const SampleFile> files, const TimerLog* timer_log = nullptr);

/// Reads and aggregates files from disk. Propagates FormatError.
ProfileDocument aggregate_paths(std::span<const std::string> sample_paths,
                                const std::optional<std::string>& timer_log_path);

void sort_rows(ProfileDocument& document, SortKey key);

std::string render_text(const ProfileDocument& document, SortKey key);
std::string render_json(const ProfileDocument& document);

/// Inverse of render_json at its serialized precision. Throws FormatError on
/// a version mismatch or a missing field.
ProfileDocument parse_profile_json(std::string_view text);

}  // namespace heapscope

#endif  // HEAPSCOPE_REPORT_HPP
