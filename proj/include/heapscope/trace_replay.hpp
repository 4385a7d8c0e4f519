/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_TRACE_REPLAY_HPP
#define HEAPSCOPE_TRACE_REPLAY_HPP

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "heapscope/core_model.hpp"
#include "heapscope/leak_detector.hpp"

namespace heapscope {

enum class TraceGenerator { churn, staircase, leak, random };

/// Parameters for the synthetic generators. Each generator reads only its
/// own fields; timestamps are event_index * tick_ns.
struct TraceSpec {
    TraceGenerator generator = TraceGenerator::staircase;
    std::uint64_t seed = 0;
    Nanos tick_ns = 1000;

    // churn: `pairs` alloc/free pairs of `size` bytes, plus a never-freed
    // `drift_bytes` allocation after every `drift_every` pairs.
    std::uint64_t pairs = 0;
    std::uint64_t size = 0;
    std::uint64_t drift_bytes = 0;
    std::uint64_t drift_every = 100;

    // staircase: `steps` allocations of `step_bytes`.
    std::uint64_t steps = 0;
    std::uint64_t step_bytes = 0;

    // leak: `count` allocations of `size` at the leak site; a `leak_fraction`
    // share are never freed, the rest are freed right away. `background_pairs`
    // churn pairs of `background_size` at another site follow each one.
    std::uint64_t count = 0;
    double leak_fraction = 1.0;
    std::uint64_t background_pairs = 0;
    std::uint64_t background_size = 64;

    // random: `events` steps mixing allocs of 1..max_size bytes and frees of
    // random live blocks, over a handful of callsites and both domains.
    std::uint64_t events = 0;
    std::uint64_t max_size = 0;
};

/// Parses "name:key=value,key=value", e.g. "churn:pairs=1000,size=16384".
/// Throws std::invalid_argument on unknown generators or keys.
TraceSpec parse_trace_spec(std::string_view text);

// Callsites the generators attribute to.
Callsite leak_site();
Callsite background_site();

/// Deterministic for a given spec. Throws std::invalid_argument on
/// parameters the generator cannot honor.
std::vector<AllocEvent> generate_trace(const TraceSpec& spec);

struct ReplayResult {
    // Oracle footprint after every event.
    std::vector<FootprintPoint> true_footprint_series;
    std::uint64_t true_peak = 0;
    std::vector<SampleRecord> threshold_records;
    std::vector<FootprintPoint> trend;
    std::uint64_t threshold_samples = 0;
    std::uint64_t rate_samples = 0;
    std::vector<SampleRecord> rate_records;
    std::vector<SampleRecord> copy_records;
    std::uint64_t sampled_peak = 0;
    std::uint64_t max_reconstruction_error = 0;
    std::map<Callsite, LeakScore> leak_scores;
    std::map<Callsite, double> leak_rates;
    std::vector<LeakReportEntry> leak_report;
    std::uint64_t threshold = 0;
    std::uint64_t alloc_events = 0;
    std::uint64_t free_events = 0;
    std::uint64_t copy_events = 0;
};

/// Runs the exact oracle, the threshold sampler (feeding the leak detector)
/// and a rate sampler with rate = threshold over the same stream. Throws
/// std::invalid_argument naming the first invalid event.
ReplayResult replay(std::span<const AllocEvent> trace, const ProfilerConfig& config);

struct LogSizes {
    std::size_t threshold_log_bytes = 0;
    std::size_t rate_log_bytes = 0;
};

/// Serializes both samplers' outputs in the sample file format.
std::string threshold_log_text(const ReplayResult& result, const ProfilerConfig& config);
std::string rate_log_text(const ReplayResult& result, const ProfilerConfig& config);
LogSizes compare_log_sizes(std::span<const AllocEvent> trace, const ProfilerConfig& config);

/// Stable JSON rendering of a replay (trend and record arrays included).
std::string replay_result_json(const ReplayResult& result);

// Trace file: "kind size alloc_id domain file line timestamp_ns", tab-separated.
void write_trace(std::ostream& out, std::span<const AllocEvent> trace);
std::vector<AllocEvent> parse_trace(std::istream& in, std::string_view name);
std::vector<AllocEvent> read_trace(const std::string& path);

}  // namespace heapscope

#endif  // HEAPSCOPE_TRACE_REPLAY_HPP
