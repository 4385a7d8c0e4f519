/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/trace_replay.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "heapscope/copy_volume.hpp"
#include "heapscope/rate_sampler.hpp"
#include "heapscope/sample_file.hpp"
#include "heapscope/threshold_sampler.hpp"
#include "text_fields.hpp"

namespace heapscope {

using detail::parse_double;
using detail::parse_int;
using detail::sanitize_field;
using detail::split_tabs;

Callsite leak_site() {
    return Callsite("leak.py", 42);
}

Callsite background_site() {
    return Callsite("background.py", 7);
}

TraceSpec parse_trace_spec(std::string_view text) {
    TraceSpec spec;
    const auto colon = text.find(':');
    const std::string_view name = text.substr(0, colon);
    if (name == "churn") {
        spec.generator = TraceGenerator::churn;
    } else if (name == "staircase") {
        spec.generator = TraceGenerator::staircase;
    } else if (name == "leak") {
        spec.generator = TraceGenerator::leak;
    } else if (name == "random") {
        spec.generator = TraceGenerator::random;
    } else {
        throw std::invalid_argument("unknown trace generator '" + std::string(name) + "'");
    }
    if (colon == std::string_view::npos) {
        return spec;
    }
    std::string_view rest = text.substr(colon + 1);
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        const std::string_view item = rest.substr(0, comma);
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) {
            throw std::invalid_argument("trace spec item without '=': " + std::string(item));
        }
        const std::string key(item.substr(0, eq));
        const std::string_view value = item.substr(eq + 1);
        if (key == "leak_fraction") {
            auto v = parse_double(value);
            if (!v) {
                throw std::invalid_argument("bad leak_fraction '" + std::string(value) + "'");
            }
            spec.leak_fraction = *v;
            continue;
        }
        auto v = parse_int<std::uint64_t>(value);
        if (!v) {
            throw std::invalid_argument("bad value for " + key + ": '" + std::string(value) + "'");
        }
        if (key == "seed") spec.seed = *v;
        else if (key == "tick") spec.tick_ns = *v;
        else if (key == "pairs") spec.pairs = *v;
        else if (key == "size") spec.size = *v;
        else if (key == "drift") spec.drift_bytes = *v;
        else if (key == "every") spec.drift_every = *v;
        else if (key == "steps" || key == "k") spec.steps = *v;
        else if (key == "step" || key == "T") spec.step_bytes = *v;
        else if (key == "count" || key == "n") spec.count = *v;
        else if (key == "background") spec.background_pairs = *v;
        else if (key == "background_size") spec.background_size = *v;
        else if (key == "events") spec.events = *v;
        else if (key == "max_size") spec.max_size = *v;
        else throw std::invalid_argument("unknown trace spec key '" + key + "'");
    }
    return spec;
}

namespace {

class TraceBuilder {
public:
    explicit TraceBuilder(Nanos tick) : tick_(tick) {}

    AllocId alloc(std::uint64_t size, const Callsite& site, DomainTag domain = DomainTag::native) {
        const AllocId id = next_id_++;
        push(EventKind::alloc, size, id, site, domain);
        return id;
    }

    void free(AllocId id, std::uint64_t size, const Callsite& site, DomainTag domain = DomainTag::native) {
        push(EventKind::free, size, id, site, domain);
    }

    std::vector<AllocEvent> take() { return std::move(events_); }
    void reserve(std::size_t n) { events_.reserve(n); }

private:
    void push(EventKind kind, std::uint64_t size, AllocId id, const Callsite& site, DomainTag domain) {
        AllocEvent e;
        e.kind = kind;
        e.size = size;
        e.alloc_id = id;
        e.domain = domain;
        e.callsite = site;
        e.timestamp = static_cast<Nanos>(events_.size()) * tick_;
        events_.push_back(std::move(e));
    }

    Nanos tick_;
    AllocId next_id_ = 1;
    std::vector<AllocEvent> events_;
};

void require(bool ok, const char* what) {
    if (!ok) {
        throw std::invalid_argument(what);
    }
}

}  // namespace

std::vector<AllocEvent> generate_trace(const TraceSpec& spec) {
    require(spec.tick_ns > 0, "trace tick must be positive");
    TraceBuilder b(spec.tick_ns);

    switch (spec.generator) {
    case TraceGenerator::churn: {
        require(spec.size > 0, "churn needs size > 0");
        require(spec.drift_bytes == 0 || spec.drift_every > 0, "churn drift needs every > 0");
        const Callsite churn_site("churn.py", 10);
        const Callsite drift_site("drift.py", 20);
        b.reserve(spec.pairs * 2 + (spec.drift_every ? spec.pairs / spec.drift_every : 0));
        for (std::uint64_t i = 0; i < spec.pairs; ++i) {
            const AllocId id = b.alloc(spec.size, churn_site);
            b.free(id, spec.size, churn_site);
            if (spec.drift_bytes > 0 && (i + 1) % spec.drift_every == 0) {
                b.alloc(spec.drift_bytes, drift_site);
            }
        }
        break;
    }
    case TraceGenerator::staircase: {
        require(spec.step_bytes > 0, "staircase needs step > 0");
        const Callsite stair_site("staircase.py", 1);
        for (std::uint64_t i = 0; i < spec.steps; ++i) {
            b.alloc(spec.step_bytes, stair_site);
        }
        break;
    }
    case TraceGenerator::leak: {
        require(spec.size > 0, "leak needs size > 0");
        require(spec.leak_fraction >= 0.0 && spec.leak_fraction <= 1.0, "leak_fraction must be in [0,1]");
        require(spec.background_pairs == 0 || spec.background_size > 0, "background_size must be > 0");
        const Callsite site = leak_site();
        const Callsite background = background_site();
        std::uint64_t leaked = 0;
        for (std::uint64_t i = 0; i < spec.count; ++i) {
            // Leak exactly floor((i + 1) * fraction) of the first i + 1 allocations.
            const auto target = static_cast<std::uint64_t>(static_cast<double>(i + 1) * spec.leak_fraction);
            const AllocId id = b.alloc(spec.size, site);
            if (target > leaked) {
                ++leaked;
            } else {
                b.free(id, spec.size, site);
            }
            for (std::uint64_t j = 0; j < spec.background_pairs; ++j) {
                const AllocId bg = b.alloc(spec.background_size, background, DomainTag::managed);
                b.free(bg, spec.background_size, background, DomainTag::managed);
            }
        }
        break;
    }
    case TraceGenerator::random: {
        require(spec.max_size > 0, "random needs max_size > 0");
        std::mt19937_64 rng(spec.seed);
        std::uniform_int_distribution<std::uint64_t> size_dist(1, spec.max_size);
        std::uniform_int_distribution<int> site_dist(1, 8);
        std::bernoulli_distribution do_alloc(0.55);
        std::bernoulli_distribution managed(0.5);
        struct Live {
            AllocId id;
            std::uint64_t size;
            Callsite site;
            DomainTag domain;
        };
        std::vector<Live> live;
        for (std::uint64_t i = 0; i < spec.events; ++i) {
            if (live.empty() || do_alloc(rng)) {
                const std::uint64_t size = size_dist(rng);
                Callsite site("random.py", static_cast<std::uint32_t>(site_dist(rng)));
                const DomainTag domain = managed(rng) ? DomainTag::managed : DomainTag::native;
                const AllocId id = b.alloc(size, site, domain);
                live.push_back(Live{id, size, std::move(site), domain});
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, live.size() - 1);
                const std::size_t k = pick(rng);
                b.free(live[k].id, live[k].size, live[k].site, live[k].domain);
                live[k] = std::move(live.back());
                live.pop_back();
            }
        }
        break;
    }
    }
    return b.take();
}

ReplayResult replay(std::span<const AllocEvent> trace, const ProfilerConfig& config) {
    config.validate();
    if (auto violation = validate_event_stream(trace)) {
        throw std::invalid_argument("invalid trace at event " + std::to_string(violation->index) + ": " +
                                    violation->reason);
    }

    ReplayResult result;
    result.threshold = config.threshold_bytes;
    result.true_footprint_series.reserve(trace.size());

    FootprintLedger oracle;
    ThresholdSampler sampler(config.threshold_bytes);
    RateSampler rate(config.threshold_bytes, config.deterministic_rng_seed);
    CopyVolumeTracker copies(config);
    LeakDetector detector;
    std::map<Callsite, std::uint64_t> growth_bytes;
    std::uint64_t sampled_step = 0;

    for (const AllocEvent& e : trace) {
        const std::uint64_t footprint = oracle.apply(e);
        result.true_footprint_series.push_back(FootprintPoint{e.timestamp, footprint});
        ++(e.kind == EventKind::alloc ? result.alloc_events
                                      : e.kind == EventKind::free ? result.free_events : result.copy_events);

        if (e.kind == EventKind::copy) {
            if (auto rec = copies.record_copy(e.size, e.callsite, e.timestamp, footprint, oracle.peak())) {
                result.copy_records.push_back(std::move(*rec));
            }
        } else {
            if (e.kind == EventKind::free) {
                detector.on_free(e.alloc_id);
            }
            if (auto sample = sampler.record(e)) {
                sampled_step = sample->footprint;
                if (sample->kind == SampleKind::growth) {
                    growth_bytes[sample->callsite] += static_cast<std::uint64_t>(sample->net_delta);
                    detector.on_growth_sample(*sample);
                }
                result.threshold_records.push_back(std::move(*sample));
            }
            if (const std::uint64_t fired = rate.record_bytes(e.size); fired > 0) {
                SampleRecord r;
                r.kind = e.kind == EventKind::alloc ? SampleKind::growth : SampleKind::decline;
                r.timestamp = e.timestamp;
                const auto credited = static_cast<std::int64_t>(fired * rate.rate());
                r.net_delta = e.kind == EventKind::alloc ? credited : -credited;
                r.footprint = footprint;
                r.peak_footprint = oracle.peak();
                r.managed_fraction = e.domain == DomainTag::managed ? 1.0 : 0.0;
                r.callsite = e.callsite;
                r.alloc_id = e.alloc_id;
                result.rate_records.push_back(std::move(r));
            }
        }
        const std::uint64_t error = footprint > sampled_step ? footprint - sampled_step : sampled_step - footprint;
        result.max_reconstruction_error = std::max(result.max_reconstruction_error, error);
    }

    result.true_peak = oracle.peak();
    result.threshold_samples = sampler.samples_emitted();
    result.rate_samples = rate.samples_emitted();
    result.trend = sampler.trend_series();
    for (const SampleRecord& r : result.threshold_records) {
        result.sampled_peak = std::max(result.sampled_peak, r.peak_footprint);
    }
    result.leak_scores = detector.scores();

    const double elapsed =
        trace.empty() ? 0.0 : static_cast<double>(trace.back().timestamp - trace.front().timestamp) / 1e9;
    for (const auto& [site, bytes] : growth_bytes) {
        result.leak_rates[site] = elapsed > 0.0 ? leak_rate(bytes, elapsed) : 0.0;
    }
    result.leak_report = filter_leak_reports(result.leak_scores, result.trend, result.leak_rates);
    return result;
}

namespace {

SampleFileHeader replay_header(const ProfilerConfig& config) {
    SampleFileHeader header;
    header.threshold_bytes = config.threshold_bytes;
    header.copy_rate_bytes = config.copy_rate_bytes();
    header.seed = config.deterministic_rng_seed;
    return header;
}

SampleFileFooter replay_footer(const ReplayResult& result, std::uint64_t samples) {
    SampleFileFooter footer;
    footer.allocs = result.alloc_events;
    footer.frees = result.free_events;
    footer.copies = result.copy_events;
    footer.samples = samples;
    footer.peak_footprint = result.true_peak;
    if (!result.true_footprint_series.empty()) {
        footer.elapsed_ns = result.true_footprint_series.back().timestamp - result.true_footprint_series.front().timestamp;
    }
    return footer;
}

}  // namespace

std::string threshold_log_text(const ReplayResult& result, const ProfilerConfig& config) {
    // Merge allocation and copy records in emission order.
    std::vector<const SampleRecord*> records;
    for (const auto& r : result.threshold_records) records.push_back(&r);
    for (const auto& r : result.copy_records) records.push_back(&r);
    std::stable_sort(records.begin(), records.end(),
                     [](const SampleRecord* a, const SampleRecord* b) { return a->timestamp < b->timestamp; });

    std::string text = format_header(replay_header(config));
    for (const SampleRecord* r : records) {
        text += format_record(*r);
    }
    for (const auto& [site, score] : result.leak_scores) {
        text += format_leak_line(site, score);
    }
    text += format_footer(replay_footer(result, records.size()));
    return text;
}

std::string rate_log_text(const ReplayResult& result, const ProfilerConfig& config) {
    std::string text = format_header(replay_header(config));
    for (const SampleRecord& r : result.rate_records) {
        text += format_record(r);
    }
    text += format_footer(replay_footer(result, result.rate_records.size()));
    return text;
}

LogSizes compare_log_sizes(std::span<const AllocEvent> trace, const ProfilerConfig& config) {
    const ReplayResult result = replay(trace, config);
    return LogSizes{threshold_log_text(result, config).size(), rate_log_text(result, config).size()};
}

namespace {

nlohmann::ordered_json record_json(const SampleRecord& r) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(r.kind);
    j["timestamp_ns"] = r.timestamp;
    j["net_delta"] = r.net_delta;
    j["footprint"] = r.footprint;
    j["peak"] = r.peak_footprint;
    j["managed_fraction"] = format_fixed6(r.managed_fraction);
    j["file"] = r.callsite.file;
    j["line"] = r.callsite.line;
    if (r.alloc_id) {
        j["alloc_id"] = *r.alloc_id;
    }
    return j;
}

}  // namespace

std::string replay_result_json(const ReplayResult& result) {
    nlohmann::ordered_json j;
    j["threshold"] = result.threshold;
    j["events"] = result.true_footprint_series.size();
    j["true_peak"] = result.true_peak;
    j["sampled_peak"] = result.sampled_peak;
    j["threshold_samples"] = result.threshold_samples;
    j["rate_samples"] = result.rate_samples;
    j["copy_samples"] = result.copy_records.size();
    j["max_reconstruction_error"] = result.max_reconstruction_error;
    auto& trend = j["trend"] = nlohmann::ordered_json::array();
    for (const auto& p : result.trend) {
        trend.push_back({p.timestamp, p.footprint});
    }
    auto& records = j["threshold_records"] = nlohmann::ordered_json::array();
    for (const auto& r : result.threshold_records) {
        records.push_back(record_json(r));
    }
    auto& scores = j["leak_scores"] = nlohmann::ordered_json::array();
    for (const auto& [site, score] : result.leak_scores) {
        scores.push_back({{"file", site.file}, {"line", site.line}, {"mallocs", score.mallocs}, {"frees", score.frees}});
    }
    auto& leaks = j["leaks"] = nlohmann::ordered_json::array();
    for (const auto& entry : result.leak_report) {
        leaks.push_back({{"file", entry.callsite.file},
                         {"line", entry.callsite.line},
                         {"probability", format_fixed6(entry.probability)},
                         {"leak_rate_mbps", format_fixed6(entry.leak_rate)},
                         {"mallocs", entry.score.mallocs},
                         {"frees", entry.score.frees}});
    }
    return j.dump(2) + "\n";
}

void write_trace(std::ostream& out, std::span<const AllocEvent> trace) {
    out << "#heapscope-trace\t1\n";
    for (const AllocEvent& e : trace) {
        out << to_string(e.kind) << '\t' << e.size << '\t' << e.alloc_id << '\t' << to_string(e.domain) << '\t'
            << sanitize_field(e.callsite.file) << '\t' << e.callsite.line << '\t' << e.timestamp << '\n';
    }
}

std::vector<AllocEvent> parse_trace(std::istream& in, std::string_view name) {
    const std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::vector<AllocEvent> events;
    std::size_t pos = 0;
    std::size_t line_number = 0;
    auto fail = [&](const std::string& what) {
        throw FormatError(std::string(name) + ":" + std::to_string(line_number) + ": " + what);
    };
    while (pos < content.size()) {
        ++line_number;
        std::size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) {
            nl = content.size();
        }
        std::string_view line(content.data() + pos, nl - pos);
        pos = nl + 1;
        if (line.empty() || line.front() == '#') {
            continue;
        }
        auto f = split_tabs(line);
        if (f.size() != 7) {
            fail("expected 7 fields, found " + std::to_string(f.size()));
        }
        AllocEvent e;
        auto kind = parse_event_kind(f[0]);
        auto size = parse_int<std::uint64_t>(f[1]);
        auto id = parse_int<AllocId>(f[2]);
        auto domain = parse_domain(f[3]);
        auto ln = parse_int<std::uint32_t>(f[5]);
        auto ts = parse_int<Nanos>(f[6]);
        if (!kind || !size || !id || !domain || !ln || !ts || f[4].empty() || *ln < 1) {
            fail("malformed trace event");
        }
        e.kind = *kind;
        e.size = *size;
        e.alloc_id = *id;
        e.domain = *domain;
        e.callsite = Callsite(std::string(f[4]), *ln);
        e.timestamp = *ts;
        events.push_back(std::move(e));
    }
    return events;
}

std::vector<AllocEvent> read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(path + ": cannot open");
    }
    return parse_trace(in, path);
}

}  // namespace heapscope
