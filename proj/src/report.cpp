/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

namespace heapscope {

namespace {

constexpr double kBytesPerMB = 1 << 20;

constexpr const char* kAverageMemoryNote =
    "avg_footprint_share is sample-derived: the time-weighted mean of each line's cumulative sampled net "
    "allocation over the trend window (an approximation, not a traced per-line average)";

struct LineAccumulator {
    std::int64_t cumulative = 0;
    std::int64_t peak = 0;
    Nanos last_change = 0;
    long double weighted = 0.0L;  // integral of max(cumulative, 0) dt
    std::uint64_t growth_bytes = 0;
    long double managed_weighted = 0.0L;
    std::uint64_t copy_bytes = 0;
    bool touched_memory = false;
};

auto record_key(const SampleRecord& r) {
    return std::make_tuple(r.timestamp, static_cast<int>(r.kind), std::cref(r.callsite.file), r.callsite.line,
                           r.net_delta, r.footprint, r.peak_footprint, r.managed_fraction, r.alloc_id.value_or(0));
}

bool header_less(const SampleFileHeader& a, const SampleFileHeader& b) {
    return std::make_tuple(a.start_ns, a.threshold_bytes, a.copy_rate_bytes, a.seed.value_or(0)) <
           std::make_tuple(b.start_ns, b.threshold_bytes, b.copy_rate_bytes, b.seed.value_or(0));
}

std::int64_t row_cpu(const CallsiteStats& s) {
    return s.cpu.total_ns();
}

}  // namespace

SortKey parse_sort_key(std::string_view text) {
    if (text == "cpu") return SortKey::cpu;
    if (text == "peak_mem") return SortKey::peak_mem;
    if (text == "copy") return SortKey::copy;
    if (text == "leak_rate") return SortKey::leak_rate;
    throw std::invalid_argument("unknown sort key '" + std::string(text) + "' (expected cpu, peak_mem, copy, leak_rate)");
}

const char* to_string(SortKey key) {
    switch (key) {
    case SortKey::cpu: return "cpu";
    case SortKey::peak_mem: return "peak_mem";
    case SortKey::copy: return "copy";
    case SortKey::leak_rate: return "leak_rate";
    }
    return "?";
}

ProfileDocument aggregate(std::span<const SampleFile> files, const TimerLog* timer_log) {
    ProfileDocument doc;
    doc.run.files = files.size();

    std::vector<const SampleRecord*> records;
    std::map<Callsite, LeakScore> scores;
    bool have_config = false;
    Nanos footer_elapsed = 0;
    std::optional<Nanos> earliest_start;
    for (const SampleFile& file : files) {
        if (!have_config || header_less(file.header, doc.config)) {
            doc.config = file.header;
            have_config = true;
        }
        earliest_start = std::min(earliest_start.value_or(file.header.start_ns), file.header.start_ns);
        for (const auto& r : file.records) {
            records.push_back(&r);
        }
        for (const auto& [site, score] : file.leak_scores) {
            scores[site].mallocs += score.mallocs;
            scores[site].frees += score.frees;
        }
        if (file.footer) {
            footer_elapsed = std::max(footer_elapsed, file.footer->elapsed_ns);
            doc.run.peak_footprint = std::max(doc.run.peak_footprint, file.footer->peak_footprint);
        }
        doc.warnings.insert(doc.warnings.end(), file.warnings.begin(), file.warnings.end());
    }
    for (const SampleFile& file : files) {
        if (file.header.threshold_bytes != doc.config.threshold_bytes) {
            doc.warnings.push_back("sample files disagree on threshold (" + std::to_string(file.header.threshold_bytes) +
                                   " vs " + std::to_string(doc.config.threshold_bytes) + ")");
            break;
        }
    }
    std::sort(doc.warnings.begin(), doc.warnings.end());
    std::sort(records.begin(), records.end(),
              [](const SampleRecord* a, const SampleRecord* b) { return record_key(*a) < record_key(*b); });
    doc.run.samples = records.size();

    // Global trend, window, and run-level elapsed time.
    for (const SampleRecord* r : records) {
        doc.run.peak_footprint = std::max(doc.run.peak_footprint, r->peak_footprint);
        if (r->kind == SampleKind::copy) {
            continue;
        }
        if (!doc.trend.empty() && doc.trend.back().timestamp == r->timestamp) {
            doc.trend.back().footprint = r->footprint;
        } else {
            doc.trend.push_back(FootprintPoint{r->timestamp, r->footprint});
        }
    }
    Nanos elapsed = footer_elapsed;
    if (elapsed == 0 && !records.empty()) {
        const Nanos last = records.back()->timestamp;
        const Nanos first = earliest_start && *earliest_start > 0 && *earliest_start <= records.front()->timestamp
                                ? *earliest_start
                                : records.front()->timestamp;
        elapsed = last - first;
    }
    doc.run.elapsed_ns = elapsed;
    const double elapsed_seconds = static_cast<double>(elapsed) / 1e9;

    const Nanos window_start = doc.trend.empty() ? 0 : doc.trend.front().timestamp;
    const Nanos window_end = doc.trend.empty() ? 0 : doc.trend.back().timestamp;

    std::map<Callsite, LineAccumulator> lines;
    for (const SampleRecord* r : records) {
        LineAccumulator& acc = lines[r->callsite];
        if (r->kind == SampleKind::copy) {
            acc.copy_bytes += static_cast<std::uint64_t>(std::max<std::int64_t>(r->net_delta, 0));
            continue;
        }
        if (!acc.touched_memory) {
            acc.last_change = window_start;
            acc.touched_memory = true;
        }
        acc.weighted += static_cast<long double>(std::max<std::int64_t>(acc.cumulative, 0)) *
                        static_cast<long double>(r->timestamp - acc.last_change);
        acc.last_change = r->timestamp;
        acc.cumulative += r->net_delta;
        acc.peak = std::max(acc.peak, acc.cumulative);
        if (r->kind == SampleKind::growth) {
            acc.growth_bytes += static_cast<std::uint64_t>(r->net_delta);
            acc.managed_weighted += static_cast<long double>(r->managed_fraction) * r->net_delta;
        }
    }

    CpuAttributor cpu;
    if (timer_log) {
        for (const TimerSample& s : timer_log->samples) {
            cpu.on_timer_sample(s);
        }
        doc.run.timer_samples = timer_log->samples.size();
        doc.warnings.insert(doc.warnings.end(), timer_log->warnings.begin(), timer_log->warnings.end());
    }

    std::map<Callsite, double> rates;
    for (const auto& [site, acc] : lines) {
        rates[site] = elapsed_seconds > 0.0 ? leak_rate(acc.growth_bytes, elapsed_seconds) : 0.0;
    }
    doc.leaks = filter_leak_reports(scores, doc.trend, rates);

    std::map<Callsite, CallsiteStats> rows;
    for (const auto& [site, acc] : lines) {
        CallsiteStats& row = rows[site];
        row.callsite = site;
        row.alloc_bytes_sampled = acc.growth_bytes;
        row.peak_contribution = static_cast<std::uint64_t>(std::max<std::int64_t>(acc.peak, 0));
        if (acc.touched_memory) {
            if (window_end > window_start) {
                const long double total =
                    acc.weighted + static_cast<long double>(std::max<std::int64_t>(acc.cumulative, 0)) *
                                       static_cast<long double>(window_end - acc.last_change);
                row.avg_footprint_share =
                    static_cast<std::uint64_t>(std::llround(total / static_cast<long double>(window_end - window_start)));
            } else {
                row.avg_footprint_share = static_cast<std::uint64_t>(std::max<std::int64_t>(acc.cumulative, 0));
            }
        }
        row.managed_alloc_fraction =
            acc.growth_bytes > 0
                ? std::clamp(static_cast<double>(acc.managed_weighted / static_cast<long double>(acc.growth_bytes)),
                             0.0, 1.0)
                : 0.0;
        row.copy_mbps = elapsed_seconds > 0.0 ? static_cast<double>(acc.copy_bytes) / kBytesPerMB / elapsed_seconds : 0.0;
    }
    for (const auto& [site, counters] : cpu.counters()) {
        CallsiteStats& row = rows[site];
        row.callsite = site;
        row.cpu = counters;
    }
    for (const LeakReportEntry& leak : doc.leaks) {
        rows[leak.callsite].leak = leak;
    }

    for (auto& [site, row] : rows) {
        doc.totals.cpu_managed_ns += row.cpu.managed_ns;
        doc.totals.cpu_native_ns += row.cpu.native_ns;
        doc.totals.alloc_bytes_sampled += row.alloc_bytes_sampled;
        doc.totals.copy_mbps += row.copy_mbps;
        doc.rows.push_back(std::move(row));
    }
    sort_rows(doc, SortKey::cpu);
    return doc;
}

ProfileDocument aggregate_paths(std::span<const std::string> sample_paths,
                                const std::optional<std::string>& timer_log_path) {
    std::vector<SampleFile> files;
    files.reserve(sample_paths.size());
    for (const auto& path : sample_paths) {
        files.push_back(read_sample_file(path));
    }
    std::optional<TimerLog> timer;
    if (timer_log_path) {
        timer = read_timer_log(*timer_log_path);
    }
    return aggregate(files, timer ? &*timer : nullptr);
}

void sort_rows(ProfileDocument& doc, SortKey key) {
    auto metric = [key](const CallsiteStats& s) -> double {
        switch (key) {
        case SortKey::cpu: return static_cast<double>(row_cpu(s));
        case SortKey::peak_mem: return static_cast<double>(s.peak_contribution);
        case SortKey::copy: return s.copy_mbps;
        case SortKey::leak_rate: return s.leak ? s.leak->leak_rate : -1.0;
        }
        return 0.0;
    };
    std::sort(doc.rows.begin(), doc.rows.end(), [&](const CallsiteStats& a, const CallsiteStats& b) {
        const double ma = metric(a);
        const double mb = metric(b);
        if (ma != mb) {
            return ma > mb;
        }
        return a.callsite < b.callsite;
    });
    doc.sort_key = key;
}

std::string render_text(const ProfileDocument& document, SortKey key) {
    ProfileDocument doc = document;
    sort_rows(doc, key);

    const double total_cpu = static_cast<double>(doc.totals.cpu_managed_ns + doc.totals.cpu_native_ns);
    std::ostringstream out;
    out << std::fixed;
    out << "heapscope profile (format " << doc.format_version << ", threshold " << doc.config.threshold_bytes
        << " bytes, " << doc.run.samples << " samples, " << doc.run.timer_samples << " timer samples)\n";
    out << "peak footprint " << std::setprecision(3) << static_cast<double>(doc.run.peak_footprint) / kBytesPerMB
        << " MB over " << std::setprecision(3) << static_cast<double>(doc.run.elapsed_ns) / 1e9 << " s; sorted by "
        << to_string(key) << "\n\n";
    out << std::left << std::setw(32) << "callsite" << std::right << std::setw(10) << "cpu%" << std::setw(10)
        << "managed%" << std::setw(10) << "native%" << std::setw(12) << "peak MB" << std::setw(12) << "avg MB"
        << std::setw(12) << "alloc MB" << std::setw(10) << "mgd mem%" << std::setw(10) << "copy MB/s" << "\n";
    for (const CallsiteStats& row : doc.rows) {
        const double cpu = static_cast<double>(row.cpu.total_ns());
        std::string name = row.callsite.to_string();
        if (name.size() > 31) {
            name = "..." + name.substr(name.size() - 28);
        }
        out << std::left << std::setw(32) << name << std::right << std::setprecision(1) << std::setw(10)
            << (total_cpu > 0 ? 100.0 * cpu / total_cpu : 0.0) << std::setw(10)
            << (cpu > 0 ? 100.0 * static_cast<double>(row.cpu.managed_ns) / cpu : 0.0) << std::setw(10)
            << (cpu > 0 ? 100.0 * static_cast<double>(row.cpu.native_ns) / cpu : 0.0) << std::setprecision(3)
            << std::setw(12) << static_cast<double>(row.peak_contribution) / kBytesPerMB << std::setw(12)
            << static_cast<double>(row.avg_footprint_share) / kBytesPerMB << std::setw(12)
            << static_cast<double>(row.alloc_bytes_sampled) / kBytesPerMB << std::setprecision(1) << std::setw(10)
            << 100.0 * row.managed_alloc_fraction << std::setprecision(3) << std::setw(10) << row.copy_mbps << "\n";
    }
    if (!doc.leaks.empty()) {
        out << "\npossible leaks (likelihood > 95%, fastest first):\n";
        for (const LeakReportEntry& leak : doc.leaks) {
            out << "  " << leak.callsite.to_string() << "  likelihood " << std::setprecision(1)
                << 100.0 * leak.probability << "%  leak rate " << std::setprecision(3) << leak.leak_rate
                << " MB/s  (mallocs " << leak.score.mallocs << ", frees " << leak.score.frees << ")\n";
        }
    }
    out << "\nnote: " << kAverageMemoryNote << "\n";
    return out.str();
}

namespace {

using Json = nlohmann::json;

Json callsite_json(const Callsite& c) {
    return Json{{"file", c.file}, {"line", c.line}};
}

Json leak_json(const LeakReportEntry& leak) {
    return Json{{"callsite", callsite_json(leak.callsite)},
                {"probability", format_fixed6(leak.probability)},
                {"leak_rate_mbps", format_fixed6(leak.leak_rate)},
                {"mallocs", leak.score.mallocs},
                {"frees", leak.score.frees}};
}

std::string seconds_string(std::int64_t ns) {
    return format_fixed6(static_cast<double>(ns) / 1e9);
}

}  // namespace

std::string render_json(const ProfileDocument& doc) {
    Json j;
    j["format_version"] = doc.format_version;
    j["config"] = Json{{"sample_format_version", doc.config.version},
                       {"threshold_bytes", doc.config.threshold_bytes},
                       {"copy_rate_bytes", doc.config.copy_rate_bytes},
                       {"seed", doc.config.seed ? Json(*doc.config.seed) : Json(nullptr)},
                       {"start_ns", doc.config.start_ns}};
    j["run"] = Json{{"files", doc.run.files},
                    {"samples", doc.run.samples},
                    {"timer_samples", doc.run.timer_samples},
                    {"peak_footprint", doc.run.peak_footprint},
                    {"elapsed_seconds", seconds_string(static_cast<std::int64_t>(doc.run.elapsed_ns))}};
    j["average_memory_definition"] = kAverageMemoryNote;
    j["sort_key"] = to_string(doc.sort_key);
    Json trend = Json::array();
    for (const auto& p : doc.trend) {
        trend.push_back(Json::array({p.timestamp, p.footprint}));
    }
    j["trend"] = std::move(trend);
    Json rows = Json::array();
    for (const CallsiteStats& row : doc.rows) {
        Json r{{"callsite", callsite_json(row.callsite)},
               {"cpu",
                Json{{"managed_seconds", seconds_string(row.cpu.managed_ns)},
                     {"native_seconds", seconds_string(row.cpu.native_ns)}}},
               {"alloc_bytes_sampled", row.alloc_bytes_sampled},
               {"peak_contribution", row.peak_contribution},
               {"avg_footprint_share", row.avg_footprint_share},
               {"managed_alloc_fraction", format_fixed6(row.managed_alloc_fraction)},
               {"copy_mbps", format_fixed6(row.copy_mbps)}};
        if (row.leak) {
            r["leak"] = leak_json(*row.leak);
        }
        rows.push_back(std::move(r));
    }
    j["rows"] = std::move(rows);
    if (!doc.leaks.empty()) {
        Json leaks = Json::array();
        for (const auto& leak : doc.leaks) {
            leaks.push_back(leak_json(leak));
        }
        j["leaks"] = std::move(leaks);
    }
    j["totals"] = Json{{"cpu_managed_seconds", seconds_string(doc.totals.cpu_managed_ns)},
                       {"cpu_native_seconds", seconds_string(doc.totals.cpu_native_ns)},
                       {"alloc_bytes_sampled", doc.totals.alloc_bytes_sampled},
                       {"copy_mbps", format_fixed6(doc.totals.copy_mbps)}};
    return j.dump(2) + "\n";
}

namespace {

double fixed_value(const Json& j, const char* key) {
    const std::string text = j.at(key).get<std::string>();
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) {
        throw FormatError(std::string("bad fixed-point value for ") + key);
    }
    return value;
}

std::int64_t seconds_value(const Json& j, const char* key) {
    return seconds_to_nanos(fixed_value(j, key));
}

Callsite callsite_from(const Json& j) {
    return Callsite(j.at("file").get<std::string>(), j.at("line").get<std::uint32_t>());
}

LeakReportEntry leak_from(const Json& j) {
    LeakReportEntry leak;
    leak.callsite = callsite_from(j.at("callsite"));
    leak.probability = fixed_value(j, "probability");
    leak.leak_rate = fixed_value(j, "leak_rate_mbps");
    leak.score.mallocs = j.at("mallocs").get<std::uint64_t>();
    leak.score.frees = j.at("frees").get<std::uint64_t>();
    return leak;
}

}  // namespace

ProfileDocument parse_profile_json(std::string_view text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw FormatError(std::string("profile JSON: ") + e.what());
    }
    ProfileDocument doc;
    try {
        doc.format_version = j.at("format_version").get<int>();
        if (doc.format_version != kProfileFormatVersion) {
            throw FormatError("profile format version " + std::to_string(doc.format_version) +
                              " is not supported (this reader supports " + std::to_string(kProfileFormatVersion) +
                              ")");
        }
        const Json& config = j.at("config");
        doc.config.version = config.at("sample_format_version").get<int>();
        doc.config.threshold_bytes = config.at("threshold_bytes").get<std::uint64_t>();
        doc.config.copy_rate_bytes = config.at("copy_rate_bytes").get<std::uint64_t>();
        if (!config.at("seed").is_null()) {
            doc.config.seed = config.at("seed").get<std::uint64_t>();
        }
        doc.config.start_ns = config.at("start_ns").get<Nanos>();
        const Json& run = j.at("run");
        doc.run.files = run.at("files").get<std::uint64_t>();
        doc.run.samples = run.at("samples").get<std::uint64_t>();
        doc.run.timer_samples = run.at("timer_samples").get<std::uint64_t>();
        doc.run.peak_footprint = run.at("peak_footprint").get<std::uint64_t>();
        doc.run.elapsed_ns = static_cast<Nanos>(seconds_value(run, "elapsed_seconds"));
        doc.sort_key = parse_sort_key(j.at("sort_key").get<std::string>());
        for (const Json& p : j.at("trend")) {
            doc.trend.push_back(FootprintPoint{p.at(0).get<Nanos>(), p.at(1).get<std::uint64_t>()});
        }
        for (const Json& r : j.at("rows")) {
            CallsiteStats row;
            row.callsite = callsite_from(r.at("callsite"));
            row.cpu.managed_ns = seconds_value(r.at("cpu"), "managed_seconds");
            row.cpu.native_ns = seconds_value(r.at("cpu"), "native_seconds");
            row.alloc_bytes_sampled = r.at("alloc_bytes_sampled").get<std::uint64_t>();
            row.peak_contribution = r.at("peak_contribution").get<std::uint64_t>();
            row.avg_footprint_share = r.at("avg_footprint_share").get<std::uint64_t>();
            row.managed_alloc_fraction = fixed_value(r, "managed_alloc_fraction");
            row.copy_mbps = fixed_value(r, "copy_mbps");
            if (r.contains("leak")) {
                row.leak = leak_from(r.at("leak"));
            }
            doc.rows.push_back(std::move(row));
        }
        if (j.contains("leaks")) {
            for (const Json& l : j.at("leaks")) {
                doc.leaks.push_back(leak_from(l));
            }
        }
        const Json& totals = j.at("totals");
        doc.totals.cpu_managed_ns = seconds_value(totals, "cpu_managed_seconds");
        doc.totals.cpu_native_ns = seconds_value(totals, "cpu_native_seconds");
        doc.totals.alloc_bytes_sampled = totals.at("alloc_bytes_sampled").get<std::uint64_t>();
        doc.totals.copy_mbps = fixed_value(totals, "copy_mbps");
    } catch (const Json::exception& e) {
        throw FormatError(std::string("profile JSON: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("profile JSON: ") + e.what());
    }
    return doc;
}

}  // namespace heapscope
