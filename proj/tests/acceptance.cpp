/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "heapscope/copy_volume.hpp"
#include "heapscope/cpu_attributor.hpp"
#include "heapscope/leak_detector.hpp"
#include "heapscope/report.hpp"
#include "heapscope/sample_file.hpp"
#include "heapscope/threshold_sampler.hpp"
#include "heapscope/timer_log.hpp"
#include "heapscope/trace_replay.hpp"
#include "oracles.hpp"
#include "subprocess.hpp"
#include "test_util.hpp"

using namespace heapscope;

namespace {

constexpr std::uint64_t kMiB = 1ULL << 20;
constexpr std::int64_t kMs = 1'000'000;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

ProfilerConfig config_with(std::uint64_t threshold) {
    ProfilerConfig c;
    c.threshold_bytes = threshold;
    return c;
}

std::vector<AllocEvent> churn_trace() {
    return generate_trace(parse_trace_spec("churn:pairs=1000000,size=16384,drift=1024,every=100"));
}

// Live runs share one scratch directory; criterion 9 inspects every sample
// file written there.
testutil::TempDir& scratch() {
    static testutil::TempDir dir;
    return dir;
}

std::vector<std::string>& live_sample_files() {
    static std::vector<std::string> files;
    return files;
}

testutil::ProcessResult run_profiled(const std::vector<std::string>& argv, const std::string& out,
                                     std::map<std::string, std::string> env = {}) {
    env["LD_PRELOAD"] = HS_PRELOAD;
    env["HEAPSCOPE_OUT"] = out;
    live_sample_files().push_back(out);
    return testutil::run_process(argv, env);
}

Outcome sampling_reduction() {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t T = choose_sampling_threshold(kMiB);
    const ReplayResult r = replay(churn_trace(), config_with(T));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = r.threshold_samples * 10 <= r.rate_samples && seconds < 30.0;
    return {pass, fmt("T=%llu threshold=%llu rate=%llu ratio=%.1fx time=%.2fs", (unsigned long long)T,
                      (unsigned long long)r.threshold_samples, (unsigned long long)r.rate_samples,
                      double(r.rate_samples) / double(std::max<std::uint64_t>(r.threshold_samples, 1)), seconds)};
}

Outcome footprint_accuracy() {
    const std::string out = scratch().file("block.samples");
    const auto proc = run_profiled({HS_BLOCK}, out);
    const SampleFile f = read_sample_file(out);
    const ProfileDocument doc = aggregate(std::span<const SampleFile>(&f, 1));
    const double target = 512.0 * kMiB;
    const double live_error = std::abs(double(doc.run.peak_footprint) - target) / target;

    const std::uint64_t T = choose_sampling_threshold(kMiB);
    TraceSpec s;
    s.generator = TraceGenerator::staircase;
    s.steps = 5;
    s.step_bytes = T;
    const ReplayResult r = replay(generate_trace(s), config_with(T));
    const std::uint64_t replay_error = r.sampled_peak > r.true_peak ? r.sampled_peak - r.true_peak
                                                                    : r.true_peak - r.sampled_peak;
    const bool pass = proc.exit_code == 0 && live_error < 0.01 && replay_error == 0 && r.true_peak == 5 * T;
    return {pass, fmt("live peak=%llu (%.4f%% off 512 MiB), staircase peak error=%llu", (unsigned long long)doc.run.peak_footprint,
                      live_error * 100.0, (unsigned long long)replay_error)};
}

Outcome reconstruction_bound() {
    std::uint64_t violations = 0;
    std::uint64_t checked = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const std::uint64_t T = choose_sampling_threshold(512 + (seed * 7919) % 30000);
        TraceSpec s = parse_trace_spec("random:events=2000,max_size=4096");
        s.seed = seed;
        const auto trace = generate_trace(s);
        const ReplayResult r = replay(trace, config_with(T));
        // Independent step reconstruction from the emitted records.
        std::map<Nanos, std::uint64_t> sampled;
        for (const auto& rec : r.threshold_records) {
            sampled[rec.timestamp] = rec.footprint;
        }
        std::map<AllocId, std::uint64_t> live;
        std::uint64_t truth = 0;
        std::uint64_t recon = 0;
        for (const auto& e : trace) {
            if (e.kind == EventKind::alloc) {
                live[e.alloc_id] = e.size;
                truth += e.size;
            } else if (e.kind == EventKind::free) {
                truth -= live.at(e.alloc_id);
                live.erase(e.alloc_id);
            }
            if (auto it = sampled.find(e.timestamp); it != sampled.end()) {
                recon = it->second;
            }
            const std::uint64_t err = truth > recon ? truth - recon : recon - truth;
            worst = std::max(worst, double(err) / double(T));
            violations += err >= T;
            ++checked;
        }
    }
    return {violations == 0, fmt("%llu event boundaries over 1000 traces, violations=%llu, worst error=%.6f T",
                                 (unsigned long long)checked, (unsigned long long)violations, worst)};
}

Outcome leak_detection() {
    const std::uint64_t T = choose_sampling_threshold(kMiB);
    int first_reported = -1;
    bool consistent = true;
    for (int n = 1; n <= 30; ++n) {
        TraceSpec s = parse_trace_spec("leak:leak_fraction=1.0,background=4,tick=1000000");
        s.count = static_cast<std::uint64_t>(n);
        s.size = T;
        const ReplayResult r = replay(generate_trace(s), config_with(T));
        const bool reported = std::any_of(r.leak_report.begin(), r.leak_report.end(),
                                          [](const LeakReportEntry& e) { return e.callsite == leak_site(); });
        consistent = consistent && r.leak_scores.at(leak_site()) == LeakScore{std::uint64_t(n), 0};
        if (reported && first_reported < 0) {
            first_reported = n;
        }
        consistent = consistent && reported == (n >= 19);
    }

    // A site whose every tracked object is reclaimed, inside a growing run.
    const std::uint64_t small_t = 1009;
    const Callsite grow("grow.c", 1);
    const Callsite reclaim("reclaim.c", 2);
    std::vector<AllocEvent> trace;
    AllocId id = 1;
    Nanos ts = 1;
    for (int round = 0; round < 60; ++round) {
        trace.push_back(testutil::alloc(id++, 10, ts++, DomainTag::native, grow));
        const AllocId block = id++;
        trace.push_back(testutil::alloc(block, small_t, ts++, DomainTag::native, reclaim));
        trace.push_back(testutil::free_of(block, small_t, ts++, reclaim));
    }
    trace.push_back(testutil::alloc(id++, 2 * small_t, ts++, DomainTag::native, grow));
    const ReplayResult rr = replay(trace, config_with(small_t));
    const LeakScore reclaimed = rr.leak_scores.at(reclaim);
    const bool reclaimed_hidden =
        reclaimed.mallocs == reclaimed.frees && reclaimed.mallocs > 0 &&
        std::none_of(rr.leak_report.begin(), rr.leak_report.end(),
                     [&](const LeakReportEntry& e) { return e.callsite == reclaim; });

    // Flat trend: high scores are still filtered out.
    const std::map<Callsite, LeakScore> scores{{leak_site(), {100, 0}}};
    const std::vector<FootprintPoint> flat{{0, 50 * kMiB}, {kMs, 50 * kMiB}, {2 * kMs, 50 * kMiB}};
    const bool flat_empty = filter_leak_reports(scores, flat, {{leak_site(), 10.0}}).empty();
    const ReplayResult churn = replay(generate_trace(parse_trace_spec("churn:pairs=20000,size=16384,drift=0")),
                                      config_with(T));
    const bool flat_replay_empty = churn.leak_report.empty();

    const bool pass = consistent && first_reported == 19 && reclaimed_hidden && flat_empty && flat_replay_empty;
    return {pass, fmt("first reported at (%d,0), p(18,0)=%.4f p(19,0)=%.4f, reclaimed score (%llu,%llu) hidden=%d, "
                      "flat runs empty=%d",
                      first_reported, leak_probability({18, 0}), leak_probability({19, 0}),
                      (unsigned long long)reclaimed.mallocs, (unsigned long long)reclaimed.frees, reclaimed_hidden,
                      flat_empty && flat_replay_empty)};
}

Outcome cpu_attribution() {
    const Callsite site("app.py", 10);
    CpuAttributor a;
    for (int i = 0; i < 100; ++i) {
        TimerSample s;
        s.quantum_ns = 10 * kMs;
        s.elapsed_virtual_ns = 50 * kMs;
        s.main_stack = {Frame{site, true}};
        a.on_timer_sample(s);
    }
    const CpuCounters c = a.counters().at(site);
    const std::string managed = fmt("%.3f", 100.0 * double(c.managed_ns) / double(c.total_ns()));
    const std::string native = fmt("%.3f", 100.0 * double(c.native_ns) / double(c.total_ns()));
    const bool split = managed == "20.000" && native == "80.000" && c.managed_ns * 4 == c.native_ns;

    // Conservation through the report, with ns-granular random delays.
    std::mt19937_64 rng(11);
    TimerLog log;
    std::int64_t sum_t = 0;
    const Callsite sites[] = {Callsite("a.py", 1), Callsite("b.py", 2), Callsite("c.so", 3)};
    for (int i = 0; i < 1000; ++i) {
        TimerSample s;
        s.quantum_ns = 10 * kMs;
        s.elapsed_virtual_ns = static_cast<std::int64_t>(rng() % (80 * kMs));
        const Callsite& where = sites[rng() % 3];
        s.main_stack = {Frame{where, where.file != "c.so"}};
        sum_t += s.elapsed_virtual_ns;
        log.samples.push_back(s);
    }
    SampleFile empty;
    const ProfileDocument doc = parse_profile_json(render_json(aggregate(std::span<const SampleFile>(&empty, 1), &log)));
    double total_seconds = 0.0;
    for (const auto& row : doc.rows) {
        total_seconds += double(row.cpu.managed_ns + row.cpu.native_ns) / 1e9;
    }
    const double drift = std::abs(total_seconds - double(sum_t) / 1e9);
    const bool conserved = drift <= 1e-6 * double(2 * doc.rows.size());
    return {split && conserved, fmt("managed %s%% native %s%%, sum of rows %.6fs vs sum T %.9fs", managed.c_str(),
                                    native.c_str(), total_seconds, double(sum_t) / 1e9)};
}

Outcome copy_volume() {
    const std::uint64_t rate = 2 * kMiB;
    const std::uint64_t total = 1'000'000'000;
    const std::uint64_t chunk = 64 * 1024;
    const Callsite site("copy.c", 1);
    auto estimate = [&](std::optional<std::uint64_t> seed) {
        CopyVolumeTracker t(rate, seed);
        std::uint64_t left = total;
        std::uint64_t credited = 0;
        Nanos ts = 0;
        while (left > 0) {
            const std::uint64_t n = std::min(chunk, left);
            if (auto r = t.record_copy(n, site, ts++)) {
                credited += static_cast<std::uint64_t>(r->net_delta);
            }
            left -= n;
        }
        return credited;
    };
    double sum = 0.0;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        const double e = double(estimate(seed));
        sum += e;
        worst = std::max(worst, std::abs(e - double(total)) / double(total));
    }
    const double mean_error = std::abs(sum / 30.0 - double(total)) / double(total);
    const std::uint64_t det = estimate(std::nullopt);
    const bool exact = det == total / rate * rate;
    return {mean_error < 0.02 && exact, fmt("mean of 30 seeds off by %.3f%% (worst single seed %.2f%%), "
                                            "deterministic credited %llu = floor(B/R)*R: %d",
                                            mean_error * 100.0, worst * 100.0, (unsigned long long)det, exact)};
}

Outcome log_size() {
    const LogSizes sizes = compare_log_sizes(churn_trace(), config_with(choose_sampling_threshold(kMiB)));
    const bool pass = sizes.threshold_log_bytes * 100 <= sizes.rate_log_bytes;
    return {pass, fmt("threshold log %zu bytes, rate log %zu bytes (%.0fx)", sizes.threshold_log_bytes,
                      sizes.rate_log_bytes, double(sizes.rate_log_bytes) / double(sizes.threshold_log_bytes))};
}

Outcome live_overhead() {
    auto loop_ns = [](const testutil::ProcessResult& p) { return p.exit_code == 0 ? std::stod(p.out) : -1.0; };
    // Interleaved runs; the fastest of each side is the least disturbed by
    // other load on the machine.
    std::vector<double> plain;
    std::vector<double> profiled;
    for (int i = 0; i < 5; ++i) {
        plain.push_back(loop_ns(testutil::run_process({HS_BENCH, "10000000"})));
        profiled.push_back(
            loop_ns(run_profiled({HS_BENCH, "10000000"}, scratch().file("bench" + std::to_string(i) + ".samples"))));
    }
    std::sort(plain.begin(), plain.end());
    std::sort(profiled.begin(), profiled.end());
    const double ratio = profiled[0] / plain[0];
    const bool pass = plain[0] > 0 && profiled[0] > 0 && ratio <= 3.0;
    return {pass, fmt("best of 5: unprofiled %.3fs, profiled %.3fs, slowdown %.2fx (medians %.3fs / %.3fs)",
                      plain[0] / 1e9, profiled[0] / 1e9, ratio, plain[2] / 1e9, profiled[2] / 1e9)};
}

Outcome reentrancy() {
    const auto stress = run_profiled({HS_STRESS}, scratch().file("stress.samples"));
    const std::string embed_out = scratch().file("embed.samples");
    live_sample_files().push_back(embed_out);
    const auto embed = testutil::run_process(
        {HS_CLI, "run", "--out", embed_out, "--timer-out", scratch().file("embed.timer"), "--library", HS_PRELOAD, "--",
         HS_EMBED});
    std::uint64_t reentrant = 0;
    std::uint64_t guarded = 0;
    std::uint64_t records = 0;
    std::size_t files = 0;
    bool complete = true;
    for (const auto& path : live_sample_files()) {
        const SampleFile f = read_sample_file(path);
        if (!f.footer) {
            complete = false;
            continue;
        }
        ++files;
        reentrant += f.footer->reentrant_records;
        guarded += f.footer->guarded_calls;
        records += f.records.size();
    }
    const bool pass = complete && reentrant == 0 && guarded > 0 && stress.exit_code == 0 && embed.exit_code == 0 &&
                      embed.out == "active 1\n";
    return {pass, fmt("%zu live sample files, %llu records, reentrant_records=%llu, guarded internal calls=%llu, "
                      "stress exit %d",
                      files, (unsigned long long)records, (unsigned long long)reentrant, (unsigned long long)guarded,
                      stress.exit_code)};
}

Outcome succession_grid() {
    std::uint64_t bad = 0;
    std::string where;
    auto violation = [&](bool failed, std::uint64_t m, std::uint64_t f, const char* what) {
        if (failed) {
            ++bad;
            if (where.size() < 200) {
                where += fmt(" %s at (%llu,%llu) p=%.4f;", what, (unsigned long long)m, (unsigned long long)f,
                             leak_probability({m, f}));
            }
        }
    };
    for (std::uint64_t f = 0; f <= 100; ++f) {
        for (std::uint64_t m = f; m <= 100; ++m) {
            const double p = leak_probability({m, f});
            violation(!(p >= 0.0 && p <= 1.0), m, f, "out of range");
            violation(std::abs(p - oracle::succession_as_printed(double(m), double(f))) > 1e-12, m, f, "oracle mismatch");
            violation(m > f && p < leak_probability({m - 1, f}), m, f, "decreasing in mallocs");
            violation(f > 0 && p > leak_probability({m, f - 1}), m, f, "increasing in frees");
            violation(m == f && p != 0.0, m, f, "(m,m) not 0");
        }
    }
    return {bad == 0, fmt("5151 grid points, violations=%llu%s", (unsigned long long)bad, where.c_str())};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"sampling reduction on churn", sampling_reduction},
        {"footprint accuracy", footprint_accuracy},
        {"reconstruction bound", reconstruction_bound},
        {"leak detection", leak_detection},
        {"CPU attribution", cpu_attribution},
        {"copy-volume estimator", copy_volume},
        {"log size", log_size},
        {"live overhead", live_overhead},
        {"reentrancy", reentrancy},
        {"rule-of-succession grid", succession_grid},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
