/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

// End-to-end runs of the preloaded shim and the heapscope CLI.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "heapscope/report.hpp"
#include "heapscope/sample_file.hpp"
#include "heapscope/timer_log.hpp"
#include "subprocess.hpp"
#include "test_util.hpp"

using namespace heapscope;
using testutil::run_process;

namespace {

const CallsiteStats* find_row(const ProfileDocument& doc, const Callsite& site) {
    auto it = std::find_if(doc.rows.begin(), doc.rows.end(), [&](const auto& r) { return r.callsite == site; });
    return it == doc.rows.end() ? nullptr : &*it;
}

}  // namespace

TEST_CASE("allocator stress under the shim is transparent") {
    testutil::TempDir dir;
    const auto r = run_process({HS_STRESS}, {{"LD_PRELOAD", HS_PRELOAD}, {"HEAPSCOPE_OUT", dir.file("s.samples")},
                                             {"HEAPSCOPE_THRESHOLD", "65536"}});
    CHECK(r.exit_code == 0);
    CHECK(r.out == "failures 0\n");
    const SampleFile f = read_sample_file(dir.file("s.samples"));
    REQUIRE(f.footer.has_value());
    CHECK(f.footer->allocs > 400000);
    CHECK(f.footer->samples == f.records.size());
    CHECK(f.footer->reentrant_records == 0);
    CHECK(f.header.threshold_bytes == 65537);
    CHECK(f.warnings.empty());
}

TEST_CASE("run + report: embedder hook, domains and CPU columns") {
    testutil::TempDir dir;
    const std::string samples = dir.file("e.samples");
    const std::string timer = dir.file("e.timer");
    const auto run = run_process({HS_CLI, "run", "--out", samples, "--timer-out", timer, "--threshold", "1000000",
                                  "--library", HS_PRELOAD, "--", HS_EMBED});
    REQUIRE(run.exit_code == 0);
    CHECK(run.out == "active 1\n");

    const auto report = run_process({HS_CLI, "report", "--in", samples, "--timer-log", timer, "--json", "-"});
    REQUIRE(report.exit_code == 0);
    const ProfileDocument doc = parse_profile_json(report.out);
    CHECK(doc.config.threshold_bytes == 1000003);

    const CallsiteStats* managed = find_row(doc, Callsite("embed.py", 10));
    const CallsiteStats* kept = find_row(doc, Callsite("embed.py", 20));
    const CallsiteStats* busy = find_row(doc, Callsite("embed.py", 30));
    REQUIRE(managed != nullptr);
    REQUIRE(kept != nullptr);
    REQUIRE(busy != nullptr);
    CHECK(managed->managed_alloc_fraction > 0.9);
    CHECK(kept->managed_alloc_fraction < 0.1);
    CHECK(kept->peak_contribution > 50ULL << 20);
    // Line 30 spins without a safe point, so its time shows up as native.
    CHECK(busy->cpu.native_ns > busy->cpu.managed_ns);
    CHECK(doc.run.timer_samples > 10);

    const auto text = run_process({HS_CLI, "report", "--in", samples, "--sort", "peak_mem"});
    REQUIRE(text.exit_code == 0);
    CHECK(text.out.find("embed.py:20") != std::string::npos);
}

TEST_CASE("HEAPSCOPE_OUT expands %p and bad settings fall back") {
    testutil::TempDir dir;
    const auto r = run_process({HS_BLOCK}, {{"LD_PRELOAD", HS_PRELOAD},
                                            {"HEAPSCOPE_OUT", dir.file("run-%p.samples")},
                                            {"HEAPSCOPE_THRESHOLD", "lots"}});
    REQUIRE(r.exit_code == 0);
    std::vector<std::string> written;
    for (const auto& entry : std::filesystem::directory_iterator(dir.path())) {
        written.push_back(entry.path().filename().string());
    }
    REQUIRE(written.size() == 1);
    CHECK(written[0].starts_with("run-"));
    CHECK(written[0].find("%p") == std::string::npos);
    const SampleFile f = read_sample_file(dir.file(written[0]));
    CHECK(f.header.threshold_bytes == kDefaultThresholdBytes);
}

TEST_CASE("symbol map attributes return addresses") {
    testutil::TempDir dir;
    const std::string map = dir.file("bench.map");
    const std::string module = std::filesystem::path(HS_BENCH).filename().string();
    std::ofstream(map) << "# whole program\n" << module << "\t0\t0x10000000\tbench.c\t7\n";
    const auto r = run_process({HS_BENCH, "20000"}, {{"LD_PRELOAD", HS_PRELOAD},
                                                     {"HEAPSCOPE_OUT", dir.file("b.samples")},
                                                     {"HEAPSCOPE_THRESHOLD", "4099"},
                                                     {"HEAPSCOPE_SYMBOLS", map}});
    REQUIRE(r.exit_code == 0);
    const SampleFile f = read_sample_file(dir.file("b.samples"));
    REQUIRE_FALSE(f.records.empty());
    const auto mapped = std::count_if(f.records.begin(), f.records.end(),
                                      [](const SampleRecord& s) { return s.callsite == Callsite("bench.c", 7); });
    CHECK(mapped * 2 > static_cast<long>(f.records.size()));
}

TEST_CASE("unprofiled helper runs without the shim") {
    const auto r = run_process({HS_EMBED}, {{"LD_PRELOAD", ""}});
    CHECK(r.exit_code == 0);
    CHECK(r.out == "active 0\n");
}

TEST_CASE("CLI errors exit non-zero") {
    testutil::TempDir dir;
    const std::string bad = dir.file("bad.samples");
    std::ofstream(bad) << "#heapscope\t1\tthreshold=101\tcopy_rate=202\tseed=none\tstart_ns=0\ngrowth\tx\n";
    CHECK(run_process({HS_CLI, "report", "--in", bad}).exit_code != 0);
    CHECK(run_process({HS_CLI, "report", "--in", bad, "--sort", "size"}).exit_code != 0);
    CHECK(run_process({HS_CLI, "replay", "--generate", "spiral:n=3"}).exit_code != 0);
    CHECK(run_process({HS_CLI, "bogus"}).exit_code != 0);
}

TEST_CASE("replay subcommand") {
    testutil::TempDir dir;
    const auto r = run_process({HS_CLI, "replay", "--generate", "staircase:k=5,T=1048583", "--threshold", "1048576",
                                "--write-trace", dir.file("s.trace"), "--emit-json", dir.file("s.json")});
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("threshold samples 5\n") != std::string::npos);
    CHECK(r.out.find("max recon error   0\n") != std::string::npos);
    const auto again = run_process({HS_CLI, "replay", "--trace", dir.file("s.trace"), "--threshold", "1048583"});
    REQUIRE(again.exit_code == 0);
    CHECK(again.out == r.out);
    CHECK(std::filesystem::file_size(dir.file("s.json")) > 0);
}

TEST_CASE("a forked child leaves the parent's sample file intact") {
    testutil::TempDir dir;
    const auto r = run_process({HS_FORKER}, {{"LD_PRELOAD", HS_PRELOAD}, {"HEAPSCOPE_OUT", dir.file("f.samples")},
                                             {"HEAPSCOPE_THRESHOLD", "1048576"}});
    REQUIRE(r.exit_code == 0);
    CHECK(r.out == "child 0\n");
    const SampleFile f = read_sample_file(dir.file("f.samples"));
    REQUIRE(f.footer.has_value());
    CHECK(f.warnings.empty());
    // 16 MiB grown by the parent; the child's 32 MiB never shows up.
    CHECK(f.footer->peak_footprint >= 16ULL << 20);
    CHECK(f.footer->peak_footprint < 24ULL << 20);
}
