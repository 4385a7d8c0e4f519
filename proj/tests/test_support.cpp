/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "heapscope/env_config.hpp"
#include "heapscope/live_cpu.hpp"
#include "heapscope/sample_file.hpp"
#include "heapscope/symbol_map.hpp"

using namespace heapscope;

namespace {

EnvLookup env_of(std::map<std::string, std::string> vars) {
    return [vars = std::move(vars)](const char* name) -> const char* {
        auto it = vars.find(name);
        return it == vars.end() ? nullptr : it->second.c_str();
    };
}

}  // namespace

TEST_CASE("settings_from_env defaults") {
    const ShimSettings s = settings_from_env(env_of({}), 42);
    CHECK(s.config.threshold_bytes == kDefaultThresholdBytes);
    CHECK(s.config.output_path == "heapscope-42.samples");
    CHECK_FALSE(s.config.deterministic_rng_seed.has_value());
    CHECK_FALSE(s.symbol_map_path.has_value());
    CHECK_FALSE(s.timer_log_path.has_value());
    CHECK(s.problems.empty());
}

TEST_CASE("settings_from_env reads every variable") {
    const ShimSettings s = settings_from_env(env_of({{"HEAPSCOPE_OUT", "/tmp/x-%p-%p.s"},
                                                     {"HEAPSCOPE_THRESHOLD", "1048576"},
                                                     {"HEAPSCOPE_COPY_MULTIPLE", "3"},
                                                     {"HEAPSCOPE_SEED", "17"},
                                                     {"HEAPSCOPE_QUANTUM", "0.02"},
                                                     {"HEAPSCOPE_SYMBOLS", "/tmp/map"},
                                                     {"HEAPSCOPE_TIMER_OUT", "/tmp/t-%p"}}),
                                             7);
    CHECK(s.config.output_path == "/tmp/x-7-7.s");
    CHECK(s.config.threshold_bytes == 1048583);
    CHECK(s.config.copy_rate_bytes() == 3 * 1048583);
    CHECK(s.config.deterministic_rng_seed == 17);
    CHECK(s.config.quantum_seconds == doctest::Approx(0.02));
    CHECK(s.symbol_map_path == "/tmp/map");
    CHECK(s.timer_log_path == "/tmp/t-7");
    CHECK(s.problems.empty());
    CHECK_NOTHROW(s.config.validate());
}

TEST_CASE("settings_from_env falls back on bad values") {
    const ShimSettings s = settings_from_env(env_of({{"HEAPSCOPE_THRESHOLD", "lots"},
                                                     {"HEAPSCOPE_COPY_MULTIPLE", "0"},
                                                     {"HEAPSCOPE_SEED", "-"},
                                                     {"HEAPSCOPE_QUANTUM", "-1"}}),
                                             1);
    CHECK(s.config.threshold_bytes == kDefaultThresholdBytes);
    CHECK(s.config.copy_rate_multiple == ProfilerConfig{}.copy_rate_multiple);
    CHECK_FALSE(s.config.deterministic_rng_seed.has_value());
    CHECK(s.problems.size() == 4);
    // Tiny thresholds still yield a valid prime.
    CHECK(settings_from_env(env_of({{"HEAPSCOPE_THRESHOLD", "1"}}), 1).config.threshold_bytes == 2);
}

TEST_CASE("expand_pid") {
    CHECK(expand_pid("a%pb", 12) == "a12b");
    CHECK(expand_pid("plain", 12) == "plain");
    CHECK(expand_pid("%p%p", 3) == "33");
}

TEST_CASE("symbol map parse and resolve") {
    std::istringstream in(
        "# module start end file line\n"
        "libapp.so\t0x1000\t0x1100\tapp.c\t10\n"
        "libapp.so\t1100\t1200\tapp.c\t20\n"
        "\n"
        "other\t0\t10\tother.c\t1\n");
    const SymbolMap map = SymbolMap::parse(in, "m");
    CHECK(map.size() == 3);
    CHECK(map.resolve("libapp.so", 0x1000) == Callsite("app.c", 10));
    CHECK(map.resolve("libapp.so", 0x10ff) == Callsite("app.c", 10));
    CHECK(map.resolve("libapp.so", 0x1100) == Callsite("app.c", 20));
    CHECK_FALSE(map.resolve("libapp.so", 0x1200).has_value());
    CHECK_FALSE(map.resolve("libapp.so", 0xfff).has_value());
    CHECK_FALSE(map.resolve("libother.so", 0x1000).has_value());
    CHECK(map.resolve("other", 9) == Callsite("other.c", 1));
}

TEST_CASE("symbol map errors") {
    auto error_of = [](const std::string& text) -> std::string {
        std::istringstream in(text);
        try {
            SymbolMap::parse(in, "syms");
        } catch (const FormatError& e) {
            return e.what();
        }
        return "";
    };
    CHECK(error_of("a\t10\t5\tf\t1\n").starts_with("syms:1:"));
    CHECK(error_of("# ok\na\t1\t5\tf\t0\n").starts_with("syms:2:"));
    CHECK(error_of("a\tzz\t5\tf\t1\n").starts_with("syms:1:"));
    CHECK(error_of("a 1 5 f 1\n").starts_with("syms:1:"));
    CHECK_THROWS_AS(SymbolMap::load("/nonexistent/heapscope.map"), FormatError);
    CHECK_FALSE(SymbolMap().resolve_address(reinterpret_cast<const void*>(&error_of)).has_value());
}

TEST_CASE("live sampler: safepoints without a pending expiry do nothing") {
    std::vector<TimerSample> got;
    LiveCpuSampler s(10'000'000, [&](const TimerSample& t) { got.push_back(t); });
    const Frame frame{Callsite("app.py", 3), true};
    CHECK_FALSE(s.safepoint(std::span<const Frame>(&frame, 1)));
    LiveCpuSampler::raise_pending();
    s.update_thread(9, Callsite("w.py", 4), true);
    s.set_thread_status(9, ThreadStatus::sleeping);
    CHECK(s.safepoint(std::span<const Frame>(&frame, 1)));
    REQUIRE(got.size() == 1);
    CHECK(got[0].quantum_ns == 10'000'000);
    CHECK(got[0].elapsed_virtual_ns >= 0);
    REQUIRE(got[0].main_stack.size() == 1);
    CHECK(got[0].main_stack[0] == frame);
    REQUIRE(got[0].threads.size() == 1);
    CHECK(got[0].threads[0].status == ThreadStatus::sleeping);
    CHECK(got[0].threads[0].callsite == Callsite("w.py", 4));
    s.forget_thread(9);
    LiveCpuSampler::raise_pending();
    CHECK(s.safepoint({}));
    CHECK(got.back().threads.empty());
    CHECK(s.samples() == 2);
}

TEST_CASE("live sampler: busy loop yields samples near the quantum") {
    std::vector<TimerSample> got;
    LiveCpuSampler s(5'000'000, [&](const TimerSample& t) { got.push_back(t); });
    s.start();
    LiveCpuSampler other(5'000'000, nullptr);
    CHECK_THROWS_AS(other.start(), std::runtime_error);
    const Frame frame{Callsite("loop.py", 1), true};
    const std::int64_t begin = process_virtual_time_ns();
    volatile std::uint64_t sink = 0;
    while (process_virtual_time_ns() - begin < 200'000'000) {
        for (int i = 0; i < 1000; ++i) {
            sink = sink + static_cast<std::uint64_t>(i);
        }
        s.safepoint(std::span<const Frame>(&frame, 1));
    }
    s.stop();
    // Loose bounds: the kernel's virtual timer is tick-granular.
    CHECK(got.size() >= 10);
    std::int64_t total = 0;
    for (const auto& t : got) {
        total += t.elapsed_virtual_ns;
    }
    CHECK(total <= process_virtual_time_ns() - begin + 20'000'000);
}
