/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "heapscope/env_config.hpp"
#include "heapscope/report.hpp"
#include "heapscope/sample_file.hpp"
#include "heapscope/threshold_sampler.hpp"
#include "heapscope/trace_replay.hpp"

#ifndef HEAPSCOPE_PRELOAD_PATH
#define HEAPSCOPE_PRELOAD_PATH "libheapscope.so"
#endif

namespace hs = heapscope;

namespace {

void write_output(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    out << text;
    if (!out.flush()) {
        throw std::runtime_error("failed writing " + path);
    }
}

struct ReportArgs {
    std::vector<std::string> inputs;
    std::optional<std::string> timer_log;
    std::string sort = "cpu";
    std::optional<std::string> json;
};

int run_report(const ReportArgs& args) {
    const hs::SortKey key = hs::parse_sort_key(args.sort);
    hs::ProfileDocument doc = hs::aggregate_paths(args.inputs, args.timer_log);
    for (const auto& w : doc.warnings) {
        std::cerr << "warning: " << w << '\n';
    }
    hs::sort_rows(doc, key);
    if (args.json) {
        write_output(*args.json, hs::render_json(doc));
        if (*args.json == "-") {
            return 0;
        }
    }
    std::cout << hs::render_text(doc, key);
    return 0;
}

struct ReplayArgs {
    std::optional<std::string> trace;
    std::optional<std::string> generate;
    std::optional<std::uint64_t> threshold;
    std::optional<std::uint64_t> seed;
    std::uint64_t copy_multiple = hs::kDefaultCopyRateMultiple;
    std::optional<std::string> emit_json;
    std::optional<std::string> write_trace;
};

int run_replay(const ReplayArgs& args) {
    if (args.trace.has_value() == args.generate.has_value()) {
        throw CLI::ValidationError("replay", "exactly one of --trace or --generate is required");
    }
    std::vector<hs::AllocEvent> trace;
    if (args.trace) {
        trace = hs::read_trace(*args.trace);
    } else {
        hs::TraceSpec spec = hs::parse_trace_spec(*args.generate);
        trace = hs::generate_trace(spec);
    }
    if (args.write_trace) {
        std::ostringstream text;
        hs::write_trace(text, trace);
        write_output(*args.write_trace, text.str());
    }

    hs::ProfilerConfig config;
    if (args.threshold) {
        config.threshold_bytes = hs::choose_sampling_threshold(std::max<std::uint64_t>(*args.threshold, 2));
    }
    config.copy_rate_multiple = args.copy_multiple;
    config.deterministic_rng_seed = args.seed;
    const hs::ReplayResult result = hs::replay(trace, config);

    if (args.emit_json) {
        write_output(*args.emit_json, hs::replay_result_json(result));
        if (*args.emit_json == "-") {
            return 0;
        }
    }
    const std::size_t threshold_log = hs::threshold_log_text(result, config).size();
    const std::size_t rate_log = hs::rate_log_text(result, config).size();
    std::printf("events            %zu (alloc %llu, free %llu, copy %llu)\n", trace.size(),
                static_cast<unsigned long long>(result.alloc_events),
                static_cast<unsigned long long>(result.free_events),
                static_cast<unsigned long long>(result.copy_events));
    std::printf("threshold         %llu\n", static_cast<unsigned long long>(result.threshold));
    std::printf("threshold samples %llu\n", static_cast<unsigned long long>(result.threshold_samples));
    std::printf("rate samples      %llu\n", static_cast<unsigned long long>(result.rate_samples));
    if (result.threshold_samples > 0) {
        std::printf("sample ratio      %.2fx\n",
                    static_cast<double>(result.rate_samples) / static_cast<double>(result.threshold_samples));
    }
    std::printf("log bytes         threshold %zu, rate %zu\n", threshold_log, rate_log);
    std::printf("peak              true %llu, sampled %llu\n", static_cast<unsigned long long>(result.true_peak),
                static_cast<unsigned long long>(result.sampled_peak));
    std::printf("max recon error   %llu\n", static_cast<unsigned long long>(result.max_reconstruction_error));
    for (const auto& entry : result.leak_report) {
        std::printf("leak              %s  p=%.4f  %.3f MB/s  (%llu mallocs, %llu frees)\n",
                    entry.callsite.to_string().c_str(), entry.probability, entry.leak_rate,
                    static_cast<unsigned long long>(entry.score.mallocs),
                    static_cast<unsigned long long>(entry.score.frees));
    }
    return 0;
}

struct RunArgs {
    std::string out = "heapscope-%p.samples";
    std::optional<std::uint64_t> threshold;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> timer_out;
    std::optional<std::string> symbols;
    std::string library = HEAPSCOPE_PRELOAD_PATH;
    std::vector<std::string> command;
};

int run_program(const RunArgs& args) {
    if (args.command.empty()) {
        throw CLI::ValidationError("run", "missing command");
    }
    ::setenv("HEAPSCOPE_OUT", args.out.c_str(), 1);
    if (args.threshold) {
        ::setenv("HEAPSCOPE_THRESHOLD", std::to_string(*args.threshold).c_str(), 1);
    }
    if (args.seed) {
        ::setenv("HEAPSCOPE_SEED", std::to_string(*args.seed).c_str(), 1);
    }
    if (args.timer_out) {
        ::setenv("HEAPSCOPE_TIMER_OUT", args.timer_out->c_str(), 1);
    }
    if (args.symbols) {
        ::setenv("HEAPSCOPE_SYMBOLS", args.symbols->c_str(), 1);
    }
    std::string preload = args.library;
    if (const char* existing = std::getenv("LD_PRELOAD"); existing != nullptr && existing[0] != '\0') {
        preload += ":";
        preload += existing;
    }
    ::setenv("LD_PRELOAD", preload.c_str(), 1);
    std::vector<char*> argv;
    for (const auto& a : args.command) {
        argv.push_back(const_cast<char*>(a.c_str()));
    }
    argv.push_back(nullptr);
    ::execvp(argv[0], argv.data());
    std::perror(("heapscope: " + args.command.front()).c_str());
    return 127;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"heapscope: threshold-sampling memory and CPU profiler"};
    app.require_subcommand(1);

    ReportArgs report;
    auto* report_cmd = app.add_subcommand("report", "Aggregate sample files into a per-line profile");
    report_cmd->add_option("--in", report.inputs, "Sample files")->required()->expected(1, -1);
    report_cmd->add_option("--timer-log", report.timer_log, "Timer sample log for CPU columns");
    report_cmd->add_option("--sort", report.sort, "cpu, peak_mem, copy or leak_rate")->capture_default_str();
    report_cmd->add_option("--json", report.json, "Also write JSON to this path ('-' for stdout only)");

    ReplayArgs replay;
    auto* replay_cmd = app.add_subcommand("replay", "Replay a trace through both samplers and the exact oracle");
    replay_cmd->add_option("--trace", replay.trace, "Trace file");
    replay_cmd->add_option("--generate", replay.generate, "Generator spec, e.g. churn:pairs=1000000,size=16384");
    replay_cmd->add_option("--threshold", replay.threshold, "Threshold bytes (rounded up to a prime)");
    replay_cmd->add_option("--seed", replay.seed, "Seed for the rate samplers (default: deterministic)");
    replay_cmd->add_option("--copy-multiple", replay.copy_multiple, "Copy rate as a multiple of the threshold")
        ->check(CLI::PositiveNumber);
    replay_cmd->add_option("--emit-json", replay.emit_json, "Write the replay result as JSON ('-' for stdout)");
    replay_cmd->add_option("--write-trace", replay.write_trace, "Write the replayed trace to this path");

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Run a command with the shim preloaded");
    run_cmd->add_option("--out", run.out, "Sample file path (%p is the pid)")->capture_default_str();
    run_cmd->add_option("--threshold", run.threshold, "Threshold bytes");
    run_cmd->add_option("--seed", run.seed, "Copy sampler seed");
    run_cmd->add_option("--timer-out", run.timer_out, "Timer log path (enables CPU sampling)");
    run_cmd->add_option("--symbols", run.symbols, "Symbol map for return-address attribution");
    run_cmd->add_option("--library", run.library, "Path to libheapscope.so")->capture_default_str();
    run_cmd->add_option("command", run.command, "Command and arguments")->required()->expected(1, -1);
    run_cmd->prefix_command();

    CLI11_PARSE(app, argc, argv);

    try {
        if (report_cmd->parsed()) {
            return run_report(report);
        }
        if (replay_cmd->parsed()) {
            return run_replay(replay);
        }
        if (run_cmd->parsed()) {
            return run_program(run);
        }
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "heapscope: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
