/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/env_config.hpp"

#include "heapscope/threshold_sampler.hpp"
#include "text_fields.hpp"

namespace heapscope {

std::string expand_pid(std::string path, long pid) {
    const std::string id = std::to_string(pid);
    for (std::size_t pos = path.find("%p"); pos != std::string::npos; pos = path.find("%p", pos + id.size())) {
        path.replace(pos, 2, id);
    }
    return path;
}

ShimSettings settings_from_env(const EnvLookup& lookup, long pid) {
    ShimSettings s;
    auto get = [&](const char* name) -> std::optional<std::string> {
        const char* v = lookup(name);
        if (v == nullptr || v[0] == '\0') {
            return std::nullopt;
        }
        return std::string(v);
    };
    auto positive = [&](const char* name) -> std::optional<std::uint64_t> {
        auto text = get(name);
        if (!text) {
            return std::nullopt;
        }
        auto v = detail::parse_int<std::uint64_t>(*text);
        if (!v || *v == 0) {
            s.problems.push_back(std::string(name) + "='" + *text + "' is not a positive integer; using default");
            return std::nullopt;
        }
        return v;
    };

    if (auto out = get("HEAPSCOPE_OUT")) {
        s.config.output_path = *out;
    }
    s.config.output_path = expand_pid(s.config.output_path, pid);

    if (auto t = positive("HEAPSCOPE_THRESHOLD")) {
        s.config.threshold_bytes = choose_sampling_threshold(std::max<std::uint64_t>(*t, 2));
    }
    if (auto m = positive("HEAPSCOPE_COPY_MULTIPLE")) {
        s.config.copy_rate_multiple = *m;
    }
    if (auto seed = get("HEAPSCOPE_SEED")) {
        if (auto v = detail::parse_int<std::uint64_t>(*seed)) {
            s.config.deterministic_rng_seed = *v;
        } else {
            s.problems.push_back("HEAPSCOPE_SEED='" + *seed + "' is not an integer; copy sampling is deterministic");
        }
    }
    if (auto q = get("HEAPSCOPE_QUANTUM")) {
        auto v = detail::parse_double(*q);
        if (v && *v > 0.0) {
            s.config.quantum_seconds = *v;
        } else {
            s.problems.push_back("HEAPSCOPE_QUANTUM='" + *q + "' is not a positive number; using default");
        }
    }
    s.symbol_map_path = get("HEAPSCOPE_SYMBOLS");
    if (auto timer = get("HEAPSCOPE_TIMER_OUT")) {
        s.timer_log_path = expand_pid(*timer, pid);
    }
    return s;
}

}  // namespace heapscope
