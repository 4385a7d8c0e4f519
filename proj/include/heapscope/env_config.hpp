/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_ENV_CONFIG_HPP
#define HEAPSCOPE_ENV_CONFIG_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "heapscope/core_model.hpp"

namespace heapscope {

using EnvLookup = std::function<const char*(const char*)>;

struct ShimSettings {
    ProfilerConfig config;
    std::optional<std::string> symbol_map_path;   // HEAPSCOPE_SYMBOLS
    std::optional<std::string> timer_log_path;    // HEAPSCOPE_TIMER_OUT
    std::vector<std::string> problems;            // ignored or invalid variables
};

/// Reads HEAPSCOPE_OUT, HEAPSCOPE_THRESHOLD (rounded up to the next prime),
/// HEAPSCOPE_COPY_MULTIPLE, HEAPSCOPE_SEED, HEAPSCOPE_QUANTUM (seconds),
/// HEAPSCOPE_SYMBOLS and HEAPSCOPE_TIMER_OUT. Invalid values fall back to the
/// defaults and are listed in `problems`; the output path has every "%p"
/// replaced by `pid`.
ShimSettings settings_from_env(const EnvLookup& lookup, long pid);

std::string expand_pid(std::string path, long pid);

}  // namespace heapscope

#endif  // HEAPSCOPE_ENV_CONFIG_HPP
