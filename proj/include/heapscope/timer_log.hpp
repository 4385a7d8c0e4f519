/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_TIMER_LOG_HPP
#define HEAPSCOPE_TIMER_LOG_HPP

#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "heapscope/cpu_attributor.hpp"

// Timer log layout, same framing as the sample file:
//
//   #heapscope-timer  1  quantum_ns=Q
//   sample  elapsed_ns  quantum_ns  n_frames  n_threads
//   frame   in_profiled(0|1)  file  line                        (n_frames lines, outermost first)
//   thread  tid  executing|sleeping  in_call(0|1)  file  line    (n_threads lines)

namespace heapscope {

inline constexpr int kTimerFormatVersion = 1;

std::string format_timer_header(std::int64_t quantum_ns);
std::string format_timer_sample(const TimerSample& sample);

struct TimerLog {
    std::int64_t quantum_ns = 0;
    std::vector<TimerSample> samples;
    std::vector<std::string> warnings;
};

/// Throws FormatError on malformed input; an incomplete trailing sample
/// group is dropped with a warning.
TimerLog parse_timer_log(std::istream& in, std::string_view name);
TimerLog read_timer_log(const std::string& path);

}  // namespace heapscope

#endif  // HEAPSCOPE_TIMER_LOG_HPP
