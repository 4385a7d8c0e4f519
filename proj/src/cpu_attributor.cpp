/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/cpu_attributor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace heapscope {

std::int64_t seconds_to_nanos(double seconds) {
    return static_cast<std::int64_t>(std::llround(seconds * static_cast<double>(kNanosPerSecond)));
}

Callsite resolve_attribution(std::span<const Frame> stack) {
    if (stack.empty()) {
        throw std::invalid_argument("cannot attribute an empty stack");
    }
    for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
        if (it->in_profiled_code) {
            return it->callsite;
        }
    }
    return Callsite::foreign();
}

void CpuAttributor::on_timer_sample(const TimerSample& sample) {
    if (sample.elapsed_virtual_ns < 0 || sample.quantum_ns <= 0) {
        throw std::invalid_argument("timer sample needs elapsed >= 0 and quantum > 0");
    }
    const std::int64_t elapsed = sample.elapsed_virtual_ns;
    const std::int64_t quantum = sample.quantum_ns;

    const Callsite main = sample.main_stack.empty() ? Callsite::foreign() : resolve_attribution(sample.main_stack);
    CpuCounters& counters = counters_[main];
    const std::int64_t managed = std::min(elapsed, quantum);
    const std::int64_t native = std::max<std::int64_t>(elapsed - quantum, 0);
    counters.managed_ns += managed;
    counters.native_ns += native;
    main_elapsed_ns_ += elapsed;
    main_attributed_ns_ += managed + native;

    std::lock_guard lock(status_mutex_);
    for (const ThreadSnapshot& snapshot : sample.threads) {
        auto known = status_.find(snapshot.thread);
        const ThreadStatus status = known == status_.end() ? snapshot.status : known->second;
        if (status != ThreadStatus::executing) {
            continue;
        }
        CpuCounters& thread_counters = counters_[snapshot.callsite];
        if (snapshot.in_call) {
            thread_counters.native_ns += elapsed;
        } else {
            thread_counters.managed_ns += elapsed;
        }
    }
    ++samples_;
}

void CpuAttributor::set_thread_status(std::uint64_t thread, ThreadStatus status) {
    std::lock_guard lock(status_mutex_);
    status_[thread] = status;
}

ThreadStatus CpuAttributor::thread_status(std::uint64_t thread) const {
    std::lock_guard lock(status_mutex_);
    auto it = status_.find(thread);
    return it == status_.end() ? ThreadStatus::executing : it->second;
}

}  // namespace heapscope
