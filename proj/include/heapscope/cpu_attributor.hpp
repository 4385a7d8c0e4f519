/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_CPU_ATTRIBUTOR_HPP
#define HEAPSCOPE_CPU_ATTRIBUTOR_HPP

#include <cstdint>
#include <map>
#include <mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "heapscope/core_model.hpp"

namespace heapscope {

inline constexpr std::int64_t kNanosPerSecond = 1'000'000'000;

/// Managed/native time for one callsite. Held as integer nanoseconds so
/// sums are exact; both fields only ever grow.
struct CpuCounters {
    std::int64_t managed_ns = 0;
    std::int64_t native_ns = 0;

    double managed_seconds() const { return static_cast<double>(managed_ns) / kNanosPerSecond; }
    double native_seconds() const { return static_cast<double>(native_ns) / kNanosPerSecond; }
    std::int64_t total_ns() const { return managed_ns + native_ns; }

    friend bool operator==(const CpuCounters&, const CpuCounters&) = default;
};

struct Frame {
    Callsite callsite;
    bool in_profiled_code = false;

    friend bool operator==(const Frame&, const Frame&) = default;
};

enum class ThreadStatus : std::uint8_t { executing, sleeping };

struct ThreadSnapshot {
    std::uint64_t thread = 0;
    ThreadStatus status = ThreadStatus::executing;
    Callsite callsite;
    // Blocked inside a call into native code.
    bool in_call = false;

    friend bool operator==(const ThreadSnapshot&, const ThreadSnapshot&) = default;
};

struct TimerSample {
    std::int64_t elapsed_virtual_ns = 0;
    std::int64_t quantum_ns = 0;
    // Outermost first.
    std::vector<Frame> main_stack;
    std::vector<ThreadSnapshot> threads;

    friend bool operator==(const TimerSample&, const TimerSample&) = default;
};

std::int64_t seconds_to_nanos(double seconds);

/// Innermost frame inside profiled code, or Callsite::foreign() when the
/// stack has none. Throws std::invalid_argument for an empty stack.
Callsite resolve_attribution(std::span<const Frame> stack);

/// Delay-based attribution: on each timer sample the main thread's callsite
/// is credited min(T, q) managed and max(T - q, 0) native; other executing
/// threads are credited T, to native when blocked in a call.
class CpuAttributor {
public:
    void on_timer_sample(const TimerSample& sample);

    // Visible to every sample processed after the call returns.
    void set_thread_status(std::uint64_t thread, ThreadStatus status);
    ThreadStatus thread_status(std::uint64_t thread) const;

    const std::map<Callsite, CpuCounters>& counters() const { return counters_; }
    std::int64_t main_elapsed_ns() const { return main_elapsed_ns_; }
    std::int64_t main_attributed_ns() const { return main_attributed_ns_; }
    std::uint64_t samples_processed() const { return samples_; }

private:
    std::map<Callsite, CpuCounters> counters_;
    mutable std::mutex status_mutex_;
    std::unordered_map<std::uint64_t, ThreadStatus> status_;
    std::int64_t main_elapsed_ns_ = 0;
    std::int64_t main_attributed_ns_ = 0;
    std::uint64_t samples_ = 0;
};

}  // namespace heapscope

#endif  // HEAPSCOPE_CPU_ATTRIBUTOR_HPP
