/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_LIVE_CPU_HPP
#define HEAPSCOPE_LIVE_CPU_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <span>

#include "heapscope/cpu_attributor.hpp"

namespace heapscope {

/// User CPU time of the whole process, in nanoseconds.
std::int64_t process_virtual_time_ns();

/// Virtual-time timer whose handling is deferred to embedder safe points.
///
/// The SIGVTALRM handler only raises a flag. The next safepoint() call
/// measures T, the virtual time since the previous handled sample, hands a
/// TimerSample to the sink and re-arms the timer for one more quantum. Time
/// the program spends without reaching a safe point (native code) therefore
/// shows up as T - q.
///
/// At most one sampler may be started per process.
class LiveCpuSampler {
public:
    using Sink = std::function<void(const TimerSample&)>;

    LiveCpuSampler(std::int64_t quantum_ns, Sink sink);
    ~LiveCpuSampler();
    LiveCpuSampler(const LiveCpuSampler&) = delete;
    LiveCpuSampler& operator=(const LiveCpuSampler&) = delete;

    // Throws std::runtime_error if another sampler is running or the timer
    // cannot be armed.
    void start();
    void stop();

    /// Returns true when a pending timer expiry was turned into a sample.
    bool safepoint(std::span<const Frame> main_stack);

    // Thread registry consulted when building snapshots. Unknown threads
    // are created on first mention, executing.
    void update_thread(std::uint64_t thread, const Callsite& callsite, bool in_call);
    void set_thread_status(std::uint64_t thread, ThreadStatus status);
    void forget_thread(std::uint64_t thread);

    std::int64_t quantum_ns() const { return quantum_ns_; }
    std::uint64_t samples() const { return samples_.load(std::memory_order_relaxed); }

    // For tests and embedders without signals: mark an expiry as pending.
    static void raise_pending();

private:
    void arm();

    std::int64_t quantum_ns_;
    Sink sink_;
    bool running_ = false;
    std::int64_t last_virtual_ns_ = 0;
    std::atomic<std::uint64_t> samples_{0};
    std::mutex threads_mutex_;
    std::map<std::uint64_t, ThreadSnapshot> threads_;
};

}  // namespace heapscope

#endif  // HEAPSCOPE_LIVE_CPU_HPP
