/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/live_cpu.hpp"

#include <signal.h>
#include <sys/resource.h>
#include <sys/time.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <string>
#include <stdexcept>
#include <vector>

namespace heapscope {

namespace {

std::atomic<bool> g_pending{false};
std::atomic<LiveCpuSampler*> g_active{nullptr};
struct sigaction g_previous_action {};

void on_vtalrm(int) {
    g_pending.store(true, std::memory_order_relaxed);
}

}  // namespace

std::int64_t process_virtual_time_ns() {
    rusage usage{};
    getrusage(RUSAGE_SELF, &usage);
    return static_cast<std::int64_t>(usage.ru_utime.tv_sec) * kNanosPerSecond +
           static_cast<std::int64_t>(usage.ru_utime.tv_usec) * 1000;
}

LiveCpuSampler::LiveCpuSampler(std::int64_t quantum_ns, Sink sink) : quantum_ns_(quantum_ns), sink_(std::move(sink)) {
    if (quantum_ns <= 0) {
        throw std::invalid_argument("timer quantum must be positive");
    }
}

LiveCpuSampler::~LiveCpuSampler() {
    stop();
}

void LiveCpuSampler::raise_pending() {
    g_pending.store(true, std::memory_order_relaxed);
}

void LiveCpuSampler::arm() {
    itimerval tv{};
    tv.it_value.tv_sec = quantum_ns_ / kNanosPerSecond;
    tv.it_value.tv_usec = (quantum_ns_ % kNanosPerSecond) / 1000;
    if (tv.it_value.tv_sec == 0 && tv.it_value.tv_usec == 0) {
        tv.it_value.tv_usec = 1;
    }
    setitimer(ITIMER_VIRTUAL, &tv, nullptr);
}

void LiveCpuSampler::start() {
    LiveCpuSampler* expected = nullptr;
    if (!g_active.compare_exchange_strong(expected, this)) {
        throw std::runtime_error("a live CPU sampler is already running");
    }
    struct sigaction action {};
    action.sa_handler = on_vtalrm;
    sigemptyset(&action.sa_mask);
    action.sa_flags = SA_RESTART;
    if (sigaction(SIGVTALRM, &action, &g_previous_action) != 0) {
        g_active.store(nullptr);
        throw std::runtime_error(std::string("sigaction(SIGVTALRM): ") + std::strerror(errno));
    }
    g_pending.store(false);
    last_virtual_ns_ = process_virtual_time_ns();
    running_ = true;
    arm();
}

void LiveCpuSampler::stop() {
    if (!running_) {
        return;
    }
    itimerval off{};
    setitimer(ITIMER_VIRTUAL, &off, nullptr);
    sigaction(SIGVTALRM, &g_previous_action, nullptr);
    running_ = false;
    g_active.store(nullptr);
}

bool LiveCpuSampler::safepoint(std::span<const Frame> main_stack) {
    if (!g_pending.exchange(false, std::memory_order_acquire)) {
        return false;
    }
    const std::int64_t now = process_virtual_time_ns();
    TimerSample sample;
    sample.elapsed_virtual_ns = std::max<std::int64_t>(now - last_virtual_ns_, 0);
    sample.quantum_ns = quantum_ns_;
    sample.main_stack.assign(main_stack.begin(), main_stack.end());
    {
        std::lock_guard lock(threads_mutex_);
        sample.threads.reserve(threads_.size());
        for (const auto& [tid, snapshot] : threads_) {
            sample.threads.push_back(snapshot);
        }
    }
    last_virtual_ns_ = now;
    samples_.fetch_add(1, std::memory_order_relaxed);
    if (sink_) {
        sink_(sample);
    }
    if (running_) {
        arm();
    }
    return true;
}

void LiveCpuSampler::update_thread(std::uint64_t thread, const Callsite& callsite, bool in_call) {
    std::lock_guard lock(threads_mutex_);
    ThreadSnapshot& snap = threads_[thread];
    snap.thread = thread;
    snap.callsite = callsite;
    snap.in_call = in_call;
}

void LiveCpuSampler::set_thread_status(std::uint64_t thread, ThreadStatus status) {
    std::lock_guard lock(threads_mutex_);
    auto [it, fresh] = threads_.try_emplace(thread);
    if (fresh) {
        it->second.thread = thread;
        it->second.callsite = Callsite::unknown();
    }
    it->second.status = status;
}

void LiveCpuSampler::forget_thread(std::uint64_t thread) {
    std::lock_guard lock(threads_mutex_);
    threads_.erase(thread);
}

}  // namespace heapscope
