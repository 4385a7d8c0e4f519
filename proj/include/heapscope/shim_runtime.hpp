/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_SHIM_RUNTIME_HPP
#define HEAPSCOPE_SHIM_RUNTIME_HPP

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>

#include "heapscope/copy_volume.hpp"
#include "heapscope/core_model.hpp"
#include "heapscope/leak_detector.hpp"
#include "heapscope/rate_sampler.hpp"
#include "heapscope/symbol_map.hpp"
#include "heapscope/threshold_sampler.hpp"

namespace heapscope {

/// The allocator the shim forwards to. In the preloaded library these are
/// the next definitions in symbol lookup order; tests plug in fakes.
struct UnderlyingAllocator {
    void* (*malloc)(std::size_t) = nullptr;
    void (*free)(void*) = nullptr;
    void* (*calloc)(std::size_t, std::size_t) = nullptr;
    void* (*realloc)(void*, std::size_t) = nullptr;
    int (*posix_memalign)(void**, std::size_t, std::size_t) = nullptr;
    void* (*aligned_alloc)(std::size_t, std::size_t) = nullptr;
    void* (*memalign)(std::size_t, std::size_t) = nullptr;
    std::size_t (*usable_size)(void*) = nullptr;
    void* (*memcpy)(void*, const void*, std::size_t) = nullptr;
};

/// Embedder attribution hook: fills file/line for the calling thread and
/// returns nonzero, or returns 0 to fall through to the symbol map.
using AttributionHook = int (*)(const char** file, unsigned* line);

/// Per-thread "inside the profiler" flag. While set, every interposed entry
/// point forwards straight to the underlying allocator.
class ReentrancyGuard {
public:
    ReentrancyGuard() noexcept;
    ~ReentrancyGuard();
    ReentrancyGuard(const ReentrancyGuard&) = delete;
    ReentrancyGuard& operator=(const ReentrancyGuard&) = delete;

    /// False when the flag was already set by an outer frame on this thread.
    bool entered() const noexcept { return entered_; }
    static bool active() noexcept;

private:
    bool entered_;
};

// Managed/native tagging for the calling thread (default native). An
// embedding runtime brackets its own allocator calls with push/pop.
void push_domain(DomainTag tag) noexcept;
void pop_domain() noexcept;
DomainTag current_domain() noexcept;

struct ShimCounters {
    std::uint64_t allocs = 0;
    std::uint64_t frees = 0;
    std::uint64_t copies = 0;
    std::uint64_t records_written = 0;
    std::uint64_t peak_footprint = 0;
    std::uint64_t footprint = 0;
    std::uint64_t unknown_frees = 0;
    std::uint64_t guarded_calls = 0;
    std::uint64_t reentrant_records = 0;
    std::uint64_t ring_waits = 0;  // crossings that waited for a free slot
    std::uint64_t write_errors = 0;
};

/// Allocation/copy interposition logic behind the preloadable library.
///
/// Entry points may be called concurrently. Counter updates run under a
/// short spinlock that is never held across a call into the underlying
/// allocator. Crossings reserve a slot in a bounded ring while the lock is
/// held (fixing their order), are filled in by the triggering thread, and
/// are written by whichever thread wins a try-lock on the drain side. When
/// the ring is full a thread helps drain and yields until its slot frees;
/// no lock is held while it waits.
class ShimRuntime {
public:
    /// Takes ownership of output_fd and writes the header immediately.
    ShimRuntime(const ProfilerConfig& config, const UnderlyingAllocator& underlying, int output_fd);
    ~ShimRuntime();
    ShimRuntime(const ShimRuntime&) = delete;
    ShimRuntime& operator=(const ShimRuntime&) = delete;

    void* malloc(std::size_t size, const void* caller);
    void free(void* ptr, const void* caller);
    void* calloc(std::size_t count, std::size_t size, const void* caller);
    void* realloc(void* ptr, std::size_t size, const void* caller);
    int posix_memalign(void** out, std::size_t alignment, std::size_t size, const void* caller);
    void* aligned_alloc(std::size_t alignment, std::size_t size, const void* caller);
    void* memalign(std::size_t alignment, std::size_t size, const void* caller);
    void* memcpy(void* dst, const void* src, std::size_t n, const void* caller);

    /// A free whose size cannot be recovered: counted as 0 bytes.
    void record_unknown_free() noexcept;

    /// Writes pending records, leak scores and the footer. Idempotent;
    /// later events are still counted but nothing more is written.
    void flush_and_finalize();

    void set_attribution_hook(AttributionHook hook) noexcept { hook_.store(hook, std::memory_order_release); }
    void set_symbol_map(SymbolMap map);

    ShimCounters counters() const;
    const LeakDetector& leak_detector() const { return leak_; }
    const ProfilerConfig& config() const { return config_; }
    Nanos start_ns() const { return start_ns_; }

private:
    static constexpr std::size_t kRingSize = 1024;
    static constexpr std::size_t kMaxFile = 240;

    struct Slot {
        std::atomic<std::uint64_t> ready{0};  // ticket + 1 once filled
        SampleKind kind = SampleKind::growth;
        std::int64_t net_delta = 0;
        std::uint64_t footprint = 0;
        std::uint64_t peak = 0;
        double managed_fraction = 0.0;
        Nanos timestamp = 0;
        AllocId alloc_id = 0;
        bool has_alloc_id = false;
        const void* caller = nullptr;
        bool hooked = false;
        unsigned line = 0;
        char file[kMaxFile] = {};
    };

    struct Crossing {
        bool fired = false;
        std::uint64_t ticket = 0;
        bool reserved = false;
        ThresholdCrossing data;
    };

    void lock() noexcept;
    void unlock() noexcept;
    // Callers hold the spinlock.
    Crossing reserve(const std::optional<ThresholdCrossing>& crossing);

    void note_alloc(void* ptr, const void* caller);
    void note_free(void* ptr, std::size_t size, const void* caller);
    void publish(const Crossing& c, SampleKind kind, std::optional<AllocId> id, const void* caller);
    void drain();
    void write_record(const Slot& slot);
    void write_text(const std::string& text);

    ProfilerConfig config_;
    UnderlyingAllocator real_;
    int fd_;
    Nanos start_ns_;

    std::atomic_flag spin_ = ATOMIC_FLAG_INIT;
    ThresholdSampler sampler_;
    RateSampler copy_sampler_;
    ShimCounters counts_;  // guarded by spin_, except the atomics below

    std::atomic<std::uint64_t> guarded_calls_{0};
    std::atomic<std::uint64_t> unknown_frees_{0};
    std::atomic<std::uint64_t> records_written_{0};
    std::atomic<std::uint64_t> write_errors_{0};
    std::atomic<std::uint64_t> reentrant_records_{0};
    std::atomic<std::uint64_t> ring_waits_{0};

    std::uint64_t next_ticket_ = 0;  // guarded by spin_
    std::atomic<std::uint64_t> drained_{0};
    std::atomic<bool> draining_{false};
    std::array<Slot, kRingSize> ring_;

    LeakDetector leak_;
    std::atomic<AttributionHook> hook_{nullptr};
    SymbolMap symbols_;
    std::atomic<bool> finalized_{false};
};

Nanos monotonic_now_ns() noexcept;

}  // namespace heapscope

#endif  // HEAPSCOPE_SHIM_RUNTIME_HPP
