/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/shim_runtime.hpp"

#include <errno.h>
#include <sched.h>
#include <time.h>
#include <unistd.h>

#include <cstring>
#include <string>

#include "heapscope/sample_file.hpp"

#if defined(__GNUC__)
#define HEAPSCOPE_TLS __attribute__((tls_model("initial-exec")))
#else
#define HEAPSCOPE_TLS
#endif

namespace heapscope {

namespace {

// Trivially-destructible thread locals only: no TLS destructor registration,
// which would itself allocate.
thread_local bool t_guard HEAPSCOPE_TLS = false;
thread_local bool t_in_profiler HEAPSCOPE_TLS = false;

constexpr int kDomainDepth = 32;
thread_local DomainTag t_domains[kDomainDepth] HEAPSCOPE_TLS = {};
thread_local int t_domain_depth HEAPSCOPE_TLS = 0;

class ProfilerCodeScope {
public:
    ProfilerCodeScope() noexcept : previous_(t_in_profiler) { t_in_profiler = true; }
    ~ProfilerCodeScope() { t_in_profiler = previous_; }

private:
    bool previous_;
};

void copy_cstr(char* dst, std::size_t cap, const char* src) {
    std::size_t i = 0;
    for (; src != nullptr && src[i] != '\0' && i + 1 < cap; ++i) {
        dst[i] = src[i];
    }
    dst[i] = '\0';
}

}  // namespace

ReentrancyGuard::ReentrancyGuard() noexcept : entered_(!t_guard) {
    t_guard = true;
}

ReentrancyGuard::~ReentrancyGuard() {
    if (entered_) {
        t_guard = false;
    }
}

bool ReentrancyGuard::active() noexcept {
    return t_guard;
}

void push_domain(DomainTag tag) noexcept {
    if (t_domain_depth < kDomainDepth) {
        t_domains[t_domain_depth] = tag;
    }
    ++t_domain_depth;
}

void pop_domain() noexcept {
    if (t_domain_depth > 0) {
        --t_domain_depth;
    }
}

DomainTag current_domain() noexcept {
    if (t_domain_depth == 0) {
        return DomainTag::native;
    }
    return t_domains[std::min(t_domain_depth, kDomainDepth) - 1];
}

Nanos monotonic_now_ns() noexcept {
    timespec ts{};
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return static_cast<Nanos>(ts.tv_sec) * 1'000'000'000ULL + static_cast<Nanos>(ts.tv_nsec);
}

ShimRuntime::ShimRuntime(const ProfilerConfig& config, const UnderlyingAllocator& underlying, int output_fd)
    : config_(config),
      real_(underlying),
      fd_(output_fd),
      start_ns_(monotonic_now_ns()),
      sampler_(config.threshold_bytes),
      copy_sampler_(config.copy_rate_bytes(), config.deterministic_rng_seed) {
    config_.validate();
    ReentrancyGuard guard;
    ProfilerCodeScope scope;
    SampleFileHeader header;
    header.threshold_bytes = config_.threshold_bytes;
    header.copy_rate_bytes = config_.copy_rate_bytes();
    header.seed = config_.deterministic_rng_seed;
    header.start_ns = start_ns_;
    write_text(format_header(header));
}

ShimRuntime::~ShimRuntime() {
    flush_and_finalize();
    if (fd_ >= 0) {
        ::close(fd_);
    }
}

void ShimRuntime::set_symbol_map(SymbolMap map) {
    ReentrancyGuard guard;
    symbols_ = std::move(map);
}

void ShimRuntime::lock() noexcept {
    while (spin_.test_and_set(std::memory_order_acquire)) {
        while (spin_.test(std::memory_order_relaxed)) {
#if defined(__x86_64__) || defined(__i386__)
            __builtin_ia32_pause();
#endif
        }
    }
}

void ShimRuntime::unlock() noexcept {
    spin_.clear(std::memory_order_release);
}

ShimRuntime::Crossing ShimRuntime::reserve(const std::optional<ThresholdCrossing>& crossing) {
    Crossing c;
    if (!crossing) {
        return c;
    }
    c.fired = true;
    c.data = *crossing;
    if (t_in_profiler) {
        reentrant_records_.fetch_add(1, std::memory_order_relaxed);
    }
    c.reserved = true;
    c.ticket = next_ticket_++;
    return c;
}

void* ShimRuntime::malloc(std::size_t size, const void* caller) {
    ReentrancyGuard guard;
    if (!guard.entered()) {
        guarded_calls_.fetch_add(1, std::memory_order_relaxed);
        return real_.malloc(size);
    }
    void* ptr = real_.malloc(size);
    if (ptr != nullptr) {
        note_alloc(ptr, caller);
    }
    return ptr;
}

void* ShimRuntime::calloc(std::size_t count, std::size_t size, const void* caller) {
    ReentrancyGuard guard;
    if (!guard.entered()) {
        guarded_calls_.fetch_add(1, std::memory_order_relaxed);
        return real_.calloc(count, size);
    }
    void* ptr = real_.calloc(count, size);
    if (ptr != nullptr) {
        note_alloc(ptr, caller);
    }
    return ptr;
}

int ShimRuntime::posix_memalign(void** out, std::size_t alignment, std::size_t size, const void* caller) {
    ReentrancyGuard guard;
    if (!guard.entered()) {
        guarded_calls_.fetch_add(1, std::memory_order_relaxed);
        return real_.posix_memalign(out, alignment, size);
    }
    const int rc = real_.posix_memalign(out, alignment, size);
    if (rc == 0 && *out != nullptr) {
        note_alloc(*out, caller);
    }
    return rc;
}

void* ShimRuntime::aligned_alloc(std::size_t alignment, std::size_t size, const void* caller) {
    ReentrancyGuard guard;
    if (!guard.entered()) {
        guarded_calls_.fetch_add(1, std::memory_order_relaxed);
        return real_.aligned_alloc(alignment, size);
    }
    void* ptr = real_.aligned_alloc(alignment, size);
    if (ptr != nullptr) {
        note_alloc(ptr, caller);
    }
    return ptr;
}

void* ShimRuntime::memalign(std::size_t alignment, std::size_t size, const void* caller) {
    ReentrancyGuard guard;
    if (!guard.entered()) {
        guarded_calls_.fetch_add(1, std::memory_order_relaxed);
        return real_.memalign(alignment, size);
    }
    void* ptr = real_.memalign(alignment, size);
    if (ptr != nullptr) {
        note_alloc(ptr, caller);
    }
    return ptr;
}

void ShimRuntime::free(void* ptr, const void* caller) {
    if (ptr == nullptr) {
        return;
    }
    ReentrancyGuard guard;
    if (!guard.entered()) {
        guarded_calls_.fetch_add(1, std::memory_order_relaxed);
        real_.free(ptr);
        return;
    }
    // Account before releasing so the id cannot be handed out again first.
    note_free(ptr, real_.usable_size(ptr), caller);
    real_.free(ptr);
}

void* ShimRuntime::realloc(void* ptr, std::size_t size, const void* caller) {
    ReentrancyGuard guard;
    if (!guard.entered()) {
        guarded_calls_.fetch_add(1, std::memory_order_relaxed);
        return real_.realloc(ptr, size);
    }
    if (ptr == nullptr) {
        void* fresh = real_.realloc(nullptr, size);
        if (fresh != nullptr) {
            note_alloc(fresh, caller);
        }
        return fresh;
    }
    const std::size_t old_size = real_.usable_size(ptr);
    note_free(ptr, old_size, caller);
    void* moved = real_.realloc(ptr, size);
    if (moved != nullptr) {
        note_alloc(moved, caller);
    } else if (size != 0) {
        // Failed: the original block is still live.
        note_alloc(ptr, caller);
    }
    return moved;
}

void* ShimRuntime::memcpy(void* dst, const void* src, std::size_t n, const void* caller) {
    ReentrancyGuard guard;
    if (!guard.entered() || n == 0) {
        if (!guard.entered()) {
            guarded_calls_.fetch_add(1, std::memory_order_relaxed);
        }
        return real_.memcpy(dst, src, n);
    }
    Crossing c;
    lock();
    ++counts_.copies;
    const std::uint64_t fired = copy_sampler_.record_bytes(n);
    if (fired > 0) {
        ThresholdCrossing data;
        data.kind = SampleKind::copy;
        data.net_delta = static_cast<std::int64_t>(fired * copy_sampler_.rate());
        data.footprint = sampler_.footprint();
        data.peak_footprint = sampler_.peak_footprint();
        c = reserve(data);
    }
    unlock();
    void* result = real_.memcpy(dst, src, n);
    if (c.fired) {
        publish(c, SampleKind::copy, std::nullopt, caller);
    }
    return result;
}

void ShimRuntime::record_unknown_free() noexcept {
    unknown_frees_.fetch_add(1, std::memory_order_relaxed);
}

void ShimRuntime::note_alloc(void* ptr, const void* caller) {
    const std::size_t size = real_.usable_size(ptr);
    const DomainTag domain = current_domain();
    lock();
    ++counts_.allocs;
    const Crossing c = reserve(sampler_.apply(EventKind::alloc, size, domain));
    unlock();
    if (c.fired) {
        publish(c, c.data.kind, reinterpret_cast<AllocId>(ptr), caller);
    }
}

void ShimRuntime::note_free(void* ptr, std::size_t size, const void* caller) {
    const auto id = reinterpret_cast<AllocId>(ptr);
    leak_.on_free(id);
    lock();
    ++counts_.frees;
    const Crossing c = reserve(sampler_.apply(EventKind::free, size, DomainTag::native));
    unlock();
    if (c.fired) {
        publish(c, c.data.kind, id, caller);
    }
}

void ShimRuntime::publish(const Crossing& c, SampleKind kind, std::optional<AllocId> id, const void* caller) {
    if (!c.reserved) {
        return;
    }
    if (c.ticket - drained_.load(std::memory_order_acquire) >= kRingSize) {
        ring_waits_.fetch_add(1, std::memory_order_relaxed);
        // Earlier tickets never wait on later ones, so this always ends.
        while (c.ticket - drained_.load(std::memory_order_acquire) >= kRingSize) {
            drain();
            sched_yield();
        }
    }
    Slot& slot = ring_[c.ticket % kRingSize];
    slot.kind = kind;
    slot.net_delta = c.data.net_delta;
    slot.footprint = c.data.footprint;
    slot.peak = c.data.peak_footprint;
    slot.managed_fraction = c.data.managed_fraction;
    slot.timestamp = monotonic_now_ns();
    slot.has_alloc_id = id.has_value();
    slot.alloc_id = id.value_or(0);
    slot.caller = caller;
    slot.hooked = false;
    // The hook inspects the calling thread, so it runs here rather than in
    // whichever thread ends up draining.
    if (AttributionHook hook = hook_.load(std::memory_order_acquire)) {
        ProfilerCodeScope scope;
        const char* file = nullptr;
        unsigned line = 0;
        if (hook(&file, &line) != 0 && file != nullptr && file[0] != '\0' && line >= 1) {
            copy_cstr(slot.file, kMaxFile, file);
            slot.line = line;
            slot.hooked = true;
        }
    }
    slot.ready.store(c.ticket + 1, std::memory_order_seq_cst);
    drain();
}

void ShimRuntime::drain() {
    ProfilerCodeScope scope;
    while (true) {
        if (draining_.exchange(true, std::memory_order_seq_cst)) {
            return;  // the current drainer will pick our slot up
        }
        std::uint64_t head = drained_.load(std::memory_order_relaxed);
        while (ring_[head % kRingSize].ready.load(std::memory_order_seq_cst) == head + 1) {
            write_record(ring_[head % kRingSize]);
            ++head;
            drained_.store(head, std::memory_order_release);
        }
        draining_.store(false, std::memory_order_seq_cst);
        if (ring_[head % kRingSize].ready.load(std::memory_order_seq_cst) != head + 1) {
            return;
        }
    }
}

void ShimRuntime::write_record(const Slot& slot) {
    SampleRecord record;
    record.kind = slot.kind;
    record.timestamp = slot.timestamp;
    record.net_delta = slot.net_delta;
    record.footprint = slot.footprint;
    record.peak_footprint = slot.peak;
    record.managed_fraction = slot.managed_fraction;
    if (slot.has_alloc_id) {
        record.alloc_id = slot.alloc_id;
    }
    if (slot.hooked) {
        record.callsite = Callsite(slot.file, slot.line);
    } else if (auto mapped = symbols_.resolve_address(slot.caller)) {
        record.callsite = std::move(*mapped);
    } else {
        record.callsite = Callsite::unknown();
    }
    if (record.kind == SampleKind::growth) {
        leak_.on_growth_sample(record);
    }
    if (finalized_.load(std::memory_order_acquire)) {
        return;
    }
    write_text(format_record(record));
    records_written_.fetch_add(1, std::memory_order_relaxed);
}

void ShimRuntime::write_text(const std::string& text) {
    if (fd_ < 0) {
        return;
    }
    const char* data = text.data();
    std::size_t left = text.size();
    while (left > 0) {
        const ssize_t n = ::write(fd_, data, left);
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            if (write_errors_.fetch_add(1, std::memory_order_relaxed) == 0) {
                static constexpr char kMessage[] = "heapscope: failed to write sample file\n";
                [[maybe_unused]] auto ignored = ::write(STDERR_FILENO, kMessage, sizeof(kMessage) - 1);
            }
            return;
        }
        data += n;
        left -= static_cast<std::size_t>(n);
    }
}

void ShimRuntime::flush_and_finalize() {
    ReentrancyGuard guard;
    ProfilerCodeScope scope;
    drain();
    if (finalized_.exchange(true, std::memory_order_acq_rel)) {
        return;
    }
    std::string tail;
    for (const auto& [site, score] : leak_.scores()) {
        tail += format_leak_line(site, score);
    }
    const ShimCounters c = counters();
    SampleFileFooter footer;
    footer.allocs = c.allocs;
    footer.frees = c.frees;
    footer.copies = c.copies;
    footer.samples = c.records_written;
    footer.peak_footprint = c.peak_footprint;
    footer.elapsed_ns = monotonic_now_ns() - start_ns_;
    footer.unknown_frees = c.unknown_frees;
    footer.guarded_calls = c.guarded_calls;
    footer.reentrant_records = c.reentrant_records;
    footer.ring_waits = c.ring_waits;
    tail += format_footer(footer);
    write_text(tail);
}

ShimCounters ShimRuntime::counters() const {
    auto* self = const_cast<ShimRuntime*>(this);
    self->lock();
    ShimCounters c = counts_;
    c.footprint = sampler_.footprint();
    c.peak_footprint = sampler_.peak_footprint();
    self->unlock();
    c.records_written = records_written_.load(std::memory_order_relaxed);
    c.unknown_frees = unknown_frees_.load(std::memory_order_relaxed);
    c.guarded_calls = guarded_calls_.load(std::memory_order_relaxed);
    c.reentrant_records = reentrant_records_.load(std::memory_order_relaxed);
    c.ring_waits = ring_waits_.load(std::memory_order_relaxed);
    c.write_errors = write_errors_.load(std::memory_order_relaxed);
    return c;
}

}  // namespace heapscope
