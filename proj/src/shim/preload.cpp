/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

// Preloadable front end: resolves the real allocator with dlsym(RTLD_NEXT),
// owns the process-wide ShimRuntime and exports the allocator symbols,
// memcpy and the embedder C API.

#include <dlfcn.h>
#include <fcntl.h>
#include <malloc.h>
#include <pthread.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "heapscope/env_config.hpp"
#include "heapscope/heapscope.h"
#include "heapscope/live_cpu.hpp"
#include "heapscope/shim_runtime.hpp"
#include "heapscope/timer_log.hpp"

#define HS_EXPORT extern "C" __attribute__((visibility("default")))

using namespace heapscope;

namespace {

enum State : int {
    kUninit = 0,
    kResolving = 1,  // dlsym in progress: serve from the bootstrap arena
    kForwarding = 2, // real allocator known, profiler not (or never) running
    kProfiling = 3,
};

std::atomic<int> g_state{kUninit};
UnderlyingAllocator g_real;
alignas(ShimRuntime) unsigned char g_runtime_storage[sizeof(ShimRuntime)];
ShimRuntime* g_runtime = nullptr;

alignas(LiveCpuSampler) unsigned char g_timer_storage[sizeof(LiveCpuSampler)];
LiveCpuSampler* g_timer = nullptr;
int g_timer_fd = -1;

// Bump allocator for calls made while dlsym itself is running. Blocks carry
// a 16-byte size header and are never reused.
constexpr std::size_t kArenaSize = 256 * 1024;
alignas(16) unsigned char g_arena[kArenaSize];
std::atomic<std::size_t> g_arena_used{0};

bool in_arena(const void* p) {
    auto* c = static_cast<const unsigned char*>(p);
    return c >= g_arena && c < g_arena + kArenaSize;
}

void* arena_alloc(std::size_t size, std::size_t alignment = 16) {
    if (alignment < 16) {
        alignment = 16;
    }
    std::size_t used = g_arena_used.load(std::memory_order_relaxed);
    while (true) {
        std::size_t start = (used + 16 + alignment - 1) & ~(alignment - 1);
        std::size_t end = start + ((size + 15) & ~std::size_t{15});
        if (end > kArenaSize) {
            return nullptr;
        }
        if (g_arena_used.compare_exchange_weak(used, end, std::memory_order_relaxed)) {
            *reinterpret_cast<std::size_t*>(g_arena + start - 16) = size;
            return g_arena + start;
        }
    }
}

std::size_t arena_size(const void* p) {
    return *reinterpret_cast<const std::size_t*>(static_cast<const unsigned char*>(p) - 16);
}

__attribute__((optimize("no-tree-loop-distribute-patterns"))) void* byte_copy(void* dst, const void* src,
                                                                               std::size_t n) {
    auto* d = static_cast<volatile unsigned char*>(dst);
    const auto* s = static_cast<const unsigned char*>(src);
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = s[i];
    }
    return dst;
}

template <typename Fn>
Fn next_symbol(const char* name) {
    return reinterpret_cast<Fn>(dlsym(RTLD_NEXT, name));
}

void say(const std::string& text) {
    const std::string line = "heapscope: " + text + "\n";
    [[maybe_unused]] auto n = ::write(STDERR_FILENO, line.data(), line.size());
}

bool resolve_real() {
    g_real.malloc = next_symbol<decltype(g_real.malloc)>("malloc");
    g_real.free = next_symbol<decltype(g_real.free)>("free");
    g_real.calloc = next_symbol<decltype(g_real.calloc)>("calloc");
    g_real.realloc = next_symbol<decltype(g_real.realloc)>("realloc");
    g_real.posix_memalign = next_symbol<decltype(g_real.posix_memalign)>("posix_memalign");
    g_real.aligned_alloc = next_symbol<decltype(g_real.aligned_alloc)>("aligned_alloc");
    g_real.memalign = next_symbol<decltype(g_real.memalign)>("memalign");
    g_real.usable_size = next_symbol<decltype(g_real.usable_size)>("malloc_usable_size");
    g_real.memcpy = next_symbol<decltype(g_real.memcpy)>("memcpy");
    return g_real.malloc && g_real.free && g_real.calloc && g_real.realloc && g_real.posix_memalign &&
           g_real.aligned_alloc && g_real.memalign && g_real.usable_size && g_real.memcpy;
}

void start_timer(const ShimSettings& settings) {
    if (!settings.timer_log_path) {
        return;
    }
    g_timer_fd = ::open(settings.timer_log_path->c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_APPEND | O_CLOEXEC, 0644);
    if (g_timer_fd < 0) {
        say("cannot open timer log " + *settings.timer_log_path + ": " + std::strerror(errno));
        return;
    }
    const auto quantum = seconds_to_nanos(settings.config.quantum_seconds);
    const std::string header = format_timer_header(quantum);
    [[maybe_unused]] auto n = ::write(g_timer_fd, header.data(), header.size());
    g_timer = new (g_timer_storage) LiveCpuSampler(quantum, [](const TimerSample& sample) {
        const std::string text = format_timer_sample(sample);
        [[maybe_unused]] auto w = ::write(g_timer_fd, text.data(), text.size());
    });
    try {
        g_timer->start();
    } catch (const std::exception& e) {
        say(e.what());
        g_timer = nullptr;
    }
}

// A forked child shares the output file; only the parent writes to it.
void stop_in_child() {
    g_timer = nullptr;
    g_state.store(kForwarding, std::memory_order_release);
}

void start_profiler() {
    const ShimSettings settings =
        settings_from_env([](const char* name) -> const char* { return std::getenv(name); }, static_cast<long>(::getpid()));
    for (const auto& problem : settings.problems) {
        say(problem);
    }
    const int fd = ::open(settings.config.output_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) {
        say("cannot open " + settings.config.output_path + ": " + std::strerror(errno) + "; profiling disabled");
        return;
    }
    ShimRuntime* runtime = new (g_runtime_storage) ShimRuntime(settings.config, g_real, fd);
    if (settings.symbol_map_path) {
        try {
            runtime->set_symbol_map(SymbolMap::load(*settings.symbol_map_path));
        } catch (const std::exception& e) {
            say(std::string("symbol map ignored: ") + e.what());
        }
    }
    start_timer(settings);
    pthread_atfork(nullptr, nullptr, stop_in_child);
    g_runtime = runtime;
    g_state.store(kProfiling, std::memory_order_release);
}

void initialize() {
    int expected = kUninit;
    if (!g_state.compare_exchange_strong(expected, kResolving, std::memory_order_acq_rel)) {
        return;
    }
    if (!resolve_real()) {
        static constexpr char kMessage[] = "heapscope: cannot resolve the underlying allocator\n";
        [[maybe_unused]] auto n = ::write(STDERR_FILENO, kMessage, sizeof(kMessage) - 1);
        std::abort();
    }
    g_state.store(kForwarding, std::memory_order_release);
    try {
        start_profiler();
    } catch (const std::exception& e) {
        say(std::string("profiling disabled: ") + e.what());
    }
}

// Returns the runtime when profiling, nullptr when calls must go straight to
// g_real, and sets *arena when the bootstrap arena has to be used.
inline ShimRuntime* ready(bool* arena) {
    int state = g_state.load(std::memory_order_acquire);
    if (__builtin_expect(state == kProfiling, 1)) {
        return g_runtime;
    }
    if (state == kUninit) {
        initialize();
        state = g_state.load(std::memory_order_acquire);
    }
    *arena = state == kResolving;
    return state == kProfiling ? g_runtime : nullptr;
}

__attribute__((constructor)) void heapscope_load() {
    bool arena = false;
    ready(&arena);
}

__attribute__((destructor)) void heapscope_unload() {
    if (g_timer != nullptr) {
        g_timer->stop();
    }
    if (g_state.load(std::memory_order_acquire) == kProfiling) {
        // The runtime outlives this destructor on purpose: later exit
        // handlers may still allocate.
        g_runtime->flush_and_finalize();
    }
}

}  // namespace

HS_EXPORT void* malloc(std::size_t size) {
    bool arena = false;
    ShimRuntime* rt = ready(&arena);
    if (rt != nullptr) {
        return rt->malloc(size, __builtin_return_address(0));
    }
    return arena ? arena_alloc(size) : g_real.malloc(size);
}

HS_EXPORT void free(void* ptr) {
    if (ptr == nullptr) {
        return;
    }
    if (in_arena(ptr)) {
        if (g_state.load(std::memory_order_acquire) == kProfiling) {
            g_runtime->record_unknown_free();
        }
        return;
    }
    bool arena = false;
    ShimRuntime* rt = ready(&arena);
    if (rt != nullptr) {
        rt->free(ptr, __builtin_return_address(0));
    } else if (!arena) {
        g_real.free(ptr);
    }
}

HS_EXPORT void* calloc(std::size_t count, std::size_t size) {
    bool arena = false;
    ShimRuntime* rt = ready(&arena);
    if (rt != nullptr) {
        return rt->calloc(count, size, __builtin_return_address(0));
    }
    if (arena) {
        if (size != 0 && count > SIZE_MAX / size) {
            return nullptr;
        }
        return arena_alloc(count * size);  // static storage is already zero
    }
    return g_real.calloc(count, size);
}

HS_EXPORT void* realloc(void* ptr, std::size_t size) {
    bool arena = false;
    ShimRuntime* rt = ready(&arena);
    if (ptr != nullptr && in_arena(ptr)) {
        void* fresh = nullptr;
        if (arena) {
            fresh = arena_alloc(size);
        } else if (rt != nullptr) {
            fresh = rt->malloc(size, __builtin_return_address(0));
            rt->record_unknown_free();
        } else {
            fresh = g_real.malloc(size);
        }
        if (fresh != nullptr) {
            const std::size_t old = arena_size(ptr);
            byte_copy(fresh, ptr, old < size ? old : size);
        }
        return fresh;
    }
    if (rt != nullptr) {
        return rt->realloc(ptr, size, __builtin_return_address(0));
    }
    if (arena) {
        return ptr == nullptr ? arena_alloc(size) : nullptr;
    }
    return g_real.realloc(ptr, size);
}

HS_EXPORT void* reallocarray(void* ptr, std::size_t count, std::size_t size) {
    if (size != 0 && count > SIZE_MAX / size) {
        errno = ENOMEM;
        return nullptr;
    }
    return realloc(ptr, count * size);
}

HS_EXPORT int posix_memalign(void** out, std::size_t alignment, std::size_t size) {
    bool arena = false;
    ShimRuntime* rt = ready(&arena);
    if (rt != nullptr) {
        return rt->posix_memalign(out, alignment, size, __builtin_return_address(0));
    }
    if (arena) {
        *out = arena_alloc(size, alignment);
        return *out != nullptr ? 0 : ENOMEM;
    }
    return g_real.posix_memalign(out, alignment, size);
}

HS_EXPORT void* aligned_alloc(std::size_t alignment, std::size_t size) {
    bool arena = false;
    ShimRuntime* rt = ready(&arena);
    if (rt != nullptr) {
        return rt->aligned_alloc(alignment, size, __builtin_return_address(0));
    }
    return arena ? arena_alloc(size, alignment) : g_real.aligned_alloc(alignment, size);
}

HS_EXPORT void* memalign(std::size_t alignment, std::size_t size) {
    bool arena = false;
    ShimRuntime* rt = ready(&arena);
    if (rt != nullptr) {
        return rt->memalign(alignment, size, __builtin_return_address(0));
    }
    return arena ? arena_alloc(size, alignment) : g_real.memalign(alignment, size);
}

HS_EXPORT void* valloc(std::size_t size) {
    const auto page = static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
    bool arena = false;
    ShimRuntime* rt = ready(&arena);
    if (rt != nullptr) {
        return rt->memalign(page, size, __builtin_return_address(0));
    }
    return arena ? arena_alloc(size, page) : g_real.memalign(page, size);
}

HS_EXPORT std::size_t malloc_usable_size(void* ptr) {
    if (ptr == nullptr) {
        return 0;
    }
    if (in_arena(ptr)) {
        return arena_size(ptr);
    }
    bool arena = false;
    ready(&arena);
    return arena ? 0 : g_real.usable_size(ptr);
}

HS_EXPORT void* memcpy(void* __restrict dst, const void* __restrict src, std::size_t n) {
    if (__builtin_expect(g_state.load(std::memory_order_acquire) == kProfiling, 1)) {
        return g_runtime->memcpy(dst, src, n, __builtin_return_address(0));
    }
    if (g_real.memcpy != nullptr && g_state.load(std::memory_order_acquire) == kForwarding) {
        return g_real.memcpy(dst, src, n);
    }
    return byte_copy(dst, src, n);
}

// Embedder API. Each entry point runs under the reentrancy guard so the
// profiler's own bookkeeping never shows up in the sample file.

HS_EXPORT int heapscope_active(void) {
    return g_state.load(std::memory_order_acquire) == kProfiling ? 1 : 0;
}

HS_EXPORT void heapscope_set_attribution_hook(heapscope_attribution_hook hook) {
    if (heapscope_active()) {
        g_runtime->set_attribution_hook(hook);
    }
}

HS_EXPORT void heapscope_push_domain(int managed) {
    push_domain(managed != 0 ? DomainTag::managed : DomainTag::native);
}

HS_EXPORT void heapscope_pop_domain(void) {
    pop_domain();
}

namespace {

Callsite frame_callsite(const char* file, unsigned line) {
    if (file == nullptr || file[0] == '\0' || line == 0) {
        return Callsite::unknown();
    }
    return Callsite(file, line);
}

}  // namespace

HS_EXPORT void heapscope_safepoint(const heapscope_frame* frames, size_t count) {
    if (g_timer == nullptr) {
        return;
    }
    ReentrancyGuard guard;
    std::vector<Frame> stack;
    stack.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        stack.push_back(Frame{frame_callsite(frames[i].file, frames[i].line), frames[i].in_profiled_code != 0});
    }
    try {
        g_timer->safepoint(stack);
    } catch (const std::exception& e) {
        say(std::string("safepoint: ") + e.what());
    }
}

HS_EXPORT void heapscope_update_thread(uint64_t thread, const char* file, unsigned line, int in_call) {
    if (g_timer == nullptr) {
        return;
    }
    ReentrancyGuard guard;
    g_timer->update_thread(thread, frame_callsite(file, line), in_call != 0);
}

HS_EXPORT void heapscope_set_thread_status(uint64_t thread, int sleeping) {
    if (g_timer == nullptr) {
        return;
    }
    ReentrancyGuard guard;
    g_timer->set_thread_status(thread, sleeping != 0 ? ThreadStatus::sleeping : ThreadStatus::executing);
}

HS_EXPORT void heapscope_finalize(void) {
    if (heapscope_active()) {
        g_runtime->flush_and_finalize();
    }
}
