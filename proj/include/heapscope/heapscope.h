/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

/*
 * Embedder API exported by the preloadable heapscope library.
 *
 * Runtimes hosting the profiler look these symbols up at startup
 * (dlsym(RTLD_DEFAULT, "heapscope_safepoint") and friends) so that the same
 * binary runs unchanged when the library is not preloaded.
 */

#ifndef HEAPSCOPE_HEAPSCOPE_H
#define HEAPSCOPE_HEAPSCOPE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct heapscope_frame {
    const char* file;
    unsigned line;
    int in_profiled_code;
} heapscope_frame;

/* Fill *file / *line for the calling thread and return nonzero, or return 0. */
typedef int (*heapscope_attribution_hook)(const char** file, unsigned* line);

/* Nonzero once the shim is initialized in this process. */
int heapscope_active(void);

void heapscope_set_attribution_hook(heapscope_attribution_hook hook);

/* Bracket allocations made by the runtime's own (managed) allocator. */
void heapscope_push_domain(int managed);
void heapscope_pop_domain(void);

/*
 * CPU attribution. Requires HEAPSCOPE_TIMER_OUT in the environment. The
 * instrumented loop calls heapscope_safepoint() with its current stack
 * (outermost frame first) whenever it is safe to take a timer sample.
 */
void heapscope_safepoint(const heapscope_frame* frames, size_t count);
void heapscope_update_thread(uint64_t thread, const char* file, unsigned line, int in_call);
void heapscope_set_thread_status(uint64_t thread, int sleeping);

/* Seal the sample file now instead of at exit. */
void heapscope_finalize(void);

#ifdef __cplusplus
}
#endif

#endif /* HEAPSCOPE_HEAPSCOPE_H */
