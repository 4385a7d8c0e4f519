/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

/* Small-object churn: argv[1] malloc/free pairs over a 64-slot working set.
 * Prints the loop time in nanoseconds. */

#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <time.h>

static int64_t now_ns(void) {
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return (int64_t)ts.tv_sec * 1000000000 + ts.tv_nsec;
}

int main(int argc, char** argv) {
    const long n = argc > 1 ? atol(argv[1]) : 10000000L;
    void* slots[64] = {0};
    uint32_t x = 2463534242u;
    const int64_t start = now_ns();
    for (long i = 0; i < n; ++i) {
        x ^= x << 13;
        x ^= x >> 17;
        x ^= x << 5;
        void** slot = &slots[i & 63];
        free(*slot);
        unsigned char* p = malloc(16 + (x & 240));
        p[0] = (unsigned char)i;
        *slot = p;
    }
    for (int i = 0; i < 64; ++i) {
        free(slots[i]);
    }
    printf("%lld\n", (long long)(now_ns() - start));
    return 0;
}
