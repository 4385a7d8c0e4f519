/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_TESTS_TEST_UTIL_HPP
#define HEAPSCOPE_TESTS_TEST_UTIL_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "heapscope/core_model.hpp"

namespace testutil {

inline heapscope::AllocEvent alloc(heapscope::AllocId id, std::uint64_t size, heapscope::Nanos ts = 0,
                                   heapscope::DomainTag domain = heapscope::DomainTag::native,
                                   heapscope::Callsite site = heapscope::Callsite("t.cpp", 1)) {
    heapscope::AllocEvent e;
    e.kind = heapscope::EventKind::alloc;
    e.alloc_id = id;
    e.size = size;
    e.timestamp = ts;
    e.domain = domain;
    e.callsite = std::move(site);
    return e;
}

inline heapscope::AllocEvent free_of(heapscope::AllocId id, std::uint64_t size, heapscope::Nanos ts = 0,
                                     heapscope::Callsite site = heapscope::Callsite("t.cpp", 1)) {
    heapscope::AllocEvent e = alloc(id, size, ts, heapscope::DomainTag::native, std::move(site));
    e.kind = heapscope::EventKind::free;
    return e;
}

inline heapscope::AllocEvent copy_of(std::uint64_t size, heapscope::Nanos ts = 0,
                                     heapscope::Callsite site = heapscope::Callsite("t.cpp", 1)) {
    heapscope::AllocEvent e = alloc(0, size, ts, heapscope::DomainTag::native, std::move(site));
    e.kind = heapscope::EventKind::copy;
    return e;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0;; ++i) {
            path_ = base / ("heapscope-test-" + std::to_string(::getpid()) + "-" + std::to_string(i));
            if (std::filesystem::create_directory(path_)) {
                break;
            }
        }
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil

#endif  // HEAPSCOPE_TESTS_TEST_UTIL_HPP
