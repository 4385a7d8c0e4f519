/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/core_model.hpp"

#include <functional>
#include <stdexcept>

namespace heapscope {

Callsite::Callsite(std::string file_, std::uint32_t line_, std::optional<std::string> function_)
    : file(std::move(file_)), line(line_), function(std::move(function_)) {
    if (file.empty()) {
        throw std::invalid_argument("callsite file must be non-empty");
    }
    if (line < 1) {
        throw std::invalid_argument("callsite line must be >= 1");
    }
}

Callsite Callsite::foreign() {
    return Callsite("<foreign>", 1);
}

Callsite Callsite::unknown() {
    return Callsite("<unknown>", 1);
}

std::string Callsite::to_string() const {
    return file + ":" + std::to_string(line);
}

std::size_t CallsiteHash::operator()(const Callsite& c) const noexcept {
    std::size_t h = std::hash<std::string>{}(c.file);
    return h ^ (std::hash<std::uint32_t>{}(c.line) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

void ProfilerConfig::validate() const {
    if (threshold_bytes == 0 || !is_prime(threshold_bytes)) {
        throw std::invalid_argument("threshold_bytes must be prime, got " + std::to_string(threshold_bytes));
    }
    if (!(quantum_seconds > 0.0)) {
        throw std::invalid_argument("quantum_seconds must be positive");
    }
    if (copy_rate_multiple == 0) {
        throw std::invalid_argument("copy_rate_multiple must be positive");
    }
}

namespace {

std::uint64_t mul_mod(std::uint64_t a, std::uint64_t b, std::uint64_t m) {
    return static_cast<std::uint64_t>(static_cast<unsigned __int128>(a) * b % m);
}

std::uint64_t pow_mod(std::uint64_t base, std::uint64_t exp, std::uint64_t m) {
    std::uint64_t result = 1;
    base %= m;
    while (exp > 0) {
        if (exp & 1) {
            result = mul_mod(result, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    return result;
}

}  // namespace

// Deterministic Miller-Rabin; these bases are sufficient for all 64-bit n.
bool is_prime(std::uint64_t n) {
    if (n < 2) {
        return false;
    }
    static constexpr std::uint64_t kBases[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
    for (std::uint64_t p : kBases) {
        if (n % p == 0) {
            return n == p;
        }
    }
    std::uint64_t d = n - 1;
    int s = 0;
    while ((d & 1) == 0) {
        d >>= 1;
        ++s;
    }
    for (std::uint64_t a : kBases) {
        std::uint64_t x = pow_mod(a, d, n);
        if (x == 1 || x == n - 1) {
            continue;
        }
        bool composite = true;
        for (int r = 1; r < s; ++r) {
            x = mul_mod(x, x, n);
            if (x == n - 1) {
                composite = false;
                break;
            }
        }
        if (composite) {
            return false;
        }
    }
    return true;
}

std::optional<StreamViolation> validate_event_stream(std::span<const AllocEvent> events) {
    std::unordered_map<AllocId, std::uint64_t> live;
    std::unordered_map<std::uint64_t, Nanos> last_ts;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const AllocEvent& e = events[i];
        auto [it, fresh] = last_ts.try_emplace(e.thread, e.timestamp);
        if (!fresh) {
            if (e.timestamp < it->second) {
                return StreamViolation{i, "timestamp decreases on thread " + std::to_string(e.thread)};
            }
            it->second = e.timestamp;
        }
        switch (e.kind) {
        case EventKind::alloc:
            if (e.size == 0) {
                return StreamViolation{i, "zero-size alloc"};
            }
            if (!live.emplace(e.alloc_id, e.size).second) {
                return StreamViolation{i, "alloc of live id " + std::to_string(e.alloc_id)};
            }
            break;
        case EventKind::free: {
            auto found = live.find(e.alloc_id);
            if (found == live.end()) {
                return StreamViolation{i, "free without alloc of id " + std::to_string(e.alloc_id)};
            }
            if (found->second != e.size) {
                return StreamViolation{i, "free size " + std::to_string(e.size) + " does not match alloc size " +
                                              std::to_string(found->second)};
            }
            live.erase(found);
            break;
        }
        case EventKind::copy:
            if (e.size == 0) {
                return StreamViolation{i, "zero-size copy"};
            }
            break;
        }
    }
    return std::nullopt;
}

std::uint64_t FootprintLedger::apply(const AllocEvent& event) {
    switch (event.kind) {
    case EventKind::alloc:
        if (!live_.emplace(event.alloc_id, event.size).second) {
            throw std::invalid_argument("alloc of live id " + std::to_string(event.alloc_id));
        }
        footprint_ += event.size;
        if (footprint_ > peak_) {
            peak_ = footprint_;
        }
        break;
    case EventKind::free: {
        auto found = live_.find(event.alloc_id);
        if (found == live_.end() || found->second != event.size) {
            throw std::invalid_argument("unmatched free of id " + std::to_string(event.alloc_id));
        }
        footprint_ -= found->second;
        live_.erase(found);
        break;
    }
    case EventKind::copy:
        break;
    }
    return footprint_;
}

const char* to_string(EventKind kind) {
    switch (kind) {
    case EventKind::alloc: return "alloc";
    case EventKind::free: return "free";
    case EventKind::copy: return "copy";
    }
    return "?";
}

const char* to_string(SampleKind kind) {
    switch (kind) {
    case SampleKind::growth: return "growth";
    case SampleKind::decline: return "decline";
    case SampleKind::copy: return "copy";
    }
    return "?";
}

const char* to_string(DomainTag tag) {
    return tag == DomainTag::managed ? "managed" : "native";
}

std::optional<EventKind> parse_event_kind(std::string_view text) {
    if (text == "alloc") return EventKind::alloc;
    if (text == "free") return EventKind::free;
    if (text == "copy") return EventKind::copy;
    return std::nullopt;
}

std::optional<SampleKind> parse_sample_kind(std::string_view text) {
    if (text == "growth") return SampleKind::growth;
    if (text == "decline") return SampleKind::decline;
    if (text == "copy") return SampleKind::copy;
    return std::nullopt;
}

std::optional<DomainTag> parse_domain(std::string_view text) {
    if (text == "managed") return DomainTag::managed;
    if (text == "native") return DomainTag::native;
    return std::nullopt;
}

}  // namespace heapscope
