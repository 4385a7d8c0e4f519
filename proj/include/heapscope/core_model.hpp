/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_CORE_MODEL_HPP
#define HEAPSCOPE_CORE_MODEL_HPP

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>

namespace heapscope {

/// Source location to which every metric accrues.
struct Callsite {
    std::string file;
    std::uint32_t line = 1;
    std::optional<std::string> function;

    Callsite() = default;
    Callsite(std::string file_, std::uint32_t line_, std::optional<std::string> function_ = std::nullopt);

    // Designated sink for stacks with no profiled frame.
    static Callsite foreign();
    // Live-mode fallback when neither the embedder hook nor the symbol map resolves.
    static Callsite unknown();

    std::string to_string() const;

    // Identity is (file, line); the function name is decoration.
    friend bool operator==(const Callsite& a, const Callsite& b) {
        return a.line == b.line && a.file == b.file;
    }
    friend std::strong_ordering operator<=>(const Callsite& a, const Callsite& b) {
        if (auto c = a.file <=> b.file; c != 0) {
            return c;
        }
        return a.line <=> b.line;
    }
};

struct CallsiteHash {
    std::size_t operator()(const Callsite& c) const noexcept;
};

enum class DomainTag : std::uint8_t { native, managed };

enum class EventKind : std::uint8_t { alloc, free, copy };

using AllocId = std::uint64_t;
using Nanos = std::uint64_t;

struct AllocEvent {
    EventKind kind = EventKind::alloc;
    std::uint64_t size = 0;
    AllocId alloc_id = 0;
    DomainTag domain = DomainTag::native;
    Callsite callsite;
    Nanos timestamp = 0;
    std::uint64_t thread = 0;
};

enum class SampleKind : std::uint8_t { growth, decline, copy };

struct SampleRecord {
    SampleKind kind = SampleKind::growth;
    Nanos timestamp = 0;
    // Allocated minus freed since the last reset; copied bytes for copy samples.
    std::int64_t net_delta = 0;
    std::uint64_t footprint = 0;
    std::uint64_t peak_footprint = 0;
    double managed_fraction = 0.0;
    Callsite callsite;
    std::optional<AllocId> alloc_id;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct FootprintPoint {
    Nanos timestamp = 0;
    std::uint64_t footprint = 0;

    friend bool operator==(const FootprintPoint&, const FootprintPoint&) = default;
};

/// Smallest prime >= 10 MiB.
inline constexpr std::uint64_t kDefaultThresholdBytes = 10485767;
inline constexpr double kDefaultQuantumSeconds = 0.01;
inline constexpr std::uint64_t kDefaultCopyRateMultiple = 2;

struct ProfilerConfig {
    std::uint64_t threshold_bytes = kDefaultThresholdBytes;
    double quantum_seconds = kDefaultQuantumSeconds;
    std::uint64_t copy_rate_multiple = kDefaultCopyRateMultiple;
    std::string output_path = "heapscope-%p.samples";
    std::optional<std::uint64_t> deterministic_rng_seed;

    std::uint64_t copy_rate_bytes() const { return copy_rate_multiple * threshold_bytes; }

    // Throws std::invalid_argument when a field is out of its domain.
    void validate() const;
};

bool is_prime(std::uint64_t n);

struct StreamViolation {
    std::size_t index = 0;
    std::string reason;
};

/// Returns nullopt when every free matches a live prior alloc of the same size,
/// otherwise the first offending event.
std::optional<StreamViolation> validate_event_stream(std::span<const AllocEvent> events);

/// Exact incremental footprint accounting over an event stream.
class FootprintLedger {
public:
    // Copies leave the footprint untouched. Throws std::invalid_argument on an
    // unmatched or size-inconsistent free.
    std::uint64_t apply(const AllocEvent& event);

    std::uint64_t footprint() const { return footprint_; }
    std::uint64_t peak() const { return peak_; }
    std::size_t live_count() const { return live_.size(); }
    const std::unordered_map<AllocId, std::uint64_t>& live() const { return live_; }

private:
    std::unordered_map<AllocId, std::uint64_t> live_;
    std::uint64_t footprint_ = 0;
    std::uint64_t peak_ = 0;
};

const char* to_string(EventKind kind);
const char* to_string(SampleKind kind);
const char* to_string(DomainTag tag);
std::optional<EventKind> parse_event_kind(std::string_view text);
std::optional<SampleKind> parse_sample_kind(std::string_view text);
std::optional<DomainTag> parse_domain(std::string_view text);

}  // namespace heapscope

#endif  // HEAPSCOPE_CORE_MODEL_HPP
