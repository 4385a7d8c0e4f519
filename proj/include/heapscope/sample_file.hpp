/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_SAMPLE_FILE_HPP
#define HEAPSCOPE_SAMPLE_FILE_HPP

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "heapscope/core_model.hpp"
#include "heapscope/leak_detector.hpp"

// Sample file layout (UTF-8, one record per '\n'-terminated line):
//
//   #heapscope  1  threshold=T  copy_rate=R  seed=S|none  start_ns=N
//   kind  timestamp_ns  net_delta  footprint  peak  managed_fraction  file  line  alloc_id
//   ...
//   #leak  file  line  mallocs  frees          (zero or more, written at finalize)
//   #end  allocs=  frees=  copies=  samples=  peak=  elapsed_ns=  ...
//
// Fields are tab-separated, integers decimal, managed_fraction fixed with six
// decimals, alloc_id "-" for copy records.

namespace heapscope {

inline constexpr int kSampleFormatVersion = 1;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SampleFileHeader {
    int version = kSampleFormatVersion;
    std::uint64_t threshold_bytes = kDefaultThresholdBytes;
    std::uint64_t copy_rate_bytes = kDefaultThresholdBytes * kDefaultCopyRateMultiple;
    std::optional<std::uint64_t> seed;
    Nanos start_ns = 0;

    friend bool operator==(const SampleFileHeader&, const SampleFileHeader&) = default;
};

struct SampleFileFooter {
    std::uint64_t allocs = 0;
    std::uint64_t frees = 0;
    std::uint64_t copies = 0;
    std::uint64_t samples = 0;
    std::uint64_t peak_footprint = 0;
    Nanos elapsed_ns = 0;
    std::uint64_t unknown_frees = 0;
    std::uint64_t guarded_calls = 0;
    std::uint64_t reentrant_records = 0;
    std::uint64_t ring_waits = 0;

    friend bool operator==(const SampleFileFooter&, const SampleFileFooter&) = default;
};

std::string format_fixed6(double value);

std::string format_header(const SampleFileHeader& header);
std::string format_record(const SampleRecord& record);
std::string format_leak_line(const Callsite& callsite, const LeakScore& score);
std::string format_footer(const SampleFileFooter& footer);

struct SampleFile {
    SampleFileHeader header;
    std::vector<SampleRecord> records;
    std::map<Callsite, LeakScore> leak_scores;
    std::optional<SampleFileFooter> footer;
    std::vector<std::string> warnings;
};

/// Throws FormatError naming `name:line` for a malformed line, and on a
/// format version other than kSampleFormatVersion. A final line without its
/// terminator is dropped with a warning.
SampleFile parse_sample_file(std::istream& in, std::string_view name);
SampleFile read_sample_file(const std::string& path);

}  // namespace heapscope

#endif  // HEAPSCOPE_SAMPLE_FILE_HPP
