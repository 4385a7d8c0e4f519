/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/sample_file.hpp"

#include <charconv>
#include <fstream>
#include <iterator>
#include <sstream>

#include "text_fields.hpp"

namespace heapscope {

using detail::keyed_value;
using detail::parse_double;
using detail::parse_int;
using detail::sanitize_field;
using detail::split_tabs;

std::string format_fixed6(double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed, 6);
    if (ec != std::errc{}) {
        return "nan";
    }
    std::string out(buf, end);
    if (out == "-0.000000") {
        out.erase(0, 1);
    }
    return out;
}

std::string format_header(const SampleFileHeader& header) {
    std::string line = "#heapscope\t" + std::to_string(header.version);
    line += "\tthreshold=" + std::to_string(header.threshold_bytes);
    line += "\tcopy_rate=" + std::to_string(header.copy_rate_bytes);
    line += "\tseed=" + (header.seed ? std::to_string(*header.seed) : std::string("none"));
    line += "\tstart_ns=" + std::to_string(header.start_ns);
    line += '\n';
    return line;
}

std::string format_record(const SampleRecord& record) {
    std::string line = to_string(record.kind);
    line += '\t' + std::to_string(record.timestamp);
    line += '\t' + std::to_string(record.net_delta);
    line += '\t' + std::to_string(record.footprint);
    line += '\t' + std::to_string(record.peak_footprint);
    line += '\t' + format_fixed6(record.managed_fraction);
    line += '\t' + sanitize_field(record.callsite.file);
    line += '\t' + std::to_string(record.callsite.line);
    line += '\t' + (record.alloc_id ? std::to_string(*record.alloc_id) : std::string("-"));
    line += '\n';
    return line;
}

std::string format_leak_line(const Callsite& callsite, const LeakScore& score) {
    return "#leak\t" + sanitize_field(callsite.file) + '\t' + std::to_string(callsite.line) + '\t' +
           std::to_string(score.mallocs) + '\t' + std::to_string(score.frees) + '\n';
}

std::string format_footer(const SampleFileFooter& f) {
    std::string line = "#end";
    line += "\tallocs=" + std::to_string(f.allocs);
    line += "\tfrees=" + std::to_string(f.frees);
    line += "\tcopies=" + std::to_string(f.copies);
    line += "\tsamples=" + std::to_string(f.samples);
    line += "\tpeak=" + std::to_string(f.peak_footprint);
    line += "\telapsed_ns=" + std::to_string(f.elapsed_ns);
    line += "\tunknown_frees=" + std::to_string(f.unknown_frees);
    line += "\tguarded_calls=" + std::to_string(f.guarded_calls);
    line += "\treentrant_records=" + std::to_string(f.reentrant_records);
    line += "\tring_waits=" + std::to_string(f.ring_waits);
    line += '\n';
    return line;
}

namespace {

class LineParser {
public:
    LineParser(std::string_view name, std::size_t line_number) : name_(name), line_number_(line_number) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(std::string(name_) + ":" + std::to_string(line_number_) + ": " + what);
    }

    template <typename Int>
    Int integer(std::string_view text, const char* field) const {
        auto value = parse_int<Int>(text);
        if (!value) {
            fail(std::string("bad ") + field + " '" + std::string(text) + "'");
        }
        return *value;
    }

private:
    std::string_view name_;
    std::size_t line_number_;
};

SampleFileHeader parse_header(std::string_view line, const LineParser& p) {
    auto fields = split_tabs(line);
    if (fields.size() < 2 || fields[0] != "#heapscope") {
        p.fail("missing '#heapscope' header");
    }
    SampleFileHeader header;
    header.version = p.integer<int>(fields[1], "format version");
    if (header.version != kSampleFormatVersion) {
        p.fail("unsupported sample format version " + std::to_string(header.version) + " (this reader supports " +
               std::to_string(kSampleFormatVersion) + ")");
    }
    for (std::size_t i = 2; i < fields.size(); ++i) {
        if (auto v = keyed_value(fields[i], "threshold")) {
            header.threshold_bytes = p.integer<std::uint64_t>(*v, "threshold");
        } else if (auto v = keyed_value(fields[i], "copy_rate")) {
            header.copy_rate_bytes = p.integer<std::uint64_t>(*v, "copy_rate");
        } else if (auto v = keyed_value(fields[i], "seed")) {
            if (*v != "none") {
                header.seed = p.integer<std::uint64_t>(*v, "seed");
            }
        } else if (auto v = keyed_value(fields[i], "start_ns")) {
            header.start_ns = p.integer<Nanos>(*v, "start_ns");
        }
    }
    return header;
}

SampleFileFooter parse_footer(std::string_view line, const LineParser& p) {
    SampleFileFooter f;
    auto fields = split_tabs(line);
    for (std::size_t i = 1; i < fields.size(); ++i) {
        auto field = fields[i];
        const auto eq = field.find('=');
        if (eq == std::string_view::npos) {
            p.fail("footer field without '='");
        }
        const auto key = field.substr(0, eq);
        const auto value = p.integer<std::uint64_t>(field.substr(eq + 1), "footer value");
        if (key == "allocs") f.allocs = value;
        else if (key == "frees") f.frees = value;
        else if (key == "copies") f.copies = value;
        else if (key == "samples") f.samples = value;
        else if (key == "peak") f.peak_footprint = value;
        else if (key == "elapsed_ns") f.elapsed_ns = value;
        else if (key == "unknown_frees") f.unknown_frees = value;
        else if (key == "guarded_calls") f.guarded_calls = value;
        else if (key == "reentrant_records") f.reentrant_records = value;
        else if (key == "ring_waits") f.ring_waits = value;
    }
    return f;
}

Callsite parse_callsite(std::string_view file, std::string_view line, const LineParser& p) {
    const auto number = p.integer<std::uint32_t>(line, "line number");
    if (file.empty() || number < 1) {
        p.fail("invalid callsite");
    }
    return Callsite(std::string(file), number);
}

SampleRecord parse_record(std::string_view line, const SampleFileHeader& header, const LineParser& p) {
    auto fields = split_tabs(line);
    if (fields.size() != 9) {
        p.fail("expected 9 fields, found " + std::to_string(fields.size()));
    }
    SampleRecord r;
    auto kind = parse_sample_kind(fields[0]);
    if (!kind) {
        p.fail("unknown record kind '" + std::string(fields[0]) + "'");
    }
    r.kind = *kind;
    r.timestamp = p.integer<Nanos>(fields[1], "timestamp");
    r.net_delta = p.integer<std::int64_t>(fields[2], "net_delta");
    r.footprint = p.integer<std::uint64_t>(fields[3], "footprint");
    r.peak_footprint = p.integer<std::uint64_t>(fields[4], "peak");
    auto fraction = parse_double(fields[5]);
    if (!fraction || *fraction < 0.0 || *fraction > 1.0) {
        p.fail("managed_fraction outside [0,1]");
    }
    r.managed_fraction = *fraction;
    r.callsite = parse_callsite(fields[6], fields[7], p);
    if (fields[8] != "-") {
        r.alloc_id = p.integer<AllocId>(fields[8], "alloc_id");
    }
    if (r.footprint > r.peak_footprint) {
        p.fail("footprint exceeds peak");
    }
    if (r.kind != SampleKind::copy) {
        const std::uint64_t magnitude =
            r.net_delta < 0 ? static_cast<std::uint64_t>(-r.net_delta) : static_cast<std::uint64_t>(r.net_delta);
        if (magnitude < header.threshold_bytes) {
            p.fail("|net_delta| below the file's threshold");
        }
        if ((r.kind == SampleKind::growth) != (r.net_delta > 0)) {
            p.fail("record kind disagrees with the sign of net_delta");
        }
    }
    return r;
}

}  // namespace

SampleFile parse_sample_file(std::istream& in, std::string_view name) {
    const std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    SampleFile file;
    bool have_header = false;
    std::size_t line_number = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        ++line_number;
        const std::size_t newline = content.find('\n', pos);
        if (newline == std::string::npos) {
            file.warnings.push_back(std::string(name) + ":" + std::to_string(line_number) +
                                    ": incomplete final record ignored");
            break;
        }
        std::string_view line(content.data() + pos, newline - pos);
        pos = newline + 1;
        LineParser p(name, line_number);

        if (!have_header) {
            file.header = parse_header(line, p);
            have_header = true;
            continue;
        }
        if (file.footer) {
            p.fail("content after the #end footer");
        }
        if (line.starts_with("#end")) {
            file.footer = parse_footer(line, p);
        } else if (line.starts_with("#leak\t")) {
            auto fields = split_tabs(line);
            if (fields.size() != 5) {
                p.fail("malformed #leak line");
            }
            LeakScore score{p.integer<std::uint64_t>(fields[3], "mallocs"),
                            p.integer<std::uint64_t>(fields[4], "frees")};
            if (score.frees > score.mallocs) {
                p.fail("leak score with frees > mallocs");
            }
            auto& merged = file.leak_scores[parse_callsite(fields[1], fields[2], p)];
            merged.mallocs += score.mallocs;
            merged.frees += score.frees;
        } else if (line.starts_with("#")) {
            // Comment lines are reserved for future metadata.
            continue;
        } else {
            file.records.push_back(parse_record(line, file.header, p));
        }
    }
    if (!have_header) {
        throw FormatError(std::string(name) + ": empty sample file (no header)");
    }
    return file;
}

SampleFile read_sample_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(path + ": cannot open");
    }
    return parse_sample_file(in, path);
}

}  // namespace heapscope
