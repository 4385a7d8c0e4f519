/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/timer_log.hpp"

#include <fstream>
#include <iterator>

#include "heapscope/sample_file.hpp"
#include "text_fields.hpp"

namespace heapscope {

using detail::keyed_value;
using detail::parse_int;
using detail::sanitize_field;
using detail::split_tabs;

std::string format_timer_header(std::int64_t quantum_ns) {
    return "#heapscope-timer\t" + std::to_string(kTimerFormatVersion) + "\tquantum_ns=" + std::to_string(quantum_ns) +
           '\n';
}

std::string format_timer_sample(const TimerSample& sample) {
    std::string out = "sample\t" + std::to_string(sample.elapsed_virtual_ns) + '\t' +
                      std::to_string(sample.quantum_ns) + '\t' + std::to_string(sample.main_stack.size()) + '\t' +
                      std::to_string(sample.threads.size()) + '\n';
    for (const Frame& f : sample.main_stack) {
        out += "frame\t";
        out += f.in_profiled_code ? '1' : '0';
        out += '\t' + sanitize_field(f.callsite.file) + '\t' + std::to_string(f.callsite.line) + '\n';
    }
    for (const ThreadSnapshot& t : sample.threads) {
        out += "thread\t" + std::to_string(t.thread) + '\t' +
               (t.status == ThreadStatus::executing ? "executing" : "sleeping") + '\t' + (t.in_call ? '1' : '0') +
               '\t' + sanitize_field(t.callsite.file) + '\t' + std::to_string(t.callsite.line) + '\n';
    }
    return out;
}

namespace {

struct Cursor {
    std::string_view name;
    std::size_t line_number = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(std::string(name) + ":" + std::to_string(line_number) + ": " + what);
    }

    template <typename Int>
    Int integer(std::string_view text) const {
        auto v = parse_int<Int>(text);
        if (!v) {
            fail("bad integer '" + std::string(text) + "'");
        }
        return *v;
    }

    Callsite callsite(std::string_view file, std::string_view line) const {
        const auto n = integer<std::uint32_t>(line);
        if (file.empty() || n < 1) {
            fail("invalid callsite");
        }
        return Callsite(std::string(file), n);
    }

    bool flag(std::string_view text) const {
        if (text != "0" && text != "1") {
            fail("expected 0 or 1");
        }
        return text == "1";
    }
};

}  // namespace

TimerLog parse_timer_log(std::istream& in, std::string_view name) {
    const std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    bool truncated = false;
    while (pos < content.size()) {
        const std::size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) {
            truncated = true;
            break;
        }
        lines.emplace_back(content.data() + pos, nl - pos);
        pos = nl + 1;
    }

    TimerLog log;
    Cursor cur{name};
    if (lines.empty()) {
        throw FormatError(std::string(name) + ": empty timer log (no header)");
    }
    cur.line_number = 1;
    auto header = split_tabs(lines[0]);
    if (header.size() < 2 || header[0] != "#heapscope-timer") {
        cur.fail("missing '#heapscope-timer' header");
    }
    const int version = cur.integer<int>(header[1]);
    if (version != kTimerFormatVersion) {
        cur.fail("unsupported timer log version " + std::to_string(version) + " (this reader supports " +
                 std::to_string(kTimerFormatVersion) + ")");
    }
    for (std::size_t i = 2; i < header.size(); ++i) {
        if (auto v = keyed_value(header[i], "quantum_ns")) {
            log.quantum_ns = cur.integer<std::int64_t>(*v);
        }
    }

    std::size_t i = 1;
    while (i < lines.size()) {
        cur.line_number = i + 1;
        auto fields = split_tabs(lines[i]);
        if (fields.size() != 5 || fields[0] != "sample") {
            cur.fail("expected a 'sample' line");
        }
        TimerSample sample;
        sample.elapsed_virtual_ns = cur.integer<std::int64_t>(fields[1]);
        sample.quantum_ns = cur.integer<std::int64_t>(fields[2]);
        if (sample.elapsed_virtual_ns < 0 || sample.quantum_ns <= 0) {
            cur.fail("timer sample needs elapsed >= 0 and quantum > 0");
        }
        const auto n_frames = cur.integer<std::size_t>(fields[3]);
        const auto n_threads = cur.integer<std::size_t>(fields[4]);
        if (i + 1 + n_frames + n_threads > lines.size()) {
            log.warnings.push_back(std::string(name) + ":" + std::to_string(i + 1) +
                                   ": incomplete final timer sample ignored");
            return log;
        }
        ++i;
        for (std::size_t f = 0; f < n_frames; ++f, ++i) {
            cur.line_number = i + 1;
            auto ff = split_tabs(lines[i]);
            if (ff.size() != 4 || ff[0] != "frame") {
                cur.fail("expected a 'frame' line");
            }
            sample.main_stack.push_back(Frame{cur.callsite(ff[2], ff[3]), cur.flag(ff[1])});
        }
        for (std::size_t t = 0; t < n_threads; ++t, ++i) {
            cur.line_number = i + 1;
            auto tf = split_tabs(lines[i]);
            if (tf.size() != 6 || tf[0] != "thread") {
                cur.fail("expected a 'thread' line");
            }
            ThreadSnapshot snap;
            snap.thread = cur.integer<std::uint64_t>(tf[1]);
            if (tf[2] == "executing") {
                snap.status = ThreadStatus::executing;
            } else if (tf[2] == "sleeping") {
                snap.status = ThreadStatus::sleeping;
            } else {
                cur.fail("unknown thread status '" + std::string(tf[2]) + "'");
            }
            snap.in_call = cur.flag(tf[3]);
            snap.callsite = cur.callsite(tf[4], tf[5]);
            sample.threads.push_back(std::move(snap));
        }
        log.samples.push_back(std::move(sample));
    }
    if (truncated) {
        log.warnings.push_back(std::string(name) + ": incomplete final line ignored");
    }
    return log;
}

TimerLog read_timer_log(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(path + ": cannot open");
    }
    return parse_timer_log(in, path);
}

}  // namespace heapscope
