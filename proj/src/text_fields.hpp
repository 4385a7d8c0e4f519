/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

// Helpers shared by the line-delimited readers and writers.

#ifndef HEAPSCOPE_SRC_TEXT_FIELDS_HPP
#define HEAPSCOPE_SRC_TEXT_FIELDS_HPP

#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace heapscope::detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

template <typename Int>
std::optional<Int> parse_int(std::string_view text) {
    Int value{};
    if (text.empty()) {
        return std::nullopt;
    }
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        return std::nullopt;
    }
    return value;
}

inline std::optional<double> parse_double(std::string_view text) {
    double value = 0.0;
    if (text.empty()) {
        return std::nullopt;
    }
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        return std::nullopt;
    }
    return value;
}

// Tabs and newlines would break the record framing.
inline std::string sanitize_field(std::string_view text) {
    std::string out(text);
    for (char& c : out) {
        if (c == '\t' || c == '\n' || c == '\r') {
            c = ' ';
        }
    }
    return out;
}

// "key=value" -> value, when the key matches.
inline std::optional<std::string_view> keyed_value(std::string_view field, std::string_view key) {
    if (field.size() <= key.size() || field.substr(0, key.size()) != key || field[key.size()] != '=') {
        return std::nullopt;
    }
    return field.substr(key.size() + 1);
}

}  // namespace heapscope::detail

#endif  // HEAPSCOPE_SRC_TEXT_FIELDS_HPP
