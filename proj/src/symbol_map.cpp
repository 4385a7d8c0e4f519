/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/symbol_map.hpp"

#include <dlfcn.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <charconv>
#include <tuple>

#include "heapscope/sample_file.hpp"
#include "text_fields.hpp"

namespace heapscope {

namespace {

std::string_view basename_of(std::string_view path) {
    const auto slash = path.rfind('/');
    return slash == std::string_view::npos ? path : path.substr(slash + 1);
}

std::optional<std::uint64_t> parse_hex(std::string_view text) {
    if (text.starts_with("0x") || text.starts_with("0X")) {
        text.remove_prefix(2);
    }
    std::uint64_t value = 0;
    if (text.empty()) {
        return std::nullopt;
    }
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value, 16);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        return std::nullopt;
    }
    return value;
}

bool range_less(const SymbolMap::Range& a, const SymbolMap::Range& b) {
    return std::tie(a.module, a.start) < std::tie(b.module, b.start);
}

}  // namespace

SymbolMap SymbolMap::parse(std::istream& in, std::string_view name) {
    SymbolMap map;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty() || line.front() == '#') {
            continue;
        }
        auto f = detail::split_tabs(line);
        auto start = f.size() == 5 ? parse_hex(f[1]) : std::nullopt;
        auto end = f.size() == 5 ? parse_hex(f[2]) : std::nullopt;
        auto ln = f.size() == 5 ? detail::parse_int<std::uint32_t>(f[4]) : std::nullopt;
        if (!start || !end || !ln || *ln < 1 || *end <= *start || f[0].empty() || f[3].empty()) {
            throw FormatError(std::string(name) + ":" + std::to_string(number) + ": malformed symbol map line");
        }
        map.add(Range{std::string(f[0]), *start, *end, Callsite(std::string(f[3]), *ln)});
    }
    return map;
}

SymbolMap SymbolMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError(path + ": cannot open");
    }
    return parse(in, path);
}

void SymbolMap::add(Range range) {
    auto pos = std::upper_bound(ranges_.begin(), ranges_.end(), range, range_less);
    ranges_.insert(pos, std::move(range));
}

std::optional<Callsite> SymbolMap::resolve(std::string_view module, std::uint64_t offset) const {
    // Last range in this module starting at or before offset.
    auto it = std::upper_bound(ranges_.begin(), ranges_.end(), std::make_pair(module, offset),
                               [](const auto& key, const Range& r) {
                                   return std::tie(key.first, key.second) <
                                          std::tie(static_cast<const std::string&>(r.module), r.start);
                               });
    if (it == ranges_.begin()) {
        return std::nullopt;
    }
    --it;
    if (it->module != module || offset >= it->end) {
        return std::nullopt;
    }
    return it->callsite;
}

std::optional<Callsite> SymbolMap::resolve_address(const void* address) const {
    if (ranges_.empty() || address == nullptr) {
        return std::nullopt;
    }
    Dl_info info{};
    if (dladdr(address, &info) == 0 || info.dli_fname == nullptr) {
        return std::nullopt;
    }
    const auto offset = reinterpret_cast<std::uintptr_t>(address) - reinterpret_cast<std::uintptr_t>(info.dli_fbase);
    return resolve(basename_of(info.dli_fname), offset);
}

}  // namespace heapscope
