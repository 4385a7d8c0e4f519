/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef HEAPSCOPE_SYMBOL_MAP_HPP
#define HEAPSCOPE_SYMBOL_MAP_HPP

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "heapscope/core_model.hpp"

namespace heapscope {

/// User-supplied map from code addresses to source lines, keyed by module
/// basename and module-relative offset so it survives ASLR.
///
/// File format, one range per line:  module  start_hex  end_hex  file  line
/// (end exclusive; '#' starts a comment line).
class SymbolMap {
public:
    struct Range {
        std::string module;
        std::uint64_t start = 0;
        std::uint64_t end = 0;
        Callsite callsite;
    };

    static SymbolMap parse(std::istream& in, std::string_view name);  // throws FormatError
    static SymbolMap load(const std::string& path);

    void add(Range range);
    std::optional<Callsite> resolve(std::string_view module, std::uint64_t offset) const;
    /// Looks the address up with dladdr and resolves the module-relative offset.
    std::optional<Callsite> resolve_address(const void* address) const;

    bool empty() const { return ranges_.empty(); }
    std::size_t size() const { return ranges_.size(); }

private:
    std::vector<Range> ranges_;  // sorted by (module, start)
};

}  // namespace heapscope

#endif  // HEAPSCOPE_SYMBOL_MAP_HPP
