/*
 * Copyright The heapscope authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "heapscope/threshold_sampler.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace heapscope {

std::uint64_t choose_sampling_threshold(std::uint64_t base) {
    if (base < 2) {
        throw std::invalid_argument("sampling threshold base must be >= 2");
    }
    std::uint64_t candidate = base;
    while (!is_prime(candidate)) {
        ++candidate;
    }
    return candidate;
}

ThresholdSampler::ThresholdSampler(std::uint64_t threshold) : threshold_(threshold) {
    if (threshold == 0) {
        throw std::invalid_argument("threshold must be positive");
    }
}

std::optional<SampleRecord> ThresholdSampler::record(const AllocEvent& event) {
    auto crossing = apply(event.kind, event.size, event.domain);
    if (!crossing) {
        return std::nullopt;
    }
    trend_.push_back(FootprintPoint{event.timestamp, crossing->footprint});

    SampleRecord sample;
    sample.kind = crossing->kind;
    sample.timestamp = event.timestamp;
    sample.net_delta = crossing->net_delta;
    sample.footprint = crossing->footprint;
    sample.peak_footprint = crossing->peak_footprint;
    sample.managed_fraction = crossing->managed_fraction;
    sample.callsite = event.callsite;
    sample.alloc_id = event.alloc_id;
    return sample;
}

}  // namespace heapscope
