// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

namespace sm::pipeline {

struct GradcheckSummary {
    int scenes = 0;
    double max_rel_error = 0.0;
};

/// Central-difference check of the double-precision renderer on random scenes of up to
/// `max_splats` splats at size x size, skipping scenes with pixel samples near the cutoff.
GradcheckSummary renderer_gradcheck(int scenes, int max_splats, int size, std::uint64_t seed);

/// Same for the selective scan on random short sequences.
GradcheckSummary scan_gradcheck(int cases, std::uint64_t seed);

struct ScanTiming {
    std::size_t length = 0;
    double median_seconds = 0.0;
};

/// Median forward wall time of selective_scan (float) per sequence length.
std::vector<ScanTiming> bench_scan(const std::vector<std::size_t>& lengths, std::size_t d_inner, std::size_t d_state, int runs,
                                   std::uint64_t seed);

} // namespace sm::pipeline
