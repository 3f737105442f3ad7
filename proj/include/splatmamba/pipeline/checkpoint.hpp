// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/optim.hpp"
#include "splatmamba/pipeline/config.hpp"
#include "splatmamba/pipeline/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sm::pipeline {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "SMCKPT\0\0", uint32 version, config text, uint64 step, RNG state text,
/// uint32 parameter count, then per parameter (name, rank, dims, float32 values),
/// then uint64 optimizer step and per parameter the two float32 moment arrays.
struct Checkpoint {
    Config config;
    std::uint64_t step = 0;
    std::string rng_state;
    ad::NamedParams<float> params;
    ad::OptimizerState<float> optimizer;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::vector<std::uint8_t> bytes, const std::string& origin);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws util::ParseError on malformed data or a version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the model for ckpt.config and copies the stored values into it (names and shapes must match).
ReconModel<float> restore_model(const Checkpoint& ckpt);

} // namespace sm::pipeline
