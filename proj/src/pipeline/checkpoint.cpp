// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/pipeline/checkpoint.hpp"

#include <fstream>

namespace sm::pipeline {
namespace {

constexpr char kMagic[8] = {'S', 'M', 'C', 'K', 'P', 'T', '\0', '\0'};

} // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    const auto& opt = ckpt.optimizer;
    if (opt.first_moment.size() != ckpt.params.size() || opt.second_moment.size() != ckpt.params.size()) {
        throw std::invalid_argument("checkpoint: optimizer state does not match the parameter list");
    }
    util::ByteWriter w;
    w.magic(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.str(ckpt.config.to_text());
    w.u64(ckpt.step);
    w.str(ckpt.rng_state);
    w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.u64(d);
        w.array(t.data());
    }
    w.u64(opt.step);
    for (std::size_t k = 0; k < ckpt.params.size(); ++k) {
        if (opt.first_moment[k].size() != ckpt.params[k].second.numel() ||
            opt.second_moment[k].size() != ckpt.params[k].second.numel()) {
            throw std::invalid_argument("checkpoint: moment size mismatch for " + ckpt.params[k].first);
        }
        w.array(std::span<const float>(opt.first_moment[k]));
        w.array(std::span<const float>(opt.second_moment[k]));
    }
    return w.buffer();
}

Checkpoint deserialize_checkpoint(std::vector<std::uint8_t> bytes, const std::string& origin) {
    util::ByteReader r(std::move(bytes), origin);
    r.expect_magic(kMagic, sizeof kMagic);
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        r.fail("unsupported checkpoint version " + std::to_string(version) + " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ckpt;
    const auto config_offset = r.offset();
    try {
        ckpt.config.apply_text(r.str(), origin + " (config)");
        ckpt.config.validate();
    } catch (const model::ConfigError& e) {
        throw util::ParseError(std::string(e.what()) + " at byte offset " + std::to_string(config_offset));
    }
    ckpt.step = r.u64();
    ckpt.rng_state = r.str();
    const auto count = r.u32();
    for (std::uint32_t k = 0; k < count; ++k) {
        auto name = r.str();
        const auto rank = r.u32();
        if (rank > 8) r.fail("implausible tensor rank " + std::to_string(rank));
        ad::Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape.push_back(static_cast<std::size_t>(r.u64()));
            if (shape.back() != 0 && numel > r.remaining() / shape.back()) r.fail("tensor " + name + " exceeds data");
            numel *= shape.back();
        }
        auto values = r.array<float>(numel);
        ckpt.params.emplace_back(std::move(name), ad::Tensor<float>(std::move(shape), std::move(values), true));
    }
    ckpt.optimizer.config = ckpt.config.optimizer();
    ckpt.optimizer.step = r.u64();
    for (const auto& [name, t] : ckpt.params) {
        ckpt.optimizer.first_moment.push_back(r.array<float>(t.numel()));
        ckpt.optimizer.second_moment.push_back(r.array<float>(t.numel()));
    }
    if (!r.at_end()) r.fail("trailing bytes");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    // write-then-rename so an interrupted save never leaves a truncated checkpoint behind
    auto tmp = path;
    tmp += ".tmp";
    util::ByteWriter w;
    const auto bytes = serialize_checkpoint(ckpt);
    w.bytes(bytes.data(), bytes.size());
    w.save(tmp);
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(std::move(data), path.string());
}

ReconModel<float> restore_model(const Checkpoint& ckpt) {
    std::mt19937_64 scratch(0);
    auto m = init_model<float>(ckpt.config, scratch);
    auto named = m.named();
    if (named.size() != ckpt.params.size()) {
        throw util::ParseError("checkpoint holds " + std::to_string(ckpt.params.size()) + " tensors, model expects " +
                               std::to_string(named.size()));
    }
    for (std::size_t k = 0; k < named.size(); ++k) {
        const auto& [name, stored] = ckpt.params[k];
        if (name != named[k].first || stored.shape() != named[k].second.shape()) {
            throw util::ParseError("checkpoint tensor " + std::to_string(k) + " ('" + name + "') does not match model tensor '" +
                                   named[k].first + "'");
        }
        std::copy(stored.data().begin(), stored.data().end(), named[k].second.mutable_data().begin());
    }
    return m;
}

} // namespace sm::pipeline
