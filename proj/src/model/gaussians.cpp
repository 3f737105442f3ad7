// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/model/gaussians.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sm::model {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'G', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T, std::size_t K>
void read_row(const ad::Tensor<T>& t, std::size_t row, std::array<double, K>& out) {
    for (std::size_t k = 0; k < K; ++k) {
        out[k] = static_cast<double>(t.data()[row * K + k]);
    }
}

} // namespace

template <typename T>
std::vector<Splat> to_splats(const GaussianSet<T>& set) {
    const std::size_t n = set.count();
    std::vector<Splat> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        read_row(set.positions, i, out[i].position);
        // the activations already bound these; clamping only absorbs float rounding
        for (auto& v : out[i].position) {
            v = std::clamp(v, -1.0, 1.0);
        }
        out[i].opacity = std::clamp(static_cast<double>(set.opacity.data()[i]), 0.0, 1.0);
        read_row(set.sh, i, out[i].sh);
        read_row(set.scales, i, out[i].scale);
        read_row(set.rotations, i, out[i].rotation);
    }
    return out;
}

template <typename T>
GaussianSet<T> from_splats(std::span<const Splat> splats, bool requires_grad) {
    const std::size_t n = splats.size();
    std::vector<T> pos, op, sh, sc, rot;
    pos.reserve(n * 3);
    op.reserve(n);
    sh.reserve(n * kShCoeffs);
    sc.reserve(n * 3);
    rot.reserve(n * 4);
    for (const auto& s : splats) {
        pos.insert(pos.end(), s.position.begin(), s.position.end());
        op.push_back(static_cast<T>(s.opacity));
        sh.insert(sh.end(), s.sh.begin(), s.sh.end());
        sc.insert(sc.end(), s.scale.begin(), s.scale.end());
        rot.insert(rot.end(), s.rotation.begin(), s.rotation.end());
    }
    GaussianSet<T> set;
    set.positions = ad::Tensor<T>({n, 3}, std::move(pos), requires_grad);
    set.opacity = ad::Tensor<T>({n, 1}, std::move(op), requires_grad);
    set.sh = ad::Tensor<T>({n, kShCoeffs}, std::move(sh), requires_grad);
    set.scales = ad::Tensor<T>({n, 3}, std::move(sc), requires_grad);
    set.rotations = ad::Tensor<T>({n, 4}, std::move(rot), requires_grad);
    return set;
}

std::vector<float> flatten(std::span<const Splat> splats) {
    std::vector<float> out;
    out.reserve(splats.size() * kSplatParams);
    for (const auto& s : splats) {
        for (double v : s.position) out.push_back(static_cast<float>(v));
        out.push_back(static_cast<float>(s.opacity));
        for (double v : s.sh) out.push_back(static_cast<float>(v));
        for (double v : s.scale) out.push_back(static_cast<float>(v));
        for (double v : s.rotation) out.push_back(static_cast<float>(v));
    }
    return out;
}

std::vector<Splat> unflatten(std::span<const float> records) {
    if (records.size() % kSplatParams != 0) {
        throw FormatError("splat records: " + std::to_string(records.size()) + " values is not a multiple of 23");
    }
    std::vector<Splat> out(records.size() / kSplatParams);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float* r = records.data() + i * kSplatParams;
        auto& s = out[i];
        std::size_t k = 0;
        for (auto& v : s.position) v = r[k++];
        s.opacity = r[k++];
        for (auto& v : s.sh) v = r[k++];
        for (auto& v : s.scale) v = r[k++];
        for (auto& v : s.rotation) v = r[k++];
    }
    return out;
}

std::optional<std::string> check_invariants(std::span<const Splat> splats, double scale_max) {
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const auto& s = splats[i];
        std::ostringstream err;
        err << "splat " << i << ": ";
        const auto flat = flatten(std::span<const Splat>(&s, 1));
        for (float v : flat) {
            if (!std::isfinite(v)) {
                err << "non-finite parameter";
                return err.str();
            }
        }
        for (double p : s.position) {
            if (p < -1.0 || p > 1.0) {
                err << "position " << p << " outside [-1, 1]";
                return err.str();
            }
        }
        if (s.opacity < 0.0 || s.opacity > 1.0) {
            err << "opacity " << s.opacity << " outside [0, 1]";
            return err.str();
        }
        for (double v : s.scale) {
            if (!(v > 0.0) || v > scale_max * (1.0 + 1e-6)) {
                err << "scale " << v << " outside (0, " << scale_max << "]";
                return err.str();
            }
        }
        double norm2 = 0.0;
        for (double q : s.rotation) {
            norm2 += q * q;
        }
        if (std::abs(std::sqrt(norm2) - 1.0) > 1e-5) {
            err << "quaternion norm " << std::sqrt(norm2);
            return err.str();
        }
    }
    return std::nullopt;
}

void write_gaussian_file(const std::filesystem::path& path, std::span<const Splat> splats) {
    util::ByteWriter w;
    w.magic(kMagic, 4);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(splats.size()));
    const auto flat = flatten(splats);
    w.array(std::span<const float>(flat));
    w.save(path);
}

std::vector<Splat> read_gaussian_file(const std::filesystem::path& path) {
    auto r = util::ByteReader::load(path);
    r.expect_magic(kMagic, 4);
    if (const auto v = r.u32(); v != kVersion) {
        r.fail("unsupported version " + std::to_string(v));
    }
    const auto n = r.u32();
    auto records = r.array<float>(static_cast<std::size_t>(n) * kSplatParams);
    if (!r.at_end()) {
        r.fail("trailing bytes");
    }
    return unflatten(records);
}

template std::vector<Splat> to_splats(const GaussianSet<float>&);
template std::vector<Splat> to_splats(const GaussianSet<double>&);
template GaussianSet<float> from_splats(std::span<const Splat>, bool);
template GaussianSet<double> from_splats(std::span<const Splat>, bool);

} // namespace sm::model
