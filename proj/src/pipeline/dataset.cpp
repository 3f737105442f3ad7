// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/pipeline/dataset.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace sm::pipeline {
namespace {

constexpr double kObjectRadius = 0.45;

std::mt19937_64 object_rng(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), 0x5eedu};
    return std::mt19937_64(seq);
}

std::string numbered(const char* stem, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03zu.%s", stem, i, ext);
    return buf;
}

} // namespace

std::vector<model::Splat> synthetic_object(std::uint64_t seed, std::size_t index, const DatasetOptions& opt) {
    if (opt.min_splats < 1 || opt.max_splats < opt.min_splats) {
        throw std::invalid_argument("need 1 <= min_splats <= max_splats");
    }
    auto rng = object_rng(seed, index);
    std::uniform_int_distribution<int> count(opt.min_splats, opt.max_splats);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<model::Splat> splats(static_cast<std::size_t>(count(rng)));
    for (auto& s : splats) {
        // uniform in a ball
        Eigen::Vector3d dir(normal(rng), normal(rng), normal(rng));
        dir.normalize();
        const double r = kObjectRadius * std::cbrt(unit(rng));
        for (int k = 0; k < 3; ++k) s.position[k] = r * dir[k];
        s.opacity = 0.7 + 0.3 * unit(rng);
        for (int k = 0; k < 3; ++k) s.scale[k] = 0.04 * std::pow(4.0, unit(rng)); // log-uniform in [0.04, 0.16]
        Eigen::Vector4d q(normal(rng), normal(rng), normal(rng), normal(rng));
        q.normalize();
        for (int k = 0; k < 4; ++k) s.rotation[k] = q[k];
        for (int c = 0; c < 3; ++c) {
            const double base = 0.1 + 0.8 * unit(rng);
            s.sh[c] = (base - 0.5) / render::kShC0;
            for (int b = 1; b < 4; ++b) s.sh[b * 3 + c] = 0.15 * (2.0 * unit(rng) - 1.0);
        }
    }
    return splats;
}

std::vector<model::Camera> anchor_cameras(std::size_t views, int resolution) {
    std::vector<model::Camera> cams;
    cams.reserve(views);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < views; ++i) {
        const double y = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(views);
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double phi = golden * static_cast<double>(i);
        const Eigen::Vector3d eye = kAnchorRadius * Eigen::Vector3d(r * std::cos(phi), y, r * std::sin(phi));
        cams.push_back(model::Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY(), resolution, resolution));
    }
    return cams;
}

std::filesystem::path object_dir(const std::filesystem::path& dir, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "object_%04zu", index);
    return dir / buf;
}

std::filesystem::path view_path(const std::filesystem::path& object, std::size_t view, const char* ext) {
    return object / numbered("view", view, ext);
}

std::filesystem::path mask_path(const std::filesystem::path& object, std::size_t view) {
    return object / numbered("mask", view, "png");
}

void gen_synthetic_dataset(const std::filesystem::path& dir, const DatasetOptions& opt) {
    if (opt.objects == 0 || opt.views == 0 || opt.resolution <= 0) {
        throw std::invalid_argument("objects, views and resolution must be positive");
    }
    std::filesystem::create_directories(dir);
    {
        std::ofstream m(dir / "manifest.txt", std::ios::trunc);
        if (!m) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
        m << "format = splatmamba-synthetic-1\n"
          << "objects = " << opt.objects << "\n"
          << "views = " << opt.views << "\n"
          << "resolution = " << opt.resolution << "\n"
          << "seed = " << opt.seed << "\n"
          << "min_splats = " << opt.min_splats << "\n"
          << "max_splats = " << opt.max_splats << "\n";
    }
    const auto cams = anchor_cameras(opt.views, opt.resolution);
    const std::array<double, 3> white{1, 1, 1};
    for (std::size_t o = 0; o < opt.objects; ++o) {
        const auto od = object_dir(dir, o);
        std::filesystem::create_directories(od);
        const auto splats = synthetic_object(opt.seed, o, opt);
        if (const auto bad = model::check_invariants(splats)) throw std::logic_error("generated object violates " + *bad);
        model::write_gaussian_file(od / "gaussians.smgs", splats);
        write_cameras(od / "cameras.txt", cams);
        for (std::size_t v = 0; v < cams.size(); ++v) {
            const auto img = render::render(splats, cams[v], white);
            const auto views = view_images(img, white);
            loss::Mask mask(opt.resolution, opt.resolution);
            for (std::size_t p = 0; p < mask.data.size(); ++p) mask.data[p] = img.alpha[p] > 0.5 ? 1 : 0;
            if (mask.area() == 0) {
                throw std::logic_error("object " + std::to_string(o) + " view " + std::to_string(v) + " has an empty mask");
            }
            write_png(view_path(od, v, "png"), views.rgb);
            write_raw_image(view_path(od, v, "smrf"), views.rgba);
            write_png(mask_path(od, v), from_mask(mask));
        }
    }
}

DatasetOptions read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.txt";
    std::ifstream in(path);
    if (!in) throw DataError("missing dataset manifest " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto key = line.substr(0, eq), val = line.substr(eq + 1);
        key.erase(key.find_last_not_of(' ') + 1);
        val.erase(0, val.find_first_not_of(' '));
        kv[key] = val;
    }
    if (kv["format"] != "splatmamba-synthetic-1") throw DataError(path.string() + ": unknown dataset format '" + kv["format"] + "'");
    DatasetOptions opt;
    try {
        opt.objects = std::stoul(kv.at("objects"));
        opt.views = std::stoul(kv.at("views"));
        opt.resolution = std::stoi(kv.at("resolution"));
        opt.seed = std::stoull(kv.at("seed"));
        opt.min_splats = std::stoi(kv.at("min_splats"));
        opt.max_splats = std::stoi(kv.at("max_splats"));
    } catch (const std::exception&) {
        throw DataError(path.string() + ": malformed manifest");
    }
    return opt;
}

ObjectData load_object(const std::filesystem::path& dir, std::size_t index) {
    const auto manifest = read_manifest(dir);
    if (index >= manifest.objects) {
        throw DataError("object " + std::to_string(index) + " out of range (dataset has " + std::to_string(manifest.objects) + ")");
    }
    const auto od = object_dir(dir, index);
    ObjectData out;
    out.index = index;
    out.cameras = read_cameras(od / "cameras.txt");
    if (out.cameras.size() != manifest.views) throw DataError(od.string() + ": camera count does not match manifest");
    out.ground_truth = model::read_gaussian_file(od / "gaussians.smgs");
    for (std::size_t v = 0; v < out.cameras.size(); ++v) {
        auto rgba = read_raw_image(view_path(od, v, "smrf"));
        auto mask = to_mask(read_png(mask_path(od, v)));
        if (rgba.channels != 4 || rgba.width != out.cameras[v].width || rgba.height != out.cameras[v].height ||
            mask.width != rgba.width || mask.height != rgba.height) {
            throw DataError(view_path(od, v, "smrf").string() + ": image, mask and camera sizes disagree");
        }
        if (mask.area() == 0) throw DataError(mask_path(od, v).string() + ": empty mask");
        out.rgba.push_back(std::move(rgba));
        out.masks.push_back(std::move(mask));
    }
    return out;
}

std::size_t select_reference_view(std::span<const loss::Mask> masks) {
    if (masks.empty()) throw std::invalid_argument("select_reference_view needs at least one view");
    std::size_t best = 0, best_area = masks[0].area();
    for (std::size_t i = 1; i < masks.size(); ++i) {
        const auto a = masks[i].area();
        if (a > best_area) {
            best = i;
            best_area = a;
        }
    }
    return best;
}

ViewImages view_images(const render::RenderedImage& img, const std::array<double, 3>& bg) {
    ViewImages out{Image(img.width, img.height, 3), Image(img.width, img.height, 4)};
    for (std::size_t p = 0; p < out.rgb.pixels(); ++p) {
        const double a = img.alpha[p];
        for (int c = 0; c < 3; ++c) {
            const double shown = img.rgb[p * 3 + c];
            const double premul = shown - (1.0 - a) * bg[static_cast<std::size_t>(c)];
            out.rgb.data[p * 3 + c] = static_cast<float>(shown);
            out.rgba.data[p * 4 + c] = a > 1e-12 ? static_cast<float>(std::clamp(premul / a, 0.0, 1.0)) : 0.0f;
        }
        out.rgba.data[p * 4 + 3] = static_cast<float>(a);
    }
    return out;
}

Image composite(const Image& rgba, const std::array<double, 3>& bg) {
    if (rgba.channels != 4) throw std::invalid_argument("composite expects RGBA");
    std::vector<float> rgb(rgba.pixels() * 3), alpha(rgba.pixels());
    for (std::size_t p = 0; p < rgba.pixels(); ++p) {
        for (int c = 0; c < 3; ++c) rgb[p * 3 + c] = rgba.data[p * 4 + c];
        alpha[p] = rgba.data[p * 4 + 3];
    }
    Image out(rgba.width, rgba.height, 3);
    out.data = loss::composite_over(rgb, alpha, bg);
    return out;
}

} // namespace sm::pipeline
