// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/pipeline/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace sm::pipeline {
namespace {

std::uint32_t png_format(int channels) {
    switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    case 4: return PNG_FORMAT_RGBA;
    default: throw std::invalid_argument("PNG needs 1, 3 or 4 channels, got " + std::to_string(channels));
    }
}

void check_image(const Image& image) {
    if (image.width <= 0 || image.height <= 0 || image.channels <= 0 ||
        image.data.size() != image.pixels() * static_cast<std::size_t>(image.channels)) {
        throw std::invalid_argument("image buffer does not match its dimensions");
    }
}

} // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
    check_image(image);
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = png_format(image.channels);
    std::vector<std::uint8_t> bytes(image.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data[i], 0.0f, 1.0f) * 255.0f));
    }
    if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw std::runtime_error("cannot write PNG " + path.string() + ": " + msg);
    }
}

Image read_png(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw util::ParseError(path.string() + ": " + png.message);
    }
    int channels = 3;
    if (png.format & PNG_FORMAT_FLAG_ALPHA) {
        channels = 4;
        png.format = PNG_FORMAT_RGBA;
    } else if (png.format & PNG_FORMAT_FLAG_COLOR) {
        png.format = PNG_FORMAT_RGB;
    } else {
        channels = 1;
        png.format = PNG_FORMAT_GRAY;
    }
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw util::ParseError(path.string() + ": " + msg);
    }
    Image out(static_cast<int>(png.width), static_cast<int>(png.height), channels);
    for (std::size_t i = 0; i < bytes.size(); ++i) out.data[i] = static_cast<float>(bytes[i]) / 255.0f;
    return out;
}

void write_raw_image(const std::filesystem::path& path, const Image& image) {
    check_image(image);
    util::ByteWriter w;
    w.magic("SMRF", 4);
    w.u32(static_cast<std::uint32_t>(image.height));
    w.u32(static_cast<std::uint32_t>(image.width));
    w.u32(static_cast<std::uint32_t>(image.channels));
    w.array(std::span<const float>(image.data));
    w.save(path);
}

Image read_raw_image(const std::filesystem::path& path) {
    auto r = util::ByteReader::load(path);
    r.expect_magic("SMRF", 4);
    const auto h = r.u32(), w = r.u32(), c = r.u32();
    if (h == 0 || w == 0 || c == 0 || h > 65536 || w > 65536 || c > 4) {
        r.fail("implausible image header " + std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c));
    }
    Image out(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
    out.data = r.array<float>(out.data.size());
    if (!r.at_end()) r.fail("trailing bytes");
    return out;
}

Image to_rgb(const Image& image) {
    if (image.channels == 3) return image;
    Image out(image.width, image.height, 3);
    for (std::size_t p = 0; p < image.pixels(); ++p) {
        for (int c = 0; c < 3; ++c) {
            const int src = image.channels == 1 ? 0 : c;
            out.data[p * 3 + c] = image.data[p * image.channels + src];
        }
    }
    return out;
}

loss::Mask to_mask(const Image& image) {
    loss::Mask m(image.width, image.height);
    for (std::size_t p = 0; p < image.pixels(); ++p) m.data[p] = image.data[p * image.channels] > 0.5f ? 1 : 0;
    return m;
}

Image from_mask(const loss::Mask& mask) {
    Image out(mask.width, mask.height, 1);
    for (std::size_t p = 0; p < out.pixels(); ++p) out.data[p] = mask.data[p] ? 1.0f : 0.0f;
    return out;
}

void write_cameras(const std::filesystem::path& path, const std::vector<model::Camera>& cameras) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << std::setprecision(17);
    for (const auto& cam : cameras) {
        for (double v : cam.extrinsic) out << v << ' ';
        for (double v : cam.intrinsic) out << v << ' ';
        out << cam.width << ' ' << cam.height << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<model::Camera> read_cameras(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<model::Camera> cams;
    std::string line;
    std::size_t offset = 0;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t line_offset = offset;
        offset += line.size() + 1;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        std::vector<double> v;
        std::string tok;
        while (ss >> tok) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw util::ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + tok +
                                       "' at byte offset " + std::to_string(line_offset));
            }
        }
        if (v.size() != 18) {
            throw util::ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 18 values, got " +
                                   std::to_string(v.size()) + " at byte offset " + std::to_string(line_offset));
        }
        model::Camera cam;
        std::copy(v.begin(), v.begin() + 12, cam.extrinsic.begin());
        std::copy(v.begin() + 12, v.begin() + 16, cam.intrinsic.begin());
        cam.width = static_cast<int>(v[16]);
        cam.height = static_cast<int>(v[17]);
        if (cam.width != v[16] || cam.height != v[17]) {
            throw util::ParseError(path.string() + ":" + std::to_string(lineno) + ": width/height must be integers at byte offset " +
                                   std::to_string(line_offset));
        }
        try {
            cam.validate();
        } catch (const model::CameraError& e) {
            throw util::ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what() + " at byte offset " +
                                   std::to_string(line_offset));
        }
        cams.push_back(cam);
    }
    return cams;
}

} // namespace sm::pipeline
