// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/pipeline/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace sm::pipeline {
namespace {

void check_pair(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
        throw std::invalid_argument("metric inputs differ in size: " + std::to_string(a.width) + "x" + std::to_string(a.height) + "x" +
                                    std::to_string(a.channels) + " vs " + std::to_string(b.width) + "x" +
                                    std::to_string(b.height) + "x" + std::to_string(b.channels));
    }
}

std::vector<double> gaussian_window(int radius, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
    double total = 0;
    for (int i = -radius; i <= radius; ++i) total += w[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : w) v /= total;
    return w;
}

// Separable valid-mode filter of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int w, int h, const std::vector<double>& k, int& ow, int& oh) {
    const int n = static_cast<int>(k.size());
    ow = w - n + 1;
    oh = h - n + 1;
    std::vector<double> rows(static_cast<std::size_t>(ow) * h), out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * plane[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    return out;
}

std::vector<std::filesystem::path> sorted_pngs(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

double mse(const Image& a, const Image& b) {
    check_pair(a, b);
    if (a.data.empty()) throw std::invalid_argument("mse of empty images");
    double acc = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

double psnr_from_mse(double m) {
    if (m < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

double ssim(const Image& a, const Image& b) {
    check_pair(a, b);
    const int radius = std::max(0, std::min(5, (std::min(a.width, a.height) - 1) / 2));
    const auto k = gaussian_window(radius, 1.5);
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int w = a.width, h = a.height;
    double total = 0;
    std::size_t count = 0;
    for (int c = 0; c < a.channels; ++c) {
        std::vector<double> x(a.pixels()), y(a.pixels()), xx(a.pixels()), yy(a.pixels()), xy(a.pixels());
        for (std::size_t p = 0; p < a.pixels(); ++p) {
            x[p] = a.data[p * a.channels + c];
            y[p] = b.data[p * b.channels + c];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        int ow = 0, oh = 0;
        const auto mx = filter_valid(x, w, h, k, ow, oh), my = filter_valid(y, w, h, k, ow, oh);
        const auto sxx = filter_valid(xx, w, h, k, ow, oh), syy = filter_valid(yy, w, h, k, ow, oh);
        const auto sxy = filter_valid(xy, w, h, k, ow, oh);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

std::string EvalReport::csv() const {
    std::ostringstream out;
    out << std::setprecision(10) << "view,psnr,ssim\n";
    for (const auto& v : views) out << v.name << ',' << v.psnr << ',' << v.ssim << '\n';
    out << "mean," << mean_psnr << ',' << mean_ssim << '\n';
    return out.str();
}

std::string EvalReport::summary() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3);
    out << views.size() << " views: mean PSNR " << mean_psnr << " dB, mean SSIM " << std::setprecision(4) << mean_ssim << '\n';
    for (const auto& v : views) {
        out << "  " << v.name << "  PSNR " << std::setprecision(3) << v.psnr << "  SSIM " << std::setprecision(4) << v.ssim << '\n';
    }
    return out.str();
}

EvalReport evaluate_images(const std::vector<Image>& pred, const std::vector<Image>& gt, const std::vector<std::string>& names) {
    if (pred.size() != gt.size() || names.size() != pred.size()) {
        throw std::invalid_argument("evaluate: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                                    " ground-truth images");
    }
    EvalReport r;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        r.views.push_back({names[i], psnr(pred[i], gt[i]), ssim(pred[i], gt[i])});
        r.mean_psnr += r.views.back().psnr;
        r.mean_ssim += r.views.back().ssim;
    }
    if (!pred.empty()) {
        r.mean_psnr /= static_cast<double>(pred.size());
        r.mean_ssim /= static_cast<double>(pred.size());
    }
    return r;
}

EvalReport evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir, const std::filesystem::path& mask_dir) {
    const auto pred_files = sorted_pngs(pred_dir), gt_files = sorted_pngs(gt_dir);
    if (pred_files.size() != gt_files.size()) {
        throw std::invalid_argument("evaluate: " + std::to_string(pred_files.size()) + " images in " + pred_dir.string() + " but " +
                                    std::to_string(gt_files.size()) + " in " + gt_dir.string());
    }
    std::vector<std::filesystem::path> mask_files;
    if (!mask_dir.empty()) {
        mask_files = sorted_pngs(mask_dir);
        if (mask_files.size() != pred_files.size()) {
            throw std::invalid_argument("evaluate: " + std::to_string(mask_files.size()) + " masks for " +
                                        std::to_string(pred_files.size()) + " images");
        }
    }
    std::vector<Image> pred, gt;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < pred_files.size(); ++i) {
        auto p = to_rgb(read_png(pred_files[i])), g = to_rgb(read_png(gt_files[i]));
        if (!mask_files.empty()) {
            const auto m = to_mask(read_png(mask_files[i]));
            if (m.width != p.width || m.height != p.height) throw std::invalid_argument("mask size mismatch: " + mask_files[i].string());
            for (std::size_t px = 0; px < p.pixels(); ++px) {
                if (m.data[px]) continue;
                for (int c = 0; c < 3; ++c) p.data[px * 3 + c] = g.data[px * 3 + c] = 0.0f;
            }
        }
        names.push_back(pred_files[i].filename().string());
        pred.push_back(std::move(p));
        gt.push_back(std::move(g));
    }
    return evaluate_images(pred, gt, names);
}

} // namespace sm::pipeline
