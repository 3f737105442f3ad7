// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/render/splat.hpp"

#include "splatmamba/autodiff/ops.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sm::render {

namespace {

// Forward-mode jet used to get the Jacobian of one splat's projection
// with respect to its 22 parameters in a single pass.
template <typename T, int N>
struct Dual {
    T v{};
    std::array<T, N> d{};

    Dual() = default;
    Dual(T value) : v(value) {} // NOLINT: implicit lift of constants

    static Dual variable(T value, int slot) {
        Dual r(value);
        r.d[static_cast<std::size_t>(slot)] = T(1);
        return r;
    }
};

template <typename T, int N>
Dual<T, N> operator+(const Dual<T, N>& a, const Dual<T, N>& b) {
    Dual<T, N> r(a.v + b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
}
template <typename T, int N>
Dual<T, N> operator-(const Dual<T, N>& a, const Dual<T, N>& b) {
    Dual<T, N> r(a.v - b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
}
template <typename T, int N>
Dual<T, N> operator-(const Dual<T, N>& a) {
    Dual<T, N> r(-a.v);
    for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
    return r;
}
template <typename T, int N>
Dual<T, N> operator*(const Dual<T, N>& a, const Dual<T, N>& b) {
    Dual<T, N> r(a.v * b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
}
template <typename T, int N>
Dual<T, N> operator/(const Dual<T, N>& a, const Dual<T, N>& b) {
    const T inv = T(1) / b.v;
    Dual<T, N> r(a.v * inv);
    for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
    return r;
}
template <typename T, int N>
Dual<T, N> operator+(const Dual<T, N>& a, T b) { return a + Dual<T, N>(b); }
template <typename T, int N>
Dual<T, N> operator+(T a, const Dual<T, N>& b) { return Dual<T, N>(a) + b; }
template <typename T, int N>
Dual<T, N> operator-(const Dual<T, N>& a, T b) { return a - Dual<T, N>(b); }
template <typename T, int N>
Dual<T, N> operator-(T a, const Dual<T, N>& b) { return Dual<T, N>(a) - b; }
template <typename T, int N>
Dual<T, N> operator*(const Dual<T, N>& a, T b) {
    Dual<T, N> r(a.v * b);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b;
    return r;
}
template <typename T, int N>
Dual<T, N> operator*(T a, const Dual<T, N>& b) { return b * a; }
template <typename T, int N>
Dual<T, N> operator/(T a, const Dual<T, N>& b) { return Dual<T, N>(a) / b; }

template <typename T, int N>
Dual<T, N> sqrt(const Dual<T, N>& a) {
    using std::sqrt;
    Dual<T, N> r(sqrt(a.v));
    const T k = r.v > T(0) ? T(0.5) / r.v : T(0);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * k;
    return r;
}

template <typename T>
T value_of(T x) { return x; }
template <typename T, int N>
T value_of(const Dual<T, N>& x) { return x.v; }

template <typename S>
S sqrt_of(const S& x) {
    using std::sqrt;
    return sqrt(x);
}

// Clamp that passes no gradient outside the range, matching the forward clamp.
template <typename S, typename T>
S clamp01(const S& x) {
    const T v = value_of(x);
    if (v < T(0)) return S(T(0));
    if (v > T(1)) return S(T(1));
    return x;
}

struct CameraView {
    double r[9];
    double t[3];
    double center[3];
    double fx, fy, cx, cy;
    int width, height;
};

CameraView make_view(const model::Camera& cam) {
    cam.validate();
    CameraView v{};
    std::copy(cam.extrinsic.begin(), cam.extrinsic.begin() + 9, v.r);
    std::copy(cam.extrinsic.begin() + 9, cam.extrinsic.end(), v.t);
    const auto c = cam.center();
    for (int i = 0; i < 3; ++i) v.center[i] = c[i];
    v.fx = cam.fx();
    v.fy = cam.fy();
    v.cx = cam.cx();
    v.cy = cam.cy();
    v.width = cam.width;
    v.height = cam.height;
    return v;
}

// Dual seed layout.
constexpr int kSlotPos = 0, kSlotScale = 3, kSlotQuat = 6, kSlotSh = 10, kSlots = 22;

template <typename S>
struct SplatProjection {
    bool visible = false;
    S u, v, depth;
    S conic[3]; // inverse 2D covariance (a, b, c) as [[a, b], [b, c]]
    S cov[3];   // 2D covariance, floor included
    S color[3];
};

template <typename S, typename T>
SplatProjection<S> project_splat(const S pos[3], const S scale[3], const S quat[4], const S sh[12], const CameraView& cam) {
    SplatProjection<S> out;
    const auto R = [&](int i, int j) { return static_cast<T>(cam.r[i * 3 + j]); };
    S pc[3];
    for (int i = 0; i < 3; ++i) {
        pc[i] = pos[0] * R(i, 0) + pos[1] * R(i, 1) + pos[2] * R(i, 2) + static_cast<T>(cam.t[i]);
    }
    if (!(value_of(pc[2]) > static_cast<T>(kNearPlane))) {
        return out;
    }
    out.visible = true;
    out.depth = pc[2];
    const T fx = static_cast<T>(cam.fx), fy = static_cast<T>(cam.fy);
    const S iz = T(1) / pc[2];
    out.u = fx * pc[0] * iz + static_cast<T>(cam.cx);
    out.v = fy * pc[1] * iz + static_cast<T>(cam.cy);

    S w = quat[0], x = quat[1], y = quat[2], z = quat[3];
    const S n2 = w * w + x * x + y * y + z * z;
    if (value_of(n2) < T(1e-24)) {
        w = S(T(1));
        x = y = z = S(T(0));
    } else {
        const S inv = T(1) / sqrt_of(n2);
        w = w * inv;
        x = x * inv;
        y = y * inv;
        z = z * inv;
    }
    const S rq[3][3] = {
        {T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y)},
        {T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x)},
        {T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y)},
    };
    S m[3][3];
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            m[i][j] = rq[i][j] * scale[j];
        }
    }
    S sigma[3][3];
    for (int i = 0; i < 3; ++i) {
        for (int j = i; j < 3; ++j) {
            sigma[i][j] = m[i][0] * m[j][0] + m[i][1] * m[j][1] + m[i][2] * m[j][2];
            sigma[j][i] = sigma[i][j];
        }
    }
    // T = J W, rows of the affine approximation of the projection.
    S tm[2][3];
    for (int j = 0; j < 3; ++j) {
        tm[0][j] = fx * iz * (R(0, j) - pc[0] * iz * R(2, j));
        tm[1][j] = fy * iz * (R(1, j) - pc[1] * iz * R(2, j));
    }
    S ts[2][3];
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 3; ++j) {
            ts[i][j] = tm[i][0] * sigma[0][j] + tm[i][1] * sigma[1][j] + tm[i][2] * sigma[2][j];
        }
    }
    const T floor = static_cast<T>(kCovarianceFloor);
    const S a = ts[0][0] * tm[0][0] + ts[0][1] * tm[0][1] + ts[0][2] * tm[0][2] + floor;
    const S b = ts[0][0] * tm[1][0] + ts[0][1] * tm[1][1] + ts[0][2] * tm[1][2];
    const S c = ts[1][0] * tm[1][0] + ts[1][1] * tm[1][1] + ts[1][2] * tm[1][2] + floor;
    out.cov[0] = a;
    out.cov[1] = b;
    out.cov[2] = c;
    const S inv_det = T(1) / (a * c - b * b);
    out.conic[0] = c * inv_det;
    out.conic[1] = -b * inv_det;
    out.conic[2] = a * inv_det;

    S dir[3];
    for (int i = 0; i < 3; ++i) dir[i] = pos[i] - static_cast<T>(cam.center[i]);
    const S inv_len = T(1) / sqrt_of(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    for (auto& d : dir) d = d * inv_len;
    const T c0 = static_cast<T>(kShC0), c1 = static_cast<T>(kShC1);
    for (int ch = 0; ch < 3; ++ch) {
        const S col = c0 * sh[ch] - c1 * dir[1] * sh[3 + ch] + c1 * dir[2] * sh[6 + ch] - c1 * dir[0] * sh[9 + ch] + T(0.5);
        out.color[ch] = clamp01<S, T>(col);
    }
    return out;
}

// Projected, depth-sorted splats in the form the rasterizer consumes.
template <typename T>
struct SortedSplats {
    std::vector<std::size_t> source; // index into the caller's list
    std::vector<T> u, v, ca, cb, cc, opacity;
    std::vector<std::array<T, 3>> color;
    std::vector<double> radius;

    std::size_t size() const { return source.size(); }
};

struct Candidate {
    double depth;
    std::size_t index;
};

// Tile footprint radius from the conic: the covariance's largest eigenvalue is
// lambda_max(conic) / det(conic).
template <typename T>
double screen_radius(T a, T b, T c) {
    const double ca = a, cb = b, cc = c;
    const double mid = 0.5 * (ca + cc);
    const double det = ca * cc - cb * cb;
    const double conic_max = mid + std::sqrt(std::max(mid * mid - det, 0.0));
    const double lambda = det > 0.0 ? conic_max / det : 0.0;
    // small slack so float rounding never drops a pixel the exact test keeps
    return kCutoffSigmas * std::sqrt(lambda) * 1.001 + 1e-3;
}

// Gather visible projections into depth order.
template <typename T, typename Fetch>
SortedSplats<T> sort_splats(std::vector<Candidate> cands, Fetch&& fetch) {
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& l, const Candidate& r) {
        return l.depth < r.depth || (l.depth == r.depth && l.index < r.index);
    });
    SortedSplats<T> s;
    const std::size_t m = cands.size();
    s.source.reserve(m);
    for (auto* vec : {&s.u, &s.v, &s.ca, &s.cb, &s.cc, &s.opacity}) vec->reserve(m);
    for (const auto& cand : cands) {
        s.source.push_back(cand.index);
        fetch(cand.index, s);
        s.radius.push_back(screen_radius(s.ca.back(), s.cb.back(), s.cc.back()));
    }
    return s;
}

// Per-tile lists of sorted-splat indices, each in depth order.
template <typename T>
std::vector<std::vector<std::uint32_t>> build_tiles(const SortedSplats<T>& s, int width, int height) {
    const int tw = (width + kTileSize - 1) / kTileSize, th = (height + kTileSize - 1) / kTileSize;
    std::vector<std::vector<std::uint32_t>> tiles(static_cast<std::size_t>(tw * th));
    for (std::size_t k = 0; k < s.size(); ++k) {
        const double u = s.u[k], v = s.v[k], r = s.radius[k];
        // pixel px samples px + 0.5
        const double x0 = std::ceil(u - r - 0.5), x1 = std::floor(u + r - 0.5);
        const double y0 = std::ceil(v - r - 0.5), y1 = std::floor(v + r - 0.5);
        if (x1 < 0 || y1 < 0 || x0 > width - 1 || y0 > height - 1 || x0 > x1 || y0 > y1) {
            continue;
        }
        const int tx0 = static_cast<int>(std::max(x0, 0.0)) / kTileSize;
        const int tx1 = static_cast<int>(std::min(x1, width - 1.0)) / kTileSize;
        const int ty0 = static_cast<int>(std::max(y0, 0.0)) / kTileSize;
        const int ty1 = static_cast<int>(std::min(y1, height - 1.0)) / kTileSize;
        for (int ty = ty0; ty <= ty1; ++ty) {
            for (int tx = tx0; tx <= tx1; ++tx) {
                tiles[static_cast<std::size_t>(ty * tw + tx)].push_back(static_cast<std::uint32_t>(k));
            }
        }
    }
    return tiles;
}

template <typename T>
struct Contribution {
    std::uint32_t k;
    T dx, dy, g, alpha, transmit; // transmittance before this splat
};

// Front-to-back list of splats that cover the pixel sample point.
template <typename T, typename Range>
void collect_contributions(const SortedSplats<T>& s, const Range& list, int px, int py, std::vector<Contribution<T>>& out) {
    out.clear();
    const T sx = static_cast<T>(px) + T(0.5), sy = static_cast<T>(py) + T(0.5);
    const T cutoff = static_cast<T>(kCutoffSigmas * kCutoffSigmas);
    T transmit = T(1);
    for (const auto k : list) {
        const T dx = sx - s.u[k], dy = sy - s.v[k];
        const T d2 = s.ca[k] * dx * dx + T(2) * s.cb[k] * dx * dy + s.cc[k] * dy * dy;
        if (!(d2 <= cutoff)) {
            continue;
        }
        const T g = std::exp(T(-0.5) * d2);
        const T alpha = s.opacity[k] * g;
        out.push_back({static_cast<std::uint32_t>(k), dx, dy, g, alpha, transmit});
        transmit *= T(1) - alpha;
    }
}

template <typename T>
void shade(const SortedSplats<T>& s,
           const std::vector<Contribution<T>>& contrib,
           const T bg[3],
           bool back_to_front,
           T* rgb,
           T* alpha) {
    if (back_to_front) {
        T c[3] = {bg[0], bg[1], bg[2]};
        T a = T(0);
        for (auto it = contrib.rbegin(); it != contrib.rend(); ++it) {
            const auto& col = s.color[it->k];
            for (int ch = 0; ch < 3; ++ch) c[ch] = col[ch] * it->alpha + (T(1) - it->alpha) * c[ch];
            a = it->alpha + (T(1) - it->alpha) * a;
        }
        std::copy(c, c + 3, rgb);
        *alpha = a;
        return;
    }
    T c[3] = {0, 0, 0};
    T transmit = T(1);
    for (const auto& e : contrib) {
        const auto& col = s.color[e.k];
        const T w = e.alpha * e.transmit;
        for (int ch = 0; ch < 3; ++ch) c[ch] += col[ch] * w;
        transmit = e.transmit * (T(1) - e.alpha);
    }
    for (int ch = 0; ch < 3; ++ch) rgb[ch] = c[ch] + transmit * bg[ch];
    *alpha = T(1) - transmit;
}

// Fills rgba [H x W x 4].
template <typename T>
void rasterize_sorted(const SortedSplats<T>& s, int width, int height, const T bg[3], RasterPath path, std::vector<T>& rgba) {
    rgba.assign(static_cast<std::size_t>(width * height) * 4, T(0));
    std::vector<Contribution<T>> contrib;
    const auto write = [&](int px, int py) {
        const auto o = static_cast<std::size_t>(py * width + px) * 4;
        shade(s, contrib, bg, path == RasterPath::BackToFront, &rgba[o], &rgba[o + 3]);
    };
    if (path == RasterPath::Tiled) {
        const auto tiles = build_tiles(s, width, height);
        const int tw = (width + kTileSize - 1) / kTileSize;
        for (std::size_t t = 0; t < tiles.size(); ++t) {
            const int tx = static_cast<int>(t) % tw, ty = static_cast<int>(t) / tw;
            for (int py = ty * kTileSize; py < std::min(height, (ty + 1) * kTileSize); ++py) {
                for (int px = tx * kTileSize; px < std::min(width, (tx + 1) * kTileSize); ++px) {
                    collect_contributions(s, tiles[t], px, py, contrib);
                    write(px, py);
                }
            }
        }
        return;
    }
    std::vector<std::uint32_t> all(s.size());
    std::iota(all.begin(), all.end(), 0u);
    for (int py = 0; py < height; ++py) {
        for (int px = 0; px < width; ++px) {
            collect_contributions(s, all, px, py, contrib);
            write(px, py);
        }
    }
}

template <typename T>
struct SplatInputs {
    T pos[3], scale[3], quat[4], sh[12];
};

template <typename T>
SplatInputs<T> gather_inputs(const model::GaussianSet<T>& g, std::size_t i) {
    SplatInputs<T> in{};
    for (int k = 0; k < 3; ++k) in.pos[k] = g.positions.data()[i * 3 + k];
    for (int k = 0; k < 3; ++k) in.scale[k] = g.scales.data()[i * 3 + k];
    for (int k = 0; k < 4; ++k) in.quat[k] = g.rotations.data()[i * 4 + k];
    for (int k = 0; k < 12; ++k) in.sh[k] = g.sh.data()[i * 12 + k];
    return in;
}

template <typename T>
void check_set(const model::GaussianSet<T>& g) {
    const std::size_t n = g.positions.defined() ? g.positions.dim(0) : 0;
    const auto expect = [&](const ad::Tensor<T>& t, std::size_t cols, const char* name) {
        if (!t.defined() || t.rank() != 2 || t.dim(0) != n || t.dim(1) != cols) {
            throw ad::DimensionError(std::string("render: ") + name + " must be [N x " + std::to_string(cols) + "], got " +
                                     (t.defined() ? ad::shape_str(t.shape()) : std::string("undefined")));
        }
    };
    expect(g.positions, 3, "positions");
    expect(g.opacity, 1, "opacity");
    expect(g.sh, model::kShCoeffs, "sh");
    expect(g.scales, 3, "scales");
    expect(g.rotations, 4, "rotations");
}

} // namespace

Eigen::Matrix3d quaternion_to_rotation(const Eigen::Vector4d& quat) {
    const double n = quat.norm();
    if (n < 1e-12) {
        return Eigen::Matrix3d::Identity();
    }
    const Eigen::Vector4d q = quat / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Matrix3d build_covariance(const Eigen::Vector3d& scale, const Eigen::Vector4d& quat) {
    const Eigen::Matrix3d m = quaternion_to_rotation(quat) * scale.asDiagonal();
    return m * m.transpose();
}

double eval_gaussian(const Eigen::Vector3d& offset, const Eigen::Matrix3d& cov) {
    Eigen::FullPivLU<Eigen::Matrix3d> lu(cov);
    if (!lu.isInvertible()) {
        throw ad::NumericalError("eval_gaussian: singular covariance");
    }
    return std::exp(-0.5 * offset.dot(lu.solve(offset)));
}

std::array<double, 3> eval_sh_color(const std::array<double, model::kShCoeffs>& sh, const Eigen::Vector3d& view_dir) {
    const double n = view_dir.norm();
    if (!(n > 0.0)) {
        throw ad::NumericalError("eval_sh_color: zero view direction");
    }
    const Eigen::Vector3d d = view_dir / n;
    std::array<double, 3> out{};
    for (int ch = 0; ch < 3; ++ch) {
        const double c = kShC0 * sh[ch] - kShC1 * d.y() * sh[3 + ch] + kShC1 * d.z() * sh[6 + ch] -
                         kShC1 * d.x() * sh[9 + ch] + 0.5;
        out[static_cast<std::size_t>(ch)] = std::clamp(c, 0.0, 1.0);
    }
    return out;
}

std::optional<Projected2DGaussian> project_gaussian(const model::Splat& splat, const model::Camera& cam, std::size_t index) {
    const auto view = make_view(cam);
    const auto p = project_splat<double, double>(splat.position.data(), splat.scale.data(), splat.rotation.data(),
                                                 splat.sh.data(), view);
    if (!p.visible) {
        return std::nullopt;
    }
    Projected2DGaussian out;
    out.index = index;
    out.center = {p.u, p.v};
    out.cov << p.cov[0], p.cov[1], p.cov[1], p.cov[2];
    out.depth = p.depth;
    out.color = {p.color[0], p.color[1], p.color[2]};
    out.opacity = splat.opacity;
    return out;
}

RenderedImage rasterize(std::vector<Projected2DGaussian> splats,
                        int width,
                        int height,
                        const std::array<double, 3>& background,
                        RasterPath path) {
    if (width <= 0 || height <= 0) {
        throw ad::DimensionError("rasterize: image size must be positive");
    }
    std::vector<std::size_t> order(splats.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
        return splats[l].depth < splats[r].depth || (splats[l].depth == splats[r].depth && splats[l].index < splats[r].index);
    });
    SortedSplats<double> s;
    for (const auto i : order) {
        const auto& p = splats[i];
        const double det = p.cov.determinant();
        if (!(det > 0.0)) {
            throw ad::NumericalError("rasterize: projected covariance is not positive definite");
        }
        s.source.push_back(p.index);
        s.u.push_back(p.center.x());
        s.v.push_back(p.center.y());
        s.ca.push_back(p.cov(1, 1) / det);
        s.cb.push_back(-0.5 * (p.cov(0, 1) + p.cov(1, 0)) / det);
        s.cc.push_back(p.cov(0, 0) / det);
        s.opacity.push_back(p.opacity);
        s.color.push_back(p.color);
        s.radius.push_back(screen_radius(s.ca.back(), s.cb.back(), s.cc.back()));
    }
    std::vector<double> rgba;
    rasterize_sorted(s, width, height, background.data(), path, rgba);
    RenderedImage img;
    img.width = width;
    img.height = height;
    img.rgb.resize(static_cast<std::size_t>(width * height) * 3);
    img.alpha.resize(static_cast<std::size_t>(width * height));
    for (std::size_t p = 0; p < img.alpha.size(); ++p) {
        for (int ch = 0; ch < 3; ++ch) img.rgb[p * 3 + ch] = rgba[p * 4 + ch];
        img.alpha[p] = rgba[p * 4 + 3];
    }
    return img;
}

RenderedImage render(std::span<const model::Splat> splats, const model::Camera& cam, const std::array<double, 3>& background) {
    const auto set = model::from_splats<double>(splats, false);
    ad::Tensor<double> bg({3}, std::vector<double>(background.begin(), background.end()));
    const auto rgba = render(set, cam, bg);
    RenderedImage img;
    img.width = cam.width;
    img.height = cam.height;
    const auto n = static_cast<std::size_t>(cam.width * cam.height);
    img.rgb.resize(n * 3);
    img.alpha.resize(n);
    for (std::size_t p = 0; p < n; ++p) {
        for (int ch = 0; ch < 3; ++ch) img.rgb[p * 3 + ch] = rgba.data()[p * 4 + ch];
        img.alpha[p] = rgba.data()[p * 4 + 3];
    }
    return img;
}

template <typename T>
ad::Tensor<T> render(const model::GaussianSet<T>& gaussians, const model::Camera& cam, const ad::Tensor<T>& background) {
    check_set(gaussians);
    if (!background.defined() || background.numel() != 3) {
        throw ad::DimensionError("render: background must have 3 values");
    }
    const auto view = make_view(cam);
    const std::size_t n = gaussians.count();
    const int width = view.width, height = view.height;

    std::vector<SplatProjection<T>> proj(n);
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < n; ++i) {
        const auto in = gather_inputs(gaussians, i);
        proj[i] = project_splat<T, T>(in.pos, in.scale, in.quat, in.sh, view);
        if (proj[i].visible) {
            cands.push_back({static_cast<double>(proj[i].depth), i});
        }
    }
    auto sorted = std::make_shared<SortedSplats<T>>(sort_splats<T>(std::move(cands), [&](std::size_t i, SortedSplats<T>& s) {
        const auto& p = proj[i];
        s.u.push_back(p.u);
        s.v.push_back(p.v);
        s.ca.push_back(p.conic[0]);
        s.cb.push_back(p.conic[1]);
        s.cc.push_back(p.conic[2]);
        s.opacity.push_back(gaussians.opacity.data()[i]);
        s.color.push_back({p.color[0], p.color[1], p.color[2]});
    }));
    for (std::size_t k = 0; k < sorted->size(); ++k) {
        const T det = sorted->ca[k] * sorted->cc[k] - sorted->cb[k] * sorted->cb[k];
        if (!std::isfinite(static_cast<double>(det)) || !(det > T(0))) {
            throw ad::NumericalError("render: degenerate projected covariance for splat " +
                                     std::to_string(sorted->source[k]));
        }
    }

    const T bg[3] = {background.data()[0], background.data()[1], background.data()[2]};
    std::vector<T> rgba;
    rasterize_sorted(*sorted, width, height, bg, RasterPath::Tiled, rgba);

    std::vector<ad::Tensor<T>> inputs = {gaussians.positions, gaussians.opacity, gaussians.sh,
                                         gaussians.scales,    gaussians.rotations, background};
    return ad::make_op<T>(
        "render_splats", {static_cast<std::size_t>(height), static_cast<std::size_t>(width), 4}, std::move(rgba),
        std::move(inputs), [sorted, view, bgv = std::array<T, 3>{bg[0], bg[1], bg[2]}](ad::detail::Node<T>& self) {
            const auto& s = *sorted;
            const int width = view.width, height = view.height;
            const std::size_t m = s.size();
            // gradients w.r.t. screen-space quantities of each sorted splat
            std::vector<T> g_u(m, T(0)), g_v(m, T(0)), g_ca(m, T(0)), g_cb(m, T(0)), g_cc(m, T(0)), g_op(m, T(0));
            std::vector<std::array<T, 3>> g_col(m, std::array<T, 3>{0, 0, 0});
            double g_bg[3] = {0, 0, 0};

            const auto tiles = build_tiles(s, width, height);
            const int tw = (width + kTileSize - 1) / kTileSize;
            std::vector<Contribution<T>> contrib;
            for (std::size_t t = 0; t < tiles.size(); ++t) {
                if (tiles[t].empty()) {
                    // background-only tile
                    const int tx = static_cast<int>(t) % tw, ty = static_cast<int>(t) / tw;
                    for (int py = ty * kTileSize; py < std::min(height, (ty + 1) * kTileSize); ++py) {
                        for (int px = tx * kTileSize; px < std::min(width, (tx + 1) * kTileSize); ++px) {
                            const auto o = static_cast<std::size_t>(py * width + px) * 4;
                            for (int ch = 0; ch < 3; ++ch) g_bg[ch] += self.grad[o + ch];
                        }
                    }
                    continue;
                }
                const int tx = static_cast<int>(t) % tw, ty = static_cast<int>(t) / tw;
                for (int py = ty * kTileSize; py < std::min(height, (ty + 1) * kTileSize); ++py) {
                    for (int px = tx * kTileSize; px < std::min(width, (tx + 1) * kTileSize); ++px) {
                        const auto o = static_cast<std::size_t>(py * width + px) * 4;
                        const T gc[3] = {self.grad[o], self.grad[o + 1], self.grad[o + 2]};
                        const T ga = self.grad[o + 3];
                        collect_contributions(s, tiles[t], px, py, contrib);
                        T transmit = T(1);
                        if (!contrib.empty()) {
                            transmit = contrib.back().transmit * (T(1) - contrib.back().alpha);
                        }
                        for (int ch = 0; ch < 3; ++ch) g_bg[ch] += static_cast<double>(gc[ch] * transmit);
                        // suffix colour and alpha of everything behind splat i, background included
                        T suffix[3] = {bgv[0], bgv[1], bgv[2]};
                        T suffix_a = T(0);
                        for (auto it = contrib.rbegin(); it != contrib.rend(); ++it) {
                            const auto k = it->k;
                            const auto& col = s.color[k];
                            T d_alpha = ga * it->transmit * (T(1) - suffix_a);
                            for (int ch = 0; ch < 3; ++ch) {
                                d_alpha += gc[ch] * it->transmit * (col[ch] - suffix[ch]);
                                g_col[k][ch] += gc[ch] * it->alpha * it->transmit;
                                suffix[ch] = col[ch] * it->alpha + (T(1) - it->alpha) * suffix[ch];
                            }
                            suffix_a = it->alpha + (T(1) - it->alpha) * suffix_a;

                            g_op[k] += d_alpha * it->g;
                            const T d_g = d_alpha * s.opacity[k];
                            const T d_power = T(-0.5) * it->g * d_g; // d/d(d2)
                            const T dx = it->dx, dy = it->dy;
                            g_ca[k] += d_power * dx * dx;
                            g_cb[k] += d_power * T(2) * dx * dy;
                            g_cc[k] += d_power * dy * dy;
                            // dx = sample - u
                            g_u[k] -= d_power * (T(2) * s.ca[k] * dx + T(2) * s.cb[k] * dy);
                            g_v[k] -= d_power * (T(2) * s.cb[k] * dx + T(2) * s.cc[k] * dy);
                        }
                    }
                }
            }

            const auto want = [&](std::size_t i) { return self.inputs[i]->requires_grad; };
            if (want(5)) {
                auto& g = self.inputs[5]->grad_buffer();
                for (int ch = 0; ch < 3; ++ch) g[ch] += static_cast<T>(g_bg[ch]);
            }
            if (want(1)) {
                auto& g = self.inputs[1]->grad_buffer();
                for (std::size_t k = 0; k < m; ++k) g[s.source[k]] += g_op[k];
            }
            const bool geometry = want(0) || want(2) || want(3) || want(4);
            if (!geometry) {
                return;
            }
            using D = Dual<T, kSlots>;
            const auto& pos = self.inputs[0]->value;
            const auto& sh = self.inputs[2]->value;
            const auto& sc = self.inputs[3]->value;
            const auto& rot = self.inputs[4]->value;
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t i = s.source[k];
                D dp[3], ds[3], dq[4], dsh[12];
                for (int j = 0; j < 3; ++j) dp[j] = D::variable(pos[i * 3 + j], kSlotPos + j);
                for (int j = 0; j < 3; ++j) ds[j] = D::variable(sc[i * 3 + j], kSlotScale + j);
                for (int j = 0; j < 4; ++j) dq[j] = D::variable(rot[i * 4 + j], kSlotQuat + j);
                for (int j = 0; j < 12; ++j) dsh[j] = D::variable(sh[i * 12 + j], kSlotSh + j);
                const auto p = project_splat<D, T>(dp, ds, dq, dsh, view);
                std::array<T, kSlots> total{};
                const auto chain = [&](const D& out, T g) {
                    if (g == T(0)) return;
                    for (int j = 0; j < kSlots; ++j) total[j] += g * out.d[j];
                };
                chain(p.u, g_u[k]);
                chain(p.v, g_v[k]);
                chain(p.conic[0], g_ca[k]);
                chain(p.conic[1], g_cb[k]);
                chain(p.conic[2], g_cc[k]);
                for (int ch = 0; ch < 3; ++ch) chain(p.color[ch], g_col[k][ch]);
                if (want(0)) {
                    auto& g = self.inputs[0]->grad_buffer();
                    for (int j = 0; j < 3; ++j) g[i * 3 + j] += total[kSlotPos + j];
                }
                if (want(3)) {
                    auto& g = self.inputs[3]->grad_buffer();
                    for (int j = 0; j < 3; ++j) g[i * 3 + j] += total[kSlotScale + j];
                }
                if (want(4)) {
                    auto& g = self.inputs[4]->grad_buffer();
                    for (int j = 0; j < 4; ++j) g[i * 4 + j] += total[kSlotQuat + j];
                }
                if (want(2)) {
                    auto& g = self.inputs[2]->grad_buffer();
                    for (int j = 0; j < 12; ++j) g[i * 12 + j] += total[kSlotSh + j];
                }
            }
        });
}

template <typename T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> split_rgb_alpha(const ad::Tensor<T>& rgba) {
    if (rgba.rank() != 3 || rgba.dim(2) != 4) {
        throw ad::DimensionError("split_rgb_alpha: expected [H x W x 4], got " + ad::shape_str(rgba.shape()));
    }
    const std::size_t h = rgba.dim(0), w = rgba.dim(1);
    const auto flat = ad::reshape(rgba, {h * w, 4});
    return {ad::reshape(ad::slice_cols(flat, 0, 3), {h, w, 3}), ad::reshape(ad::slice_cols(flat, 3, 4), {h, w, 1})};
}

template <typename T>
ProjectedCenters<T> project_centers(const ad::Tensor<T>& positions, const model::Camera& cam) {
    if (positions.rank() != 2 || positions.dim(1) != 3) {
        throw ad::DimensionError("project_centers: expected [N x 3], got " + ad::shape_str(positions.shape()));
    }
    const auto view = make_view(cam);
    const std::size_t n = positions.dim(0);
    std::vector<T> uv(n * 2, T(0));
    // d(u, v)/d(position), row-major 2x3 per splat
    auto jac = std::make_shared<std::vector<T>>(n * 6, T(0));
    std::vector<bool> visible(n, false);
    const auto& p = positions.data();
    for (std::size_t i = 0; i < n; ++i) {
        double pc[3];
        for (int r = 0; r < 3; ++r) {
            pc[r] = view.r[r * 3] * p[i * 3] + view.r[r * 3 + 1] * p[i * 3 + 1] + view.r[r * 3 + 2] * p[i * 3 + 2] + view.t[r];
        }
        if (!(pc[2] > kNearPlane)) {
            continue;
        }
        visible[i] = true;
        const double iz = 1.0 / pc[2];
        uv[i * 2] = static_cast<T>(view.fx * pc[0] * iz + view.cx);
        uv[i * 2 + 1] = static_cast<T>(view.fy * pc[1] * iz + view.cy);
        for (int j = 0; j < 3; ++j) {
            (*jac)[i * 6 + j] = static_cast<T>(view.fx * iz * (view.r[j] - pc[0] * iz * view.r[6 + j]));
            (*jac)[i * 6 + 3 + j] = static_cast<T>(view.fy * iz * (view.r[3 + j] - pc[1] * iz * view.r[6 + j]));
        }
    }
    auto out = ad::make_op<T>("project_centers", {n, 2}, std::move(uv), {positions}, [jac, n](ad::detail::Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            for (int j = 0; j < 3; ++j) {
                g[i * 3 + j] += self.grad[i * 2] * (*jac)[i * 6 + j] + self.grad[i * 2 + 1] * (*jac)[i * 6 + 3 + j];
            }
        }
    });
    return {out, std::move(visible)};
}

#define SM_INSTANTIATE_RENDER(T)                                                                                   \
    template ad::Tensor<T> render(const model::GaussianSet<T>&, const model::Camera&, const ad::Tensor<T>&);       \
    template std::pair<ad::Tensor<T>, ad::Tensor<T>> split_rgb_alpha(const ad::Tensor<T>&);                        \
    template ProjectedCenters<T> project_centers(const ad::Tensor<T>&, const model::Camera&);

SM_INSTANTIATE_RENDER(float)
SM_INSTANTIATE_RENDER(double)

#undef SM_INSTANTIATE_RENDER

} // namespace sm::render
