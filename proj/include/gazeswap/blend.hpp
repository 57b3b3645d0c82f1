#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "gazeswap/error.hpp"
#include "gazeswap/image.hpp"
#include "gazeswap/matching.hpp"
#include "gazeswap/normalization.hpp"

namespace gazeswap {

/// Binary raster aligned with a target image. Set pixels are the unknowns of
/// the blend; they never touch the image border.
struct RegionMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;
    SwapMode mode = SwapMode::Full;

    RegionMask() = default;
    RegionMask(int w, int h, SwapMode m = SwapMode::Full)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0), mode(m) {}

    bool at(int x, int y) const {
        return x >= 0 && y >= 0 && x < width && y < height && data[static_cast<std::size_t>(y) * width + x] != 0;
    }
    void set(int x, int y, bool v = true) { data[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }

    bool subset_of(const RegionMask& o) const {
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data[i] && !o.data[i]) return false;
        return true;
    }

    /// Clears the outermost pixel ring.
    void clear_border() {
        for (int x = 0; x < width; ++x) {
            set(x, 0, false);
            set(x, height - 1, false);
        }
        for (int y = 0; y < height; ++y) {
            set(0, y, false);
            set(width - 1, y, false);
        }
    }

    /// Mask plus its 4-neighbour ring (the pixels a blend reads).
    RegionMask closure() const {
        RegionMask out = *this;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                if (at(x, y) || at(x - 1, y) || at(x + 1, y) || at(x, y - 1) || at(x, y + 1)) out.set(x, y);
        return out;
    }
};

/// Andrew's monotone chain; counter-clockwise in a y-down frame is clockwise on
/// screen, which does not matter for the containment test below.
inline std::vector<Point2> convex_hull(std::vector<Point2> pts) {
    std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    auto cross = [](const Point2& o, const Point2& a, const Point2& b) {
        return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    };
    std::vector<Point2> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

inline double polygon_area(std::span<const Point2> poly) {
    double a = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % poly.size()];
        a += p.x * q.y - q.x * p.y;
    }
    return std::abs(a) / 2.0;
}

inline bool inside_convex(std::span<const Point2> hull, const Point2& p) {
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const auto& a = hull[i];
        const auto& b = hull[(i + 1) % hull.size()];
        if ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < 0.0) return false;
    }
    return true;
}

inline void fill_convex(RegionMask& mask, std::span<const Point2> hull) {
    double x0 = hull[0].x, x1 = hull[0].x, y0 = hull[0].y, y1 = hull[0].y;
    for (const auto& p : hull) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    const int xa = std::max(0, static_cast<int>(std::floor(x0))), xb = std::min(mask.width - 1, static_cast<int>(std::ceil(x1)));
    const int ya = std::max(0, static_cast<int>(std::floor(y0))), yb = std::min(mask.height - 1, static_cast<int>(std::ceil(y1)));
    for (int y = ya; y <= yb; ++y)
        for (int x = xa; x <= xb; ++x)
            if (inside_convex(hull, {static_cast<double>(x), static_cast<double>(y)})) mask.set(x, y);
}

struct MaskOptions {
    double eye_dilation = 0.15;  // fraction of the inter-ocular distance
};

/// Eyes mode: hull of eye and brow landmarks grown by a fraction of the
/// inter-ocular distance, restricted to the full-face hull. Full mode: hull of
/// all 68 landmarks. Both are cleared one pixel inside the image border.
inline RegionMask build_mask(const Landmarks68& lmk, SwapMode mode, int width, int height, MaskOptions opts = {}) {
    if (!all_finite(lmk)) fail(Errc::invalid_argument, "landmarks must be finite");
    const std::vector<Point2> all(lmk.begin(), lmk.end());
    const auto face_hull = convex_hull(all);
    if (face_hull.size() < 3 || polygon_area(face_hull) <= 0.0) fail(Errc::invalid_argument, "landmark hull is degenerate");

    RegionMask full(width, height, SwapMode::Full);
    fill_convex(full, face_hull);
    full.clear_border();
    if (mode == SwapMode::Full) {
        if (full.count() == 0) fail(Errc::invalid_argument, "mask is empty inside the image");
        return full;
    }

    std::vector<Point2> eyes(lmk.begin() + 17, lmk.begin() + 27);
    eyes.insert(eyes.end(), lmk.begin() + 36, lmk.begin() + 48);
    Point2 re{}, le{};
    for (int i = 0; i < 6; ++i) {
        re.x += lmk[36 + i].x / 6.0;
        re.y += lmk[36 + i].y / 6.0;
        le.x += lmk[42 + i].x / 6.0;
        le.y += lmk[42 + i].y / 6.0;
    }
    const double grow = opts.eye_dilation * std::hypot(le.x - re.x, le.y - re.y);
    std::vector<Point2> grown;
    constexpr int kDiscSamples = 32;
    for (const auto& p : convex_hull(eyes)) {
        grown.push_back(p);
        if (grow > 0.0)
            for (int k = 0; k < kDiscSamples; ++k) {
                const double a = 2.0 * kPi * k / kDiscSamples;
                grown.push_back({p.x + grow * std::cos(a), p.y + grow * std::sin(a)});
            }
    }
    const auto eye_hull = convex_hull(grown);
    if (eye_hull.size() < 3 || polygon_area(eye_hull) <= 0.0) fail(Errc::invalid_argument, "eye hull is degenerate");

    RegionMask out(width, height, SwapMode::Eyes);
    fill_convex(out, eye_hull);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = out.data[i] && full.data[i];
    if (out.count() == 0) fail(Errc::invalid_argument, "mask is empty inside the image");
    return out;
}

struct BlendOptions {
    double tolerance = 1e-12;         // CG keeps iterating down to this relative residual
    double accept_tolerance = 1e-6;   // a solve is accepted at or below this relative residual
    int max_iterations = 10000;
    bool jacobi = false;
};

struct BlendStats {
    std::array<int, Image::kChannels> iterations{};
    std::array<double, Image::kChannels> residual{};  // final relative residual per channel
};

namespace detail {

struct PoissonSystem {
    std::vector<int> xs, ys;
    std::vector<int> index;  // pixel -> unknown, -1 outside
    int width = 0;

    int at(int x, int y) const { return index[static_cast<std::size_t>(y) * width + x]; }
};

inline PoissonSystem index_mask(const RegionMask& mask) {
    PoissonSystem sys;
    sys.width = mask.width;
    sys.index.assign(mask.data.size(), -1);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                if (x == 0 || y == 0 || x == mask.width - 1 || y == mask.height - 1)
                    fail(Errc::invalid_argument, "mask touches the image border");
                sys.index[static_cast<std::size_t>(y) * mask.width + x] = static_cast<int>(sys.xs.size());
                sys.xs.push_back(x);
                sys.ys.push_back(y);
            }
    return sys;
}

inline constexpr int kDx[4] = {1, -1, 0, 0};
inline constexpr int kDy[4] = {0, 0, 1, -1};

// y = (4 I - adjacency) x over the unknowns.
inline void apply_laplacian(const PoissonSystem& sys, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < sys.xs.size(); ++i) {
        double acc = 4.0 * x[i];
        for (int k = 0; k < 4; ++k) {
            const int j = sys.at(sys.xs[i] + kDx[k], sys.ys[i] + kDy[k]);
            if (j >= 0) acc -= x[static_cast<std::size_t>(j)];
        }
        y[i] = acc;
    }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace detail

/// Right-hand side of the discrete Poisson problem for one channel: source
/// Laplacian plus the Dirichlet contribution of target pixels on the boundary.
inline std::vector<double> poisson_rhs(const Image& target, const Image& source, const RegionMask& mask, int channel) {
    const auto sys = detail::index_mask(mask);
    std::vector<double> b(sys.xs.size(), 0.0);
    for (std::size_t i = 0; i < sys.xs.size(); ++i) {
        const int x = sys.xs[i], y = sys.ys[i];
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
            const int qx = x + detail::kDx[k], qy = y + detail::kDy[k];
            acc += source.at(x, y, channel) - source.at(qx, qy, channel);
            if (!mask.at(qx, qy)) acc += target.at(qx, qy, channel);
        }
        b[i] = acc;
    }
    return b;
}

/// Seamless cloning: inside the mask the result has the source's gradients and
/// meets the target on the mask boundary; outside, it is the target verbatim.
/// Each channel is solved by (optionally Jacobi-preconditioned) conjugate
/// gradient with a 5-point Laplacian.
inline Image poisson_blend(const Image& target, const Image& source, const RegionMask& mask, const BlendOptions& opts,
                           BlendStats* stats = nullptr) {
    if (target.width() != source.width() || target.height() != source.height())
        fail(Errc::invalid_argument, "source and target must have the same size");
    if (mask.width != target.width() || mask.height != target.height())
        fail(Errc::invalid_argument, "mask must match the target size");

    const auto sys = detail::index_mask(mask);
    const std::size_t n = sys.xs.size();
    Image out = target;
    if (n == 0) return out;

    // Diagonal of the operator is 4 everywhere.
    const double inv_diag = opts.jacobi ? 0.25 : 1.0;

    for (int c = 0; c < Image::kChannels; ++c) {
        const std::vector<double> b = poisson_rhs(target, source, mask, c);
        std::vector<double> x(n), r(n), z(n), p(n), ap(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = target.at(sys.xs[i], sys.ys[i], c);

        const double bnorm = std::sqrt(detail::dot(b, b));
        auto true_residual = [&]() {
            detail::apply_laplacian(sys, x, ap);
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += (b[i] - ap[i]) * (b[i] - ap[i]);
            return bnorm > 0.0 ? std::sqrt(s) / bnorm : std::sqrt(s);
        };

        detail::apply_laplacian(sys, x, ap);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = b[i] - ap[i];
            z[i] = inv_diag * r[i];
            p[i] = z[i];
        }
        double rz = detail::dot(r, z);
        const double scale = bnorm > 0.0 ? bnorm : 1.0;
        int it = 0;
        while (it < opts.max_iterations && std::sqrt(detail::dot(r, r)) / scale > opts.tolerance) {
            detail::apply_laplacian(sys, p, ap);
            const double pap = detail::dot(p, ap);
            if (!(pap > 0.0)) break;
            const double alpha = rz / pap;
            for (std::size_t i = 0; i < n; ++i) {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
                z[i] = inv_diag * r[i];
            }
            const double rz_new = detail::dot(r, z);
            const double beta = rz_new / rz;
            rz = rz_new;
            for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
            ++it;
        }

        const double res = true_residual();
        if (stats) {
            stats->iterations[static_cast<std::size_t>(c)] = it;
            stats->residual[static_cast<std::size_t>(c)] = res;
        }
        if (!(res <= opts.accept_tolerance))
            throw BlendError("Poisson solve did not converge (relative residual " + std::to_string(res) + ")", res);
        for (std::size_t i = 0; i < n; ++i) out.at(sys.xs[i], sys.ys[i], c) = x[i];
    }
    return out;
}

inline Image poisson_blend(const Image& target, const Image& source, const RegionMask& mask) {
    return poisson_blend(target, source, mask, BlendOptions{});
}

}  // namespace gazeswap
