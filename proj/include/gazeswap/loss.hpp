#pragma once

// Detection + gaze multi-task loss with analytic gradients.
//
//   total = alpha * face + beta * gaze
//   face  = BCE(prob) + l1 * [pos] smoothL1(box) + l2 * [pos] smoothL1(lmk)
//   gaze  = l_self * self + l_angle * |g - g*|_1 + l_proj * sum_t |y_t - P_t(g*)|_1
//   self  = sum_t |y_t - P_t(g)|_1 * exp(-p_t) + p_t
//
// Classification is averaged over non-ignored anchors; everything else over
// positive anchors. Reductions run in anchor order.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "gazeswap/anchors.hpp"
#include "gazeswap/error.hpp"
#include "gazeswap/geometry.hpp"

namespace gazeswap {

inline constexpr std::array<Plane, 3> kPlanes{Plane::Front, Plane::Top, Plane::Side};

/// Per-anchor network outputs; also used as the gradient container.
struct AnchorPrediction {
    double prob = 0.5;
    std::array<double, 4> box{};
    std::array<double, 10> lmk{};
    std::array<double, 2> gaze{};  // pitch, yaw (radians)
    std::array<std::array<double, 2>, 3> proj{};  // front, top, side points

    bool operator==(const AnchorPrediction&) const = default;
};

using PredictionSet = std::vector<AnchorPrediction>;

struct ProjectionWeights {
    std::array<double, 3> p{};  // front, top, side log-variances
};

struct LossConfig {
    double alpha = 1.0;
    double beta = 1.0;
    double face_box = 1.0;        // lambda_1 of the face loss
    double face_landmark = 1.0;   // lambda_2 of the face loss
    double gaze_self = 1.0;       // lambda_1 of the gaze loss
    double gaze_angle = 1.0;      // lambda_2 of the gaze loss
    double gaze_projection = 1.0; // lambda_3 of the gaze loss
    double radius = 1.0;          // projection radius in loss space
    double eps = 1e-7;            // probability clip

    void validate() const {
        for (double w : {alpha, beta, face_box, face_landmark, gaze_self, gaze_angle, gaze_projection})
            if (!(w >= 0.0) || !std::isfinite(w)) fail(Errc::invalid_argument, "loss weights must be non-negative");
        if (!(radius > 0.0)) fail(Errc::invalid_argument, "projection radius must be positive");
    }
};

struct LossTerms {
    double cls = 0.0, box = 0.0, lmk = 0.0;        // weighted face terms
    double self = 0.0, angle = 0.0, proj = 0.0;    // weighted gaze terms
};

struct LossResult {
    double value = 0.0;
    PredictionSet grad;
    std::array<double, 3> grad_p{};
    LossTerms terms;
};

namespace detail {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline double smooth_l1(double d) { return std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5; }
inline double smooth_l1_grad(double d) { return std::abs(d) < 1.0 ? d : sgn(d); }

inline std::array<double, 2> plane_point(Plane plane, double pitch, double yaw, double r) {
    const PlanePoint p = project(plane, {pitch, yaw}, FaceRadius(r));
    return {p.u, p.v};
}

// d(u, v)/d(pitch, yaw), rows u and v.
inline std::array<std::array<double, 2>, 2> plane_jacobian(Plane plane, double pitch, double yaw, double r) {
    const double st = std::sin(pitch), ct = std::cos(pitch), sp = std::sin(yaw), cp = std::cos(yaw);
    switch (plane) {
        case Plane::Front: return {{{r * sp * st, -r * cp * ct}, {-r * ct, 0.0}}};
        case Plane::Top: return {{{-r * cp * st, -r * sp * ct}, {r * sp * st, -r * cp * ct}}};
        case Plane::Side: return {{{r * cp * st, r * sp * ct}, {-r * ct, 0.0}}};
    }
    return {};
}

inline void require_aligned(const PredictionSet& pred, const TargetSet& target) {
    if (pred.size() != target.size()) fail(Errc::invalid_argument, "prediction and target sets differ in length");
    for (const auto& a : pred) {
        if (!(a.prob >= 0.0 && a.prob <= 1.0)) fail(Errc::invalid_argument, "predicted probability outside [0, 1]");
    }
}

inline std::size_t count_positive(const TargetSet& t) {
    std::size_t n = 0;
    for (const auto& a : t) n += a.positive() ? 1 : 0;
    return n;
}

}  // namespace detail

/// Projection residual |y_t - P_t(g)|_1 for one anchor and plane.
inline double projection_residual(const AnchorPrediction& a, std::size_t plane, double radius) {
    const auto q = detail::plane_point(kPlanes[plane], a.gaze[0], a.gaze[1], radius);
    return std::abs(a.proj[plane][0] - q[0]) + std::abs(a.proj[plane][1] - q[1]);
}

/// Face detection loss. Gradients land in `out` scaled by `weight`.
inline double accumulate_face(const PredictionSet& pred, const TargetSet& target, const LossConfig& cfg, double weight,
                              LossResult& out) {
    std::size_t n_cls = 0;
    for (const auto& t : target) n_cls += t.ignored() ? 0 : 1;
    const std::size_t n_pos = detail::count_positive(target);

    double cls = 0.0, box = 0.0, lmk = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto& a = pred[i];
        const auto& t = target[i];
        if (!t.ignored()) {
            const double y = t.prob();
            const double pc = std::clamp(a.prob, cfg.eps, 1.0 - cfg.eps);
            cls += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
            if (a.prob > cfg.eps && a.prob < 1.0 - cfg.eps)
                out.grad[i].prob += weight * (-y / pc + (1.0 - y) / (1.0 - pc)) / static_cast<double>(n_cls);
        }
        if (!t.positive()) continue;
        const double inv = 1.0 / static_cast<double>(n_pos);
        for (std::size_t k = 0; k < 4; ++k) {
            const double d = a.box[k] - t.box[k];
            box += detail::smooth_l1(d);
            out.grad[i].box[k] += weight * cfg.face_box * detail::smooth_l1_grad(d) * inv;
        }
        for (std::size_t k = 0; k < 10; ++k) {
            const double d = a.lmk[k] - t.lmk[k];
            lmk += detail::smooth_l1(d);
            out.grad[i].lmk[k] += weight * cfg.face_landmark * detail::smooth_l1_grad(d) * inv;
        }
    }
    const double c = n_cls ? cls / static_cast<double>(n_cls) : 0.0;
    const double b = n_pos ? cfg.face_box * box / static_cast<double>(n_pos) : 0.0;
    const double l = n_pos ? cfg.face_landmark * lmk / static_cast<double>(n_pos) : 0.0;
    out.terms.cls += weight * c;
    out.terms.box += weight * b;
    out.terms.lmk += weight * l;
    return c + b + l;
}

/// Self-consistency loss only (unit weight), averaged over positives.
inline double accumulate_self(const PredictionSet& pred, const TargetSet& target, const ProjectionWeights& pw,
                              double radius, double weight, LossResult& out) {
    const std::size_t n_pos = detail::count_positive(target);
    if (n_pos == 0) return 0.0;
    const double inv = 1.0 / static_cast<double>(n_pos);
    std::array<double, 3> mean_res{};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!target[i].positive()) continue;
        const auto& a = pred[i];
        for (std::size_t t = 0; t < 3; ++t) {
            const auto q = detail::plane_point(kPlanes[t], a.gaze[0], a.gaze[1], radius);
            const auto jac = detail::plane_jacobian(kPlanes[t], a.gaze[0], a.gaze[1], radius);
            const double ep = std::exp(-pw.p[t]);
            for (std::size_t c = 0; c < 2; ++c) {
                const double d = a.proj[t][c] - q[c];
                mean_res[t] += std::abs(d) * inv;
                const double g = weight * ep * detail::sgn(d) * inv;
                out.grad[i].proj[t][c] += g;
                out.grad[i].gaze[0] -= g * jac[c][0];
                out.grad[i].gaze[1] -= g * jac[c][1];
            }
        }
    }
    double value = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
        const double ep = std::exp(-pw.p[t]);
        value += mean_res[t] * ep + pw.p[t];
        out.grad_p[t] += weight * (1.0 - mean_res[t] * ep);
    }
    return value;
}

/// Gaze loss. Gradients land in `out` scaled by `weight`.
inline double accumulate_gaze(const PredictionSet& pred, const TargetSet& target, const ProjectionWeights& pw,
                              const LossConfig& cfg, double weight, LossResult& out) {
    const std::size_t n_pos = detail::count_positive(target);
    if (n_pos == 0) return 0.0;
    const double inv = 1.0 / static_cast<double>(n_pos);

    const double self = accumulate_self(pred, target, pw, cfg.radius, weight * cfg.gaze_self, out);
    double angle = 0.0, proj = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!target[i].positive()) continue;
        const auto& a = pred[i];
        const auto& t = target[i];
        for (std::size_t k = 0; k < 2; ++k) {
            const double d = a.gaze[k] - t.gaze[k];
            angle += std::abs(d) * inv;
            out.grad[i].gaze[k] += weight * cfg.gaze_angle * detail::sgn(d) * inv;
        }
        for (std::size_t p = 0; p < 3; ++p) {
            const auto q = detail::plane_point(kPlanes[p], t.gaze[0], t.gaze[1], cfg.radius);
            for (std::size_t c = 0; c < 2; ++c) {
                const double d = a.proj[p][c] - q[c];
                proj += std::abs(d) * inv;
                out.grad[i].proj[p][c] += weight * cfg.gaze_projection * detail::sgn(d) * inv;
            }
        }
    }
    out.terms.self += weight * cfg.gaze_self * self;
    out.terms.angle += weight * cfg.gaze_angle * angle;
    out.terms.proj += weight * cfg.gaze_projection * proj;
    return cfg.gaze_self * self + cfg.gaze_angle * angle + cfg.gaze_projection * proj;
}

inline LossResult make_result(std::size_t n) {
    LossResult r;
    r.grad.assign(n, AnchorPrediction{});
    for (auto& g : r.grad) g.prob = 0.0;
    return r;
}

inline LossResult loss_face(const PredictionSet& pred, const TargetSet& target, const LossConfig& cfg = {}) {
    cfg.validate();
    detail::require_aligned(pred, target);
    LossResult r = make_result(pred.size());
    r.value = accumulate_face(pred, target, cfg, 1.0, r);
    return r;
}

inline LossResult loss_self(const PredictionSet& pred, const TargetSet& target, const ProjectionWeights& pw,
                            double radius = 1.0) {
    detail::require_aligned(pred, target);
    if (!(radius > 0.0)) fail(Errc::invalid_argument, "projection radius must be positive");
    LossResult r = make_result(pred.size());
    r.value = accumulate_self(pred, target, pw, radius, 1.0, r);
    r.terms.self = r.value;
    return r;
}

inline LossResult loss_gaze(const PredictionSet& pred, const TargetSet& target, const ProjectionWeights& pw,
                            const LossConfig& cfg = {}) {
    cfg.validate();
    detail::require_aligned(pred, target);
    LossResult r = make_result(pred.size());
    r.value = accumulate_gaze(pred, target, pw, cfg, 1.0, r);
    return r;
}

inline LossResult loss_total(const PredictionSet& pred, const TargetSet& target, const ProjectionWeights& pw,
                             const LossConfig& cfg = {}) {
    cfg.validate();
    detail::require_aligned(pred, target);
    LossResult r = make_result(pred.size());
    const double face = accumulate_face(pred, target, cfg, cfg.alpha, r);
    const double gaze = accumulate_gaze(pred, target, pw, cfg, cfg.beta, r);
    r.value = cfg.alpha * face + cfg.beta * gaze;
    return r;
}

/// Largest per-anchor consistency residual max_t |y_t - P_t(g)|_1 over positives.
inline double max_consistency_residual(const PredictionSet& pred, const TargetSet& target, double radius) {
    double m = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (target[i].positive())
            for (std::size_t t = 0; t < 3; ++t) m = std::max(m, projection_residual(pred[i], t, radius));
    return m;
}

}  // namespace gazeswap
