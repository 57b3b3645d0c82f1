#pragma once

// Central-difference verification of the analytic loss gradients, plus a
// generator of random instances kept away from the L1 / smooth-L1 kinks.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gazeswap/anchors.hpp"
#include "gazeswap/loss.hpp"
#include "gazeswap/random.hpp"

namespace gazeswap {

struct LossInstance {
    PredictionSet pred;
    TargetSet target;
    ProjectionWeights weights;
    LossConfig cfg;
};

inline const std::vector<std::string>& parameter_blocks() {
    static const std::vector<std::string> blocks{"class", "box", "landmark", "gaze", "proj_F", "proj_T", "proj_S", "p"};
    return blocks;
}

/// Visits every differentiable input as (block, reference). Prediction and
/// gradient sets share the layout, so visiting both in lockstep pairs them.
template <typename F>
void for_each_parameter(PredictionSet& pred, ProjectionWeights& pw, F&& f) {
    static const char* proj_names[3] = {"proj_F", "proj_T", "proj_S"};
    for (auto& a : pred) {
        f("class", a.prob);
        for (auto& v : a.box) f("box", v);
        for (auto& v : a.lmk) f("landmark", v);
        for (auto& v : a.gaze) f("gaze", v);
        for (std::size_t t = 0; t < 3; ++t)
            for (auto& v : a.proj[t]) f(proj_names[t], v);
    }
    for (auto& v : pw.p) f("p", v);
}

struct GradcheckReport {
    std::map<std::string, double> max_rel_error;  // per parameter block
    std::size_t parameters = 0;

    double worst() const {
        double w = 0.0;
        for (const auto& [_, v] : max_rel_error) w = std::max(w, v);
        return w;
    }
    void merge(const GradcheckReport& o) {
        for (const auto& [k, v] : o.max_rel_error) max_rel_error[k] = std::max(max_rel_error[k], v);
        parameters += o.parameters;
    }
};

/// Relative error |a - n| / max(|a|, |n|); differences below `abs_floor` count as exact.
inline double relative_error(double analytic, double numeric, double abs_floor = 1e-9) {
    const double diff = std::abs(analytic - numeric);
    if (diff <= abs_floor) return 0.0;
    return diff / std::max(std::abs(analytic), std::abs(numeric));
}

using LossFunction = std::function<LossResult(const PredictionSet&, const TargetSet&, const ProjectionWeights&, const LossConfig&)>;

inline GradcheckReport gradcheck(const LossInstance& inst, const LossFunction& fn, double h = 1e-5) {
    LossResult analytic = fn(inst.pred, inst.target, inst.weights, inst.cfg);
    PredictionSet pred = inst.pred;
    ProjectionWeights pw = inst.weights;

    std::vector<double> numeric;
    for_each_parameter(pred, pw, [&](const char*, double& v) {
        const double saved = v;
        v = saved + h;
        const double up = fn(pred, inst.target, pw, inst.cfg).value;
        v = saved - h;
        const double down = fn(pred, inst.target, pw, inst.cfg).value;
        v = saved;
        numeric.push_back((up - down) / (2.0 * h));
    });

    GradcheckReport report;
    for (const auto& b : parameter_blocks()) report.max_rel_error[b] = 0.0;
    std::size_t k = 0;
    ProjectionWeights gp;
    gp.p = analytic.grad_p;
    for_each_parameter(analytic.grad, gp, [&](const char* block, double& g) {
        auto& slot = report.max_rel_error[block];
        slot = std::max(slot, relative_error(g, numeric[k++]));
    });
    report.parameters = numeric.size();
    return report;
}

inline GradcheckReport gradcheck_total(const LossInstance& inst, double h = 1e-5) {
    return gradcheck(inst, [](const auto& p, const auto& t, const auto& w, const auto& c) { return loss_total(p, t, w, c); }, h);
}

/// Random instance with every L1 residual at least `margin` from zero, every
/// smooth-L1 residual at least `margin` from 0 and +-1, and probabilities in
/// (0.05, 0.95).
inline LossInstance random_loss_instance(Rng& rng, std::size_t anchors = 8, double margin = 1e-3) {
    LossInstance inst;
    inst.cfg.alpha = rng.uniform(0.5, 2.0);
    inst.cfg.beta = rng.uniform(0.5, 2.0);
    inst.cfg.face_box = rng.uniform(0.5, 2.0);
    inst.cfg.face_landmark = rng.uniform(0.5, 2.0);
    inst.cfg.gaze_self = rng.uniform(0.5, 2.0);
    inst.cfg.gaze_angle = rng.uniform(0.5, 2.0);
    inst.cfg.gaze_projection = rng.uniform(0.5, 2.0);
    inst.cfg.radius = rng.uniform(0.5, 2.0);
    for (auto& p : inst.weights.p) p = rng.uniform(-1.0, 1.0);

    auto signed_away = [&](double lo, double hi) { return (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi); };
    auto smooth_residual = [&]() {
        return rng.uniform() < 0.7 ? signed_away(margin + 0.05, 1.0 - margin) : signed_away(1.0 + margin, 2.0);
    };
    const double max_angle = deg2rad(60.0);

    inst.pred.resize(anchors);
    inst.target.resize(anchors);
    for (std::size_t i = 0; i < anchors; ++i) {
        auto& t = inst.target[i];
        const double u = rng.uniform();
        t.label = i == 0 || u < 0.5 ? AnchorLabel::Positive : (u < 0.8 ? AnchorLabel::Negative : AnchorLabel::Ignored);
        for (auto& v : t.box) v = rng.uniform(-1.0, 1.0);
        for (auto& v : t.lmk) v = rng.uniform(-1.0, 1.0);
        for (auto& v : t.gaze) v = rng.uniform(-max_angle, max_angle);

        auto& a = inst.pred[i];
        a.prob = rng.uniform(0.05, 0.95);
        for (std::size_t k = 0; k < 4; ++k) a.box[k] = t.box[k] + smooth_residual();
        for (std::size_t k = 0; k < 10; ++k) a.lmk[k] = t.lmk[k] + smooth_residual();
        for (std::size_t k = 0; k < 2; ++k) a.gaze[k] = t.gaze[k] + signed_away(margin, 0.3);
        const double r = inst.cfg.radius;
        for (std::size_t p = 0; p < 3; ++p) {
            const auto from_pred = detail::plane_point(kPlanes[p], a.gaze[0], a.gaze[1], r);
            const auto from_gt = detail::plane_point(kPlanes[p], t.gaze[0], t.gaze[1], r);
            for (std::size_t c = 0; c < 2; ++c) {
                double v;
                do {
                    v = from_pred[c] + signed_away(margin, 0.5 * r);
                } while (std::abs(v - from_gt[c]) < margin);
                a.proj[p][c] = v;
            }
        }
    }
    return inst;
}

}  // namespace gazeswap
