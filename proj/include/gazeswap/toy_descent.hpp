#pragma once

// Desk-scale stand-in for network training: an affine head maps fixed feature
// vectors to per-anchor predictions and is fitted by full-batch gradient
// descent on the total loss, projection weights included.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <vector>

#include "gazeswap/anchors.hpp"
#include "gazeswap/error.hpp"
#include "gazeswap/loss.hpp"
#include "gazeswap/random.hpp"

namespace gazeswap {

// Output layout: logit | box(4) | lmk(10) | gaze(2) | front(2) | top(2) | side(2)
inline constexpr int kHeadOutputs = 23;

struct LinearHead {
    Eigen::MatrixXd weight;  // kHeadOutputs x features
    Eigen::VectorXd bias;    // kHeadOutputs
    ProjectionWeights p;

    static LinearHead random(int features, Rng& rng, double scale = 0.01) {
        LinearHead h;
        h.weight.resize(kHeadOutputs, features);
        for (Eigen::Index i = 0; i < h.weight.size(); ++i) h.weight.data()[i] = scale * rng.normal();
        h.bias = Eigen::VectorXd::Zero(kHeadOutputs);
        return h;
    }
};

struct ToyProblem {
    Eigen::MatrixXd features;  // anchors x features
    TargetSet targets;
};

inline double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

inline PredictionSet apply_head(const LinearHead& head, const Eigen::MatrixXd& features) {
    const Eigen::MatrixXd out = (features * head.weight.transpose()).rowwise() + head.bias.transpose();
    PredictionSet pred(static_cast<std::size_t>(features.rows()));
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        auto& a = pred[static_cast<std::size_t>(i)];
        a.prob = sigmoid(out(i, 0));
        for (int k = 0; k < 4; ++k) a.box[static_cast<std::size_t>(k)] = out(i, 1 + k);
        for (int k = 0; k < 10; ++k) a.lmk[static_cast<std::size_t>(k)] = out(i, 5 + k);
        for (int k = 0; k < 2; ++k) a.gaze[static_cast<std::size_t>(k)] = out(i, 15 + k);
        for (int t = 0; t < 3; ++t)
            for (int c = 0; c < 2; ++c) a.proj[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)] = out(i, 17 + 2 * t + c);
    }
    return pred;
}

/// Anchors whose features contain every target quantity, so an affine head can
/// reproduce the targets exactly (the classification logit only up to scale).
inline ToyProblem make_realizable_problem(std::size_t anchors, std::uint64_t seed, double radius = 1.0) {
    Rng rng(seed);
    constexpr int kNoise = 3;
    constexpr int kFeatures = 1 + 4 + 10 + 2 + 6 + kNoise;
    ToyProblem prob;
    prob.features.resize(static_cast<Eigen::Index>(anchors), kFeatures);
    prob.targets.resize(anchors);
    const double max_angle = deg2rad(40.0);
    for (std::size_t i = 0; i < anchors; ++i) {
        auto& t = prob.targets[i];
        t.label = i % 2 == 0 ? AnchorLabel::Positive : AnchorLabel::Negative;
        for (auto& v : t.box) v = rng.uniform(-0.5, 0.5);
        for (auto& v : t.lmk) v = rng.uniform(-0.5, 0.5);
        for (auto& v : t.gaze) v = rng.uniform(-max_angle, max_angle);

        const auto row = static_cast<Eigen::Index>(i);
        int col = 0;
        prob.features(row, col++) = t.positive() ? 1.0 : -1.0;
        for (double v : t.box) prob.features(row, col++) = v;
        for (double v : t.lmk) prob.features(row, col++) = v;
        for (double v : t.gaze) prob.features(row, col++) = v;
        for (Plane p : kPlanes) {
            const PlanePoint q = project(p, {t.gaze[0], t.gaze[1]}, FaceRadius(radius));
            prob.features(row, col++) = q.u;
            prob.features(row, col++) = q.v;
        }
        for (int k = 0; k < kNoise; ++k) prob.features(row, col++) = rng.uniform(-0.5, 0.5);
    }
    // Gaze and its projections are nearly collinear at moderate angles. An
    // invertible affine whitening keeps the targets affine in the features and
    // makes the descent well conditioned.
    const Eigen::RowVectorXd mean = prob.features.colwise().mean();
    const Eigen::MatrixXd centered = prob.features.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(anchors);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseMax(1e-12).cwiseSqrt().cwiseInverse();
    prob.features = centered * es.eigenvectors() * inv_sqrt.asDiagonal();
    return prob;
}

enum class LrSchedule { Constant, LinearDecay, Exponential };

struct DescentOptions {
    int steps = 5000;
    double lr = 0.02;
    LrSchedule schedule = LrSchedule::Exponential;
    double final_lr_fraction = 1e-3;  // exponential schedule: lr at the last step / lr
};

inline double scheduled_lr(const DescentOptions& opts, int step) {
    const double frac = static_cast<double>(step) / static_cast<double>(opts.steps);
    switch (opts.schedule) {
        case LrSchedule::Constant: return opts.lr;
        case LrSchedule::LinearDecay: return opts.lr * (1.0 - frac);
        case LrSchedule::Exponential: return opts.lr * std::pow(opts.final_lr_fraction, frac);
    }
    return opts.lr;
}

struct DescentTrace {
    std::vector<double> loss;                   // loss before each step, plus the final loss
    std::vector<std::array<double, 3>> p;       // projection weights, same indexing
    double final_consistency = 0.0;             // max_t |y_t - P_t(y_g)|_1 over positives at the end
    int diverged_at = -1;                       // step index of the first non-finite loss

    bool diverged() const { return diverged_at >= 0; }
};

inline DescentTrace toy_descent(const ToyProblem& problem, LinearHead& head, const LossConfig& cfg,
                                const DescentOptions& opts) {
    if (opts.steps < 1) fail(Errc::invalid_argument, "descent needs at least one step");
    if (head.weight.rows() != kHeadOutputs || head.weight.cols() != problem.features.cols())
        fail(Errc::invalid_argument, "head does not match the feature dimension");

    const Eigen::MatrixXd& x = problem.features;
    const auto n = x.rows();
    DescentTrace trace;
    Eigen::MatrixXd grad_out(n, kHeadOutputs);

    for (int step = 0; step <= opts.steps; ++step) {
        const PredictionSet pred = apply_head(head, x);
        const LossResult loss = loss_total(pred, problem.targets, head.p, cfg);
        trace.loss.push_back(loss.value);
        trace.p.push_back(head.p.p);
        if (!std::isfinite(loss.value)) {
            trace.diverged_at = step;
            return trace;
        }
        if (step == opts.steps) {
            trace.final_consistency = max_consistency_residual(pred, problem.targets, cfg.radius);
            break;
        }

        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& g = loss.grad[static_cast<std::size_t>(i)];
            const double pr = pred[static_cast<std::size_t>(i)].prob;
            grad_out(i, 0) = g.prob * pr * (1.0 - pr);
            for (int k = 0; k < 4; ++k) grad_out(i, 1 + k) = g.box[static_cast<std::size_t>(k)];
            for (int k = 0; k < 10; ++k) grad_out(i, 5 + k) = g.lmk[static_cast<std::size_t>(k)];
            for (int k = 0; k < 2; ++k) grad_out(i, 15 + k) = g.gaze[static_cast<std::size_t>(k)];
            for (int t = 0; t < 3; ++t)
                for (int c = 0; c < 2; ++c)
                    grad_out(i, 17 + 2 * t + c) = g.proj[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
        }
        const double lr = scheduled_lr(opts, step);
        head.weight -= lr * grad_out.transpose() * x;
        head.bias -= lr * grad_out.colwise().sum().transpose();
        for (std::size_t t = 0; t < 3; ++t) head.p.p[t] -= lr * loss.grad_p[t];
    }
    return trace;
}

}  // namespace gazeswap
