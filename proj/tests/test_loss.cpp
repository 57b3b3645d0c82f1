#include <gtest/gtest.h>

#include "gazeswap/anchors.hpp"
#include "gazeswap/gradcheck.hpp"
#include "gazeswap/loss.hpp"
#include "gazeswap/toy_descent.hpp"

using namespace gazeswap;

namespace {

AnchorTarget positive_target() {
    AnchorTarget t;
    t.label = AnchorLabel::Positive;
    return t;
}

// Front/top/side images of a gaze written out from the spherical angles.
std::array<std::array<double, 2>, 3> plane_images(double pitch, double yaw, double r) {
    const double gx = -std::cos(pitch) * std::sin(yaw), gy = -std::sin(pitch), gz = -std::cos(pitch) * std::cos(yaw);
    return {{{r * gx, r * gy}, {-r * gz, r * gx}, {r * gz, r * gy}}};
}

}  // namespace

TEST(Iou, Examples) {
    EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 4}), 0.4);
    EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
    EXPECT_EQ(iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0);
}

TEST(AnchorAssignment, ThresholdsAndBestMatch) {
    AnchorSet set;
    set.anchors = {{5, 5, 10, 10}, {5, 2, 10, 4}, {5, 1, 10, 2}, {50, 50, 10, 10}};
    GroundTruthFace f;
    f.box = {0, 0, 10, 10};
    f.gaze = GazeAngles::from_degrees(10, -20);
    const auto t = assign_anchors({f}, set);
    ASSERT_EQ(t.size(), 4u);
    EXPECT_TRUE(t[0].positive());           // IoU 1
    EXPECT_TRUE(t[1].ignored());            // IoU 0.4
    EXPECT_EQ(t[2].label, AnchorLabel::Negative);  // IoU 0.2
    EXPECT_EQ(t[3].label, AnchorLabel::Negative);
    EXPECT_EQ(t[0].face, 0);
    EXPECT_DOUBLE_EQ(t[0].gaze[0], f.gaze.pitch);
    for (double v : t[0].box) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(AnchorAssignment, LowOverlapFaceKeepsItsBestAnchor) {
    AnchorSet set;
    set.anchors = {{5, 2, 10, 4}, {50, 50, 10, 10}};
    GroundTruthFace f;
    f.box = {0, 0, 10, 10};
    const auto t = assign_anchors({f}, set);
    EXPECT_TRUE(t[0].positive());
    EXPECT_EQ(t[1].label, AnchorLabel::Negative);
    GroundTruthFace bad;
    bad.box = {0, 0, 0, 5};
    EXPECT_THROW(assign_anchors({bad}, set), Error);
}

TEST(AnchorAssignment, EncodeDecode) {
    const Anchor a{20, 30, 16, 16};
    GroundTruthFace f;
    f.box = {14, 20, 34, 44};
    for (std::size_t k = 0; k < 5; ++k) f.landmarks[k] = {15.0 + k, 25.0 + 2 * k};
    const auto t = encode_target(a, f, 0);
    EXPECT_DOUBLE_EQ(a.cx + t.box[0] * a.w, 24.0);
    EXPECT_DOUBLE_EQ(a.cy + t.box[1] * a.h, 32.0);
    EXPECT_NEAR(a.w * std::exp(t.box[2]), 20.0, 1e-12);
    EXPECT_NEAR(a.h * std::exp(t.box[3]), 24.0, 1e-12);
    EXPECT_DOUBLE_EQ(a.cx + t.lmk[4] * a.w, 17.0);
}

TEST(AnchorSet, TileCounts) {
    const auto set = AnchorSet::tile(64, 48);
    // 8x6 cells * 2 + 4x3 * 2 + 2x2 * 2
    EXPECT_EQ(set.size(), 96u + 24u + 8u);
    EXPECT_THROW(AnchorSet::tile(0, 10), Error);
}

TEST(FaceLoss, HandComputedValue) {
    PredictionSet pred(3);
    TargetSet target(3);
    target[0] = positive_target();
    pred[0].prob = 0.8;
    pred[0].box = {0.5, -2.0, 0.0, 0.0};    // 0.125 + 1.5
    pred[0].lmk[3] = 0.2;                   // 0.02
    target[1].label = AnchorLabel::Negative;
    pred[1].prob = 0.1;
    target[2].label = AnchorLabel::Ignored;
    pred[2].prob = 0.9;
    LossConfig cfg;
    cfg.face_box = 2.0;
    cfg.face_landmark = 3.0;
    const auto r = loss_face(pred, target, cfg);
    const double cls = (-std::log(0.8) - std::log(0.9)) / 2.0;
    EXPECT_NEAR(r.value, cls + 2.0 * 1.625 + 3.0 * 0.02, 1e-15);
    EXPECT_EQ(r.grad[2].prob, 0.0);
}

TEST(FaceLoss, ProbabilityClip) {
    PredictionSet pred(1);
    TargetSet target{positive_target()};
    pred[0].prob = 0.0;
    const auto r = loss_face(pred, target);
    EXPECT_NEAR(r.value, -std::log(1e-7), 1e-9);
    EXPECT_TRUE(std::isfinite(r.value));
}

TEST(SelfLoss, HandComputedValue) {
    PredictionSet pred(1);
    TargetSet target{positive_target()};
    const double pitch = 0.2, yaw = -0.4, r = 1.5;
    pred[0].gaze = {pitch, yaw};
    const auto q = plane_images(pitch, yaw, r);
    const double off[3][2] = {{0.1, -0.2}, {0.0, 0.3}, {-0.05, 0.05}};
    for (int t = 0; t < 3; ++t)
        for (int c = 0; c < 2; ++c) pred[0].proj[t][c] = q[t][c] + off[t][c];
    ProjectionWeights pw;
    pw.p = {0.3, -0.2, 0.1};
    double expected = 0.0;
    for (int t = 0; t < 3; ++t) expected += (std::abs(off[t][0]) + std::abs(off[t][1])) * std::exp(-pw.p[t]) + pw.p[t];
    EXPECT_NEAR(loss_self(pred, target, pw, r).value, expected, 1e-12);
    EXPECT_NEAR(max_consistency_residual(pred, target, r), 0.3, 1e-12);
}

// d/dp (s e^-p + p) = 1 - s e^-p vanishes at p = ln s.
TEST(SelfLoss, StationaryAtLogResidual) {
    Rng rng(12);
    for (int i = 0; i < 20; ++i) {
        LossInstance inst = random_loss_instance(rng, 6);
        std::array<double, 3> mean{};
        std::size_t npos = 0;
        for (const auto& t : inst.target) npos += t.positive();
        for (std::size_t a = 0; a < inst.pred.size(); ++a) {
            if (!inst.target[a].positive()) continue;
            const auto q = plane_images(inst.pred[a].gaze[0], inst.pred[a].gaze[1], inst.cfg.radius);
            for (int t = 0; t < 3; ++t)
                mean[t] += (std::abs(inst.pred[a].proj[t][0] - q[t][0]) + std::abs(inst.pred[a].proj[t][1] - q[t][1])) / npos;
        }
        ProjectionWeights pw;
        for (int t = 0; t < 3; ++t) pw.p[t] = std::log(mean[t]);
        const auto r = loss_self(inst.pred, inst.target, pw, inst.cfg.radius);
        for (double g : r.grad_p) EXPECT_NEAR(g, 0.0, 1e-8);
    }
}

TEST(GazeLoss, HandComputedValue) {
    PredictionSet pred(2);
    TargetSet target{positive_target(), AnchorTarget{}};
    target[0].gaze = {0.1, 0.2};
    pred[0].gaze = {0.15, 0.0};
    const auto q = plane_images(0.1, 0.2, 1.0);
    const auto qp = plane_images(0.15, 0.0, 1.0);
    for (int t = 0; t < 3; ++t)
        for (int c = 0; c < 2; ++c) pred[0].proj[t][c] = q[t][c] + 0.01;
    LossConfig cfg;
    cfg.gaze_self = 0.5;
    cfg.gaze_angle = 2.0;
    cfg.gaze_projection = 3.0;
    ProjectionWeights pw;
    double self = 0.0;
    for (int t = 0; t < 3; ++t)
        for (int c = 0; c < 2; ++c) self += std::abs(pred[0].proj[t][c] - qp[t][c]);
    const double expected = 0.5 * self + 2.0 * (0.05 + 0.2) + 3.0 * 0.06;
    EXPECT_NEAR(loss_gaze(pred, target, pw, cfg).value, expected, 1e-12);
}

TEST(TotalLoss, WeightsCombineTerms) {
    Rng rng(3);
    LossInstance inst = random_loss_instance(rng, 10);
    const double face = loss_face(inst.pred, inst.target, inst.cfg).value;
    const double gaze = loss_gaze(inst.pred, inst.target, inst.weights, inst.cfg).value;
    const auto total = loss_total(inst.pred, inst.target, inst.weights, inst.cfg);
    EXPECT_NEAR(total.value, inst.cfg.alpha * face + inst.cfg.beta * gaze, 1e-12);
    const auto& t = total.terms;
    EXPECT_NEAR(t.cls + t.box + t.lmk + t.self + t.angle + t.proj, total.value, 1e-12);
}

TEST(TotalLoss, NoPositivesGivesClassificationOnly) {
    PredictionSet pred(2);
    TargetSet target(2);
    pred[0].prob = pred[1].prob = 0.25;
    const auto r = loss_total(pred, target, {}, {});
    EXPECT_NEAR(r.value, -std::log(0.75), 1e-15);
}

TEST(Loss, InputValidation) {
    PredictionSet pred(2);
    TargetSet target(3);
    EXPECT_THROW(loss_total(pred, target, {}, {}), Error);
    LossConfig bad;
    bad.radius = 0.0;
    EXPECT_THROW(loss_total(pred, TargetSet(2), {}, bad), Error);
    bad = {};
    bad.alpha = -1.0;
    EXPECT_THROW(loss_face(pred, TargetSet(2), bad), Error);
}

TEST(Gradcheck, AllLossesAllBlocks) {
    Rng rng(100);
    const std::vector<std::pair<std::string, LossFunction>> fns{
        {"face", [](const auto& p, const auto& t, const auto&, const auto& c) { return loss_face(p, t, c); }},
        {"self", [](const auto& p, const auto& t, const auto& w, const auto& c) { return loss_self(p, t, w, c.radius); }},
        {"gaze", [](const auto& p, const auto& t, const auto& w, const auto& c) { return loss_gaze(p, t, w, c); }},
        {"total", [](const auto& p, const auto& t, const auto& w, const auto& c) { return loss_total(p, t, w, c); }},
    };
    for (int i = 0; i < 25; ++i) {
        const LossInstance inst = random_loss_instance(rng, 8);
        for (const auto& [name, fn] : fns) {
            const auto rep = gradcheck(inst, fn);
            EXPECT_LT(rep.worst(), 1e-4) << name << " instance " << i;
        }
    }
}

TEST(Gradcheck, DetectsWrongGradient) {
    Rng rng(5);
    const LossInstance inst = random_loss_instance(rng, 4);
    const auto rep = gradcheck(inst, [](const auto& p, const auto& t, const auto& w, const auto& c) {
        auto r = loss_total(p, t, w, c);
        r.grad[0].box[0] *= 1.01;
        return r;
    });
    EXPECT_GT(rep.max_rel_error.at("box"), 1e-3);
    EXPECT_LT(rep.max_rel_error.at("gaze"), 1e-4);
}

TEST(ToyDescent, ConvergesOnRealizableProblem) {
    const ToyProblem prob = make_realizable_problem(64, 7);
    Rng rng(7);
    LinearHead head = LinearHead::random(static_cast<int>(prob.features.cols()), rng);
    const auto trace = toy_descent(prob, head, LossConfig{}, DescentOptions{});
    ASSERT_FALSE(trace.diverged());
    ASSERT_EQ(trace.loss.size(), 5001u);
    EXPECT_LT(trace.loss.back(), 0.01 * trace.loss.front());
    EXPECT_LT(trace.final_consistency, 1e-2);
}

TEST(ToyDescent, DivergenceIsReported) {
    const ToyProblem prob = make_realizable_problem(16, 3);
    Rng rng(3);
    LinearHead head = LinearHead::random(static_cast<int>(prob.features.cols()), rng);
    DescentOptions opts;
    opts.steps = 200;
    opts.lr = 1e6;
    opts.schedule = LrSchedule::Constant;
    const auto trace = toy_descent(prob, head, LossConfig{}, opts);
    EXPECT_TRUE(trace.diverged());
    EXPECT_FALSE(std::isfinite(trace.loss.back()));
}

TEST(ToyDescent, Schedules) {
    DescentOptions o;
    o.steps = 100;
    o.lr = 0.1;
    o.schedule = LrSchedule::Constant;
    EXPECT_EQ(scheduled_lr(o, 50), 0.1);
    o.schedule = LrSchedule::LinearDecay;
    EXPECT_DOUBLE_EQ(scheduled_lr(o, 50), 0.05);
    o.schedule = LrSchedule::Exponential;
    o.final_lr_fraction = 0.01;
    EXPECT_DOUBLE_EQ(scheduled_lr(o, 50), 0.01);
    EXPECT_NEAR(scheduled_lr(o, 100), 0.001, 1e-15);
}

TEST(FaceLoss, SmoothL1HalfResidualAndGating) {
    PredictionSet pred(2);
    TargetSet target{positive_target(), AnchorTarget{}};
    target[1].label = AnchorLabel::Negative;
    pred[0].prob = 1.0;
    pred[0].box = {0.5, 0.5, 0.5, 0.5};
    pred[1].prob = 0.0;
    pred[1].box = {3.0, -4.0, 1.0, 2.0};
    pred[1].lmk.fill(7.0);
    LossConfig cfg;
    cfg.face_landmark = 0.0;
    const auto r = loss_face(pred, target, cfg);
    EXPECT_DOUBLE_EQ(r.terms.box, 0.5);
    for (double g : r.grad[1].box) EXPECT_EQ(g, 0.0);
    for (double g : r.grad[1].lmk) EXPECT_EQ(g, 0.0);

    PredictionSet perfect(1);
    perfect[0].prob = 1.0;
    const auto p = loss_face(perfect, {positive_target()});
    EXPECT_EQ(p.terms.box, 0.0);
    EXPECT_EQ(p.terms.lmk, 0.0);
    EXPECT_NEAR(p.terms.cls, -std::log(1.0 - 1e-7), 1e-15);
}

TEST(SelfLoss, ZeroWhenConsistentAndSinglePlaneExample) {
    PredictionSet pred(1);
    TargetSet target{positive_target()};
    pred[0].gaze = {0.3, -0.1};
    const auto q = plane_images(0.3, -0.1, 1.0);
    for (int t = 0; t < 3; ++t) pred[0].proj[t] = q[t];
    EXPECT_NEAR(loss_self(pred, target, {}, 1.0).value, 0.0, 1e-15);

    // Front plane residual e with p = 1; the others consistent with p = 0.
    pred[0].proj[0][0] += std::exp(1.0);
    ProjectionWeights pw;
    pw.p = {1.0, 0.0, 0.0};
    EXPECT_NEAR(loss_self(pred, target, pw, 1.0).value, 2.0, 1e-12);
}

TEST(SelfLoss, StationaryPointIsMinimumAndEnvelope) {
    Rng rng(14);
    const LossInstance inst = random_loss_instance(rng, 5);
    ProjectionWeights at;
    const double r = inst.cfg.radius;
    std::array<double, 3> s{};
    std::size_t npos = 0;
    for (const auto& t : inst.target) npos += t.positive();
    ASSERT_GT(npos, 0u);
    for (std::size_t a = 0; a < inst.pred.size(); ++a) {
        if (!inst.target[a].positive()) continue;
        const auto q = plane_images(inst.pred[a].gaze[0], inst.pred[a].gaze[1], r);
        for (int t = 0; t < 3; ++t)
            s[t] += (std::abs(inst.pred[a].proj[t][0] - q[t][0]) + std::abs(inst.pred[a].proj[t][1] - q[t][1])) / npos;
    }
    double envelope = 0.0;
    for (int t = 0; t < 3; ++t) {
        at.p[t] = std::log(s[t]);
        envelope += 1.0 + std::log(s[t]);
    }
    const double h = 1e-4;
    const double f0 = loss_self(inst.pred, inst.target, at, r).value;
    EXPECT_NEAR(f0, envelope, 1e-12);
    for (int t = 0; t < 3; ++t) {
        ProjectionWeights up = at, down = at;
        up.p[t] += h;
        down.p[t] -= h;
        const double second = (loss_self(inst.pred, inst.target, up, r).value - 2 * f0 +
                               loss_self(inst.pred, inst.target, down, r).value) / (h * h);
        EXPECT_GT(second, 0.0);
    }
    Rng prng(15);
    for (int i = 0; i < 100; ++i) {
        ProjectionWeights other;
        for (auto& p : other.p) p = prng.uniform(-3, 3);
        EXPECT_GE(loss_self(inst.pred, inst.target, other, r).value, envelope - 1e-12);
    }
}

TEST(GazeLoss, ExamplesFromWeightGating) {
    PredictionSet pred(1);
    TargetSet target{positive_target()};
    target[0].gaze = {0.2, -0.3};
    pred[0].gaze = {0.2, -0.3};
    const auto q = plane_images(0.2, -0.3, 1.0);
    for (int t = 0; t < 3; ++t) pred[0].proj[t] = q[t];
    EXPECT_NEAR(loss_gaze(pred, target, {}, {}).value, 0.0, 1e-15);

    pred[0].gaze[0] = 0.3;
    LossConfig l1_only;
    l1_only.gaze_self = 0.0;
    l1_only.gaze_projection = 0.0;
    EXPECT_NEAR(loss_gaze(pred, target, {}, l1_only).value, 0.1, 1e-15);
    pred[0].gaze[1] = -0.1;
    EXPECT_NEAR(loss_gaze(pred, target, {}, l1_only).value, 0.1 + 0.2, 1e-15);
}

TEST(TotalLoss, AlphaZeroAndBetaLinearity) {
    Rng rng(16);
    const LossInstance inst = random_loss_instance(rng, 8);
    LossConfig cfg = inst.cfg;
    cfg.alpha = 0.0;
    const auto r = loss_total(inst.pred, inst.target, inst.weights, cfg);
    for (const auto& g : r.grad) {
        EXPECT_EQ(g.prob, 0.0);
        for (double v : g.box) EXPECT_EQ(v, 0.0);
        for (double v : g.lmk) EXPECT_EQ(v, 0.0);
    }
    LossConfig one = inst.cfg, two = inst.cfg;
    one.beta = 0.75;
    two.beta = 1.5;
    const auto a = loss_total(inst.pred, inst.target, inst.weights, one);
    const auto b = loss_total(inst.pred, inst.target, inst.weights, two);
    for (std::size_t i = 0; i < a.grad.size(); ++i)
        for (int k = 0; k < 2; ++k) EXPECT_EQ(b.grad[i].gaze[k], 2.0 * a.grad[i].gaze[k]);
    for (int t = 0; t < 3; ++t) EXPECT_EQ(b.grad_p[t], 2.0 * a.grad_p[t]);
}

TEST(FaceLoss, NonNegative) {
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        const LossInstance inst = random_loss_instance(rng, 6);
        const auto r = loss_total(inst.pred, inst.target, inst.weights, inst.cfg);
        EXPECT_GE(loss_face(inst.pred, inst.target, inst.cfg).value, 0.0);
        EXPECT_GE(r.terms.angle, 0.0);
        EXPECT_GE(r.terms.proj, 0.0);
    }
}

TEST(ToyDescent, ZeroLearningRateKeepsTraceConstant) {
    const ToyProblem prob = make_realizable_problem(16, 9);
    Rng rng(9);
    LinearHead head = LinearHead::random(static_cast<int>(prob.features.cols()), rng);
    DescentOptions opts;
    opts.steps = 20;
    opts.lr = 0.0;
    const auto trace = toy_descent(prob, head, LossConfig{}, opts);
    for (double v : trace.loss) EXPECT_EQ(v, trace.loss.front());
    opts.steps = 0;
    EXPECT_THROW(toy_descent(prob, head, LossConfig{}, opts), Error);
}

TEST(ToyDescent, DeterministicGivenSeed) {
    const ToyProblem prob = make_realizable_problem(16, 11);
    DescentOptions opts;
    opts.steps = 50;
    Rng r1(2), r2(2);
    LinearHead h1 = LinearHead::random(static_cast<int>(prob.features.cols()), r1);
    LinearHead h2 = LinearHead::random(static_cast<int>(prob.features.cols()), r2);
    EXPECT_EQ(toy_descent(prob, h1, {}, opts).loss, toy_descent(prob, h2, {}, opts).loss);
}
