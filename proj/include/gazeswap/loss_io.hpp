#pragma once

// JSON-lines schema for loss instances (gradient-check fixtures). Gaze here is
// loss-space pitch/yaw in radians, hence the explicit `_rad` field names.

#include "gazeswap/dataset_io.hpp"
#include "gazeswap/gradcheck.hpp"

namespace gazeswap {

template <>
struct Schema<LossInstance> {
    static constexpr const char* name = "loss-instances";

    static void validate(const LossInstance& inst) {
        inst.cfg.validate();
        detail::require_aligned(inst.pred, inst.target);
        for (double p : inst.weights.p)
            if (!std::isfinite(p)) detail::invalid("weights", "must be finite");
        for (const auto& a : inst.pred)
            if (!(a.prob > 0.0 && a.prob < 1.0)) detail::invalid("anchors.pred.prob", "must lie in (0, 1)");
    }

    static Json to_json(const LossInstance& inst) {
        validate(inst);
        const LossConfig& c = inst.cfg;
        Json j;
        j["config"] = {{"alpha", c.alpha},         {"beta", c.beta},
                       {"face_box", c.face_box},   {"face_landmark", c.face_landmark},
                       {"gaze_self", c.gaze_self}, {"gaze_angle", c.gaze_angle},
                       {"gaze_projection", c.gaze_projection}, {"radius", c.radius}};
        j["weights"] = detail::array_json(inst.weights.p);
        Json anchors = Json::array();
        for (std::size_t i = 0; i < inst.pred.size(); ++i) {
            const auto& t = inst.target[i];
            const auto& a = inst.pred[i];
            Json proj = Json::array();
            for (const auto& p : a.proj) proj.push_back(detail::array_json(p));
            anchors.push_back({{"label", static_cast<int>(t.label)},
                               {"target", {{"box", detail::array_json(t.box)}, {"lmk", detail::array_json(t.lmk)}, {"gaze_rad", detail::array_json(t.gaze)}}},
                               {"pred",
                                {{"prob", a.prob},
                                 {"box", detail::array_json(a.box)},
                                 {"lmk", detail::array_json(a.lmk)},
                                 {"gaze_rad", detail::array_json(a.gaze)},
                                 {"proj", proj}}}});
        }
        j["anchors"] = anchors;
        return j;
    }

    static LossInstance from_json(const Json& j) {
        detail::require_keys(j, {"config", "weights", "anchors"}, {"config", "weights", "anchors"});
        LossInstance inst;
        const auto& c = j.at("config");
        detail::require_keys(c, {"alpha", "beta", "face_box", "face_landmark", "gaze_self", "gaze_angle", "gaze_projection", "radius"},
                             {"alpha", "beta", "face_box", "face_landmark", "gaze_self", "gaze_angle", "gaze_projection", "radius"});
        inst.cfg.alpha = detail::get_number(c, "alpha");
        inst.cfg.beta = detail::get_number(c, "beta");
        inst.cfg.face_box = detail::get_number(c, "face_box");
        inst.cfg.face_landmark = detail::get_number(c, "face_landmark");
        inst.cfg.gaze_self = detail::get_number(c, "gaze_self");
        inst.cfg.gaze_angle = detail::get_number(c, "gaze_angle");
        inst.cfg.gaze_projection = detail::get_number(c, "gaze_projection");
        inst.cfg.radius = detail::get_number(c, "radius");
        inst.weights.p = detail::get_array<3>(j, "weights");
        if (!j.at("anchors").is_array()) detail::invalid("anchors", "expected an array");
        for (const auto& ja : j.at("anchors")) {
            detail::require_keys(ja, {"label", "target", "pred"}, {"label", "target", "pred"});
            AnchorTarget t;
            const int label = detail::get_int(ja, "label");
            if (label < -1 || label > 1) detail::invalid("anchors.label", "expected -1, 0 or 1");
            t.label = static_cast<AnchorLabel>(label);
            const auto& jt = ja.at("target");
            detail::require_keys(jt, {"box", "lmk", "gaze_rad"}, {"box", "lmk", "gaze_rad"});
            t.box = detail::get_array<4>(jt, "box");
            t.lmk = detail::get_array<10>(jt, "lmk");
            t.gaze = detail::get_array<2>(jt, "gaze_rad");
            AnchorPrediction a;
            const auto& jp = ja.at("pred");
            detail::require_keys(jp, {"prob", "box", "lmk", "gaze_rad", "proj"}, {"prob", "box", "lmk", "gaze_rad", "proj"});
            a.prob = detail::get_number(jp, "prob");
            a.box = detail::get_array<4>(jp, "box");
            a.lmk = detail::get_array<10>(jp, "lmk");
            a.gaze = detail::get_array<2>(jp, "gaze_rad");
            const auto& proj = jp.at("proj");
            if (!proj.is_array() || proj.size() != 3) detail::invalid("anchors.pred.proj", "expected 3 points");
            for (std::size_t p = 0; p < 3; ++p) {
                if (!proj[p].is_array() || proj[p].size() != 2) detail::invalid("anchors.pred.proj", "expected [u, v] points");
                a.proj[p] = {detail::number_value(proj[p][0], "anchors.pred.proj"), detail::number_value(proj[p][1], "anchors.pred.proj")};
            }
            inst.target.push_back(t);
            inst.pred.push_back(a);
        }
        validate(inst);
        return inst;
    }
};

}  // namespace gazeswap
