#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gazeswap/error.hpp"
#include "gazeswap/geometry.hpp"
#include "gazeswap/normalization.hpp"

namespace gazeswap {

struct Anchor {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
    int level = 0;

    BBox box() const { return {cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0}; }
};

struct AnchorLevel {
    int stride;
    std::vector<double> sizes;  // square anchor side lengths, pixels
};

inline std::vector<AnchorLevel> default_anchor_levels() {
    return {{8, {16.0, 32.0}}, {16, {64.0, 128.0}}, {32, {256.0, 512.0}}};
}

struct AnchorSet {
    std::vector<Anchor> anchors;

    std::size_t size() const { return anchors.size(); }

    /// Square anchors centred on every stride cell of every pyramid level.
    static AnchorSet tile(int image_width, int image_height, const std::vector<AnchorLevel>& levels = default_anchor_levels()) {
        if (image_width < 1 || image_height < 1) fail(Errc::invalid_argument, "image size must be positive");
        AnchorSet set;
        for (std::size_t l = 0; l < levels.size(); ++l) {
            const int s = levels[l].stride;
            const int nx = (image_width + s - 1) / s, ny = (image_height + s - 1) / s;
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i)
                    for (double size : levels[l].sizes) {
                        if (!(size > 0.0)) fail(Errc::invalid_argument, "anchor sizes must be positive");
                        set.anchors.push_back({(i + 0.5) * s, (j + 0.5) * s, size, size, static_cast<int>(l)});
                    }
        }
        return set;
    }
};

inline double iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

/// Ground-truth face for anchor assignment: box, five landmarks (eyes, nose
/// tip, mouth corners) and gaze.
struct GroundTruthFace {
    BBox box;
    std::array<Point2, 5> landmarks{};
    GazeAngles gaze;
};

enum class AnchorLabel : std::int8_t { Ignored = -1, Negative = 0, Positive = 1 };

struct AnchorTarget {
    AnchorLabel label = AnchorLabel::Negative;
    int face = -1;                   // owning face for positives
    std::array<double, 4> box{};     // dcx/w, dcy/h, log(w'/w), log(h'/h)
    std::array<double, 10> lmk{};    // (x - cx)/w, (y - cy)/h per point
    std::array<double, 2> gaze{};    // pitch, yaw (radians)

    double prob() const { return label == AnchorLabel::Positive ? 1.0 : 0.0; }
    bool positive() const { return label == AnchorLabel::Positive; }
    bool ignored() const { return label == AnchorLabel::Ignored; }
};

using TargetSet = std::vector<AnchorTarget>;

/// Encodes a face against one anchor.
inline AnchorTarget encode_target(const Anchor& a, const GroundTruthFace& f, int face_index) {
    AnchorTarget t;
    t.label = AnchorLabel::Positive;
    t.face = face_index;
    const Point2 c = f.box.center();
    t.box = {(c.x - a.cx) / a.w, (c.y - a.cy) / a.h, std::log(f.box.width() / a.w), std::log(f.box.height() / a.h)};
    for (std::size_t k = 0; k < 5; ++k) {
        t.lmk[2 * k] = (f.landmarks[k].x - a.cx) / a.w;
        t.lmk[2 * k + 1] = (f.landmarks[k].y - a.cy) / a.h;
    }
    t.gaze = {f.gaze.pitch, f.gaze.yaw};
    return t;
}

struct AssignOptions {
    double iou_positive = 0.5;
    double iou_negative = 0.3;
};

/// Positive at IoU >= iou_positive or when the anchor is a face's best match;
/// negative below iou_negative; ignored in between.
inline TargetSet assign_anchors(const std::vector<GroundTruthFace>& faces, const AnchorSet& anchors, AssignOptions opts = {}) {
    for (const auto& f : faces)
        if (!(f.box.width() > 0.0) || !(f.box.height() > 0.0)) fail(Errc::invalid_argument, "face boxes must have positive size");

    const std::size_t na = anchors.size(), nf = faces.size();
    std::vector<double> best_iou(na, 0.0);
    std::vector<int> best_face(na, -1);
    std::vector<std::size_t> face_best_anchor(nf, 0);
    std::vector<double> face_best_iou(nf, -1.0);
    for (std::size_t i = 0; i < na; ++i) {
        const BBox ab = anchors.anchors[i].box();
        for (std::size_t f = 0; f < nf; ++f) {
            const double v = iou(ab, faces[f].box);
            if (v > best_iou[i]) {
                best_iou[i] = v;
                best_face[i] = static_cast<int>(f);
            }
            if (v > face_best_iou[f]) {
                face_best_iou[f] = v;
                face_best_anchor[f] = i;
            }
        }
    }
    TargetSet targets(na);
    for (std::size_t i = 0; i < na; ++i) {
        if (best_face[i] >= 0 && best_iou[i] >= opts.iou_positive)
            targets[i] = encode_target(anchors.anchors[i], faces[static_cast<std::size_t>(best_face[i])], best_face[i]);
        else if (best_iou[i] < opts.iou_negative)
            targets[i].label = AnchorLabel::Negative;
        else
            targets[i].label = AnchorLabel::Ignored;
    }
    for (std::size_t f = 0; f < nf; ++f)
        if (face_best_iou[f] > 0.0) {
            const std::size_t i = face_best_anchor[f];
            targets[i] = encode_target(anchors.anchors[i], faces[f], static_cast<int>(f));
        }
    return targets;
}

}  // namespace gazeswap
