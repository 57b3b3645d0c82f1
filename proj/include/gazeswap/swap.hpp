#pragma once

#include <optional>
#include <string>

#include "gazeswap/blend.hpp"
#include "gazeswap/error.hpp"
#include "gazeswap/geometry.hpp"
#include "gazeswap/image.hpp"
#include "gazeswap/matching.hpp"
#include "gazeswap/normalization.hpp"

namespace gazeswap {

/// A face in the target (in-the-wild) image.
struct TargetFace {
    std::string face_id;
    BBox bbox;
    Landmarks68 landmarks{};
};

/// A gaze-labelled face, already in the normalised frame.
struct SourceFace {
    std::string face_id;
    Image normalized;
    GazeVector gaze;  // normalised-frame gaze label
};

struct SwapResult {
    Image image;
    GazeVector gaze;
    BBox bbox;
    Landmarks68 landmarks{};
    SwapMode mode = SwapMode::Full;
    std::string wider_id;
    std::string xgaze_id;
};

struct QualificationRule {
    double min_width_px = 30.0;
    double max_outside_fraction = 0.30;
};

/// Reason a face is not swapped, or nullopt when it qualifies.
inline std::optional<std::string> qualification_failure(const TargetFace& face, const QualificationRule& rule = {}) {
    if (face.bbox.width() < rule.min_width_px) return "too-small";
    std::size_t outside = 0;
    for (const auto& p : face.landmarks)
        if (!face.bbox.contains(p)) ++outside;
    if (static_cast<double>(outside) > rule.max_outside_fraction * static_cast<double>(face.landmarks.size()))
        return "landmarks-outside-box";
    return std::nullopt;
}

/// Renders the normalised source face in the target image frame (warp by W^-1).
inline Image backwarp_source(const Image& normalized, const NormalizationResult& norm, int target_width, int target_height) {
    Eigen::FullPivLU<Eigen::Matrix3d> lu(norm.warp);
    if (!lu.isInvertible()) fail(Errc::invalid_argument, "normalisation warp is singular");
    return warp_image(normalized, lu.inverse(), target_width, target_height);
}

/// Target pixels whose back-warped source location falls inside the crop.
inline RegionMask source_coverage(const NormalizationResult& norm, int crop_width, int crop_height, int target_width,
                                  int target_height) {
    RegionMask cov(target_width, target_height);
    for (int y = 0; y < target_height; ++y)
        for (int x = 0; x < target_width; ++x) {
            const Point2 s = apply_warp(norm.warp, {static_cast<double>(x), static_cast<double>(y)});
            if (s.x >= 0.0 && s.y >= 0.0 && s.x <= crop_width - 1.0 && s.y <= crop_height - 1.0) cov.set(x, y);
        }
    return cov;
}

/// Normalised-frame label back into the target camera frame: R^-1 g.
inline GazeVector transfer_gaze_label(const GazeVector& g_source, const NormalizationResult& norm) {
    if (!g_source.is_unit()) fail(Errc::invalid_argument, "source gaze must be unit norm");
    return denormalize_gaze(norm.rotation, g_source);
}

struct SwapOptions {
    MaskOptions mask;
    BlendOptions blend;
};

/// Back-warp, mask by swap mode, Poisson-blend, and rotate the label.
inline SwapResult swap_face(const Image& target, const TargetFace& face, const SourceFace& source,
                            const MatchResult& match, const SwapOptions& opts = {}) {
    if (match.wider_id != face.face_id || match.xgaze_id != source.face_id)
        fail(Errc::invalid_argument, "match " + match.wider_id + "/" + match.xgaze_id + " does not reference these faces");
    if (!match.norm) fail(Errc::invalid_argument, "match for " + match.wider_id + " carries no normalisation");
    const NormalizationResult& norm = *match.norm;

    const Image warped = backwarp_source(source.normalized, norm, target.width(), target.height());
    RegionMask mask = build_mask(face.landmarks, match.mode, target.width(), target.height(), opts.mask);
    const RegionMask cov =
        source_coverage(norm, source.normalized.width(), source.normalized.height(), target.width(), target.height());
    for (std::size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = mask.data[i] && cov.data[i];
    if (mask.count() == 0) fail(Errc::invalid_argument, "source crop does not cover the face mask");

    SwapResult out;
    out.image = poisson_blend(target, warped, mask, opts.blend);
    out.gaze = transfer_gaze_label(source.gaze, norm);
    out.bbox = face.bbox;
    out.landmarks = face.landmarks;
    out.mode = match.mode;
    out.wider_id = face.face_id;
    out.xgaze_id = source.face_id;
    return out;
}

}  // namespace gazeswap
