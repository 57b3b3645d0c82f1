#pragma once

// Batch drivers behind the `match`, `swap` and `eval` subcommands.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gazeswap/dataset_io.hpp"
#include "gazeswap/eval.hpp"
#include "gazeswap/matching.hpp"
#include "gazeswap/parallel.hpp"
#include "gazeswap/swap.hpp"

namespace gazeswap {

/// Normalisation of an in-the-wild face from its landmarks, assuming the
/// default intrinsics of its image.
inline NormalizationResult normalize_face(const FaceEntry& face, const NormalizationParams& params = {}) {
    const auto cam = CameraIntrinsics::default_for(face.image_width, face.image_height);
    return compute_normalization(estimate_head_pose(face.landmarks, cam).pose, cam, params);
}

struct MatchBatchOptions {
    MatchConfig config;
    NormalizationParams normalization;
    unsigned jobs = 1;
};

struct MatchBatch {
    std::vector<MatchRecord> matches;            // one per query, in query order
    std::vector<std::string> normalization_failures;  // "face_id: reason"
};

/// Retrieves a source face for every query. When `wider_faces` names a query,
/// its normalisation is attached; faces whose pose cannot be estimated are
/// matched without one and reported.
inline MatchBatch match_batch(std::span<const AttributeRecord> queries, std::span<const AttributeRecord> candidates,
                              const std::map<std::string, FaceEntry>& wider_faces, const MatchBatchOptions& opts) {
    opts.config.validate();
    MatchBatch out;
    out.matches.resize(queries.size());
    std::vector<std::optional<std::string>> failures(queries.size());
    parallel_for(queries.size(), opts.jobs, [&](std::size_t i) {
        MatchResult m = retrieve(queries[i], candidates, opts.config);
        if (const auto it = wider_faces.find(queries[i].face_id); it != wider_faces.end()) {
            try {
                m.norm = normalize_face(it->second, opts.normalization);
            } catch (const Error& e) {
                failures[i] = queries[i].face_id + ": " + e.what();
            }
        }
        out.matches[i] = to_record(m);
    });
    for (auto& f : failures)
        if (f) out.normalization_failures.push_back(std::move(*f));
    return out;
}

struct SwapBatchOptions {
    SwapOptions swap;
    QualificationRule qualification;
    unsigned jobs = 1;
};

struct SwapBatch {
    std::vector<ImageAnnotation> annotations;  // one per target image, sorted by image id
    std::size_t solver_failures = 0;
};

/// Swaps every matched face of every target image and writes
/// `<out_dir>/images/<image_id>.png` plus the annotation records (returned,
/// not written). Faces of one image are composited in manifest order; images
/// run in parallel.
inline SwapBatch swap_batch(const std::filesystem::path& manifest_path, std::span<const FaceEntry> faces,
                            std::span<const MatchRecord> matches, const std::filesystem::path& out_dir,
                            const SwapBatchOptions& opts) {
    std::map<std::string, const FaceEntry*> sources;
    std::map<std::string, std::vector<const FaceEntry*>> by_image;
    for (const auto& f : faces) {
        if (f.source == FaceSource::XGaze) {
            if (!sources.emplace(f.face_id, &f).second) fail(Errc::validation_error, "duplicate face id \"" + f.face_id + "\"");
        } else {
            by_image[f.image].push_back(&f);
        }
    }
    std::map<std::string, const MatchRecord*> match_of;
    for (const auto& m : matches)
        if (!match_of.emplace(m.wider_id, &m).second) fail(Errc::validation_error, "duplicate match for \"" + m.wider_id + "\"");

    std::vector<std::string> images;
    std::map<std::string, std::string> id_owner;
    for (const auto& [image, _] : by_image) {
        const std::string id = std::filesystem::path(image).stem().string();
        if (const auto [it, fresh] = id_owner.emplace(id, image); !fresh)
            fail(Errc::validation_error, "images " + it->second + " and " + image + " share the id \"" + id + "\"");
        images.push_back(image);
    }
    std::sort(images.begin(), images.end(), [](const std::string& a, const std::string& b) {
        return std::filesystem::path(a).stem() < std::filesystem::path(b).stem();
    });
    std::filesystem::create_directories(out_dir / "images");

    SwapBatch out;
    out.annotations.resize(images.size());
    std::vector<std::size_t> failures(images.size(), 0);
    parallel_for(images.size(), opts.jobs, [&](std::size_t k) {
        const auto& entries = by_image.at(images[k]);
        Image canvas = read_png(resolve_relative(manifest_path, images[k]));
        ImageAnnotation ann;
        ann.image_id = std::filesystem::path(images[k]).stem().string();
        ann.image = "images/" + ann.image_id + ".png";
        ann.width = canvas.width();
        ann.height = canvas.height();
        for (const FaceEntry* f : entries) {
            if (f->image_width != canvas.width() || f->image_height != canvas.height())
                fail(Errc::validation_error, "face \"" + f->face_id + "\": image_size does not match " + images[k]);
            const TargetFace target{f->face_id, f->bbox, f->landmarks};
            if (auto reason = qualification_failure(target, opts.qualification)) {
                ann.skipped.push_back({f->face_id, *reason});
                continue;
            }
            const auto mit = match_of.find(f->face_id);
            if (mit == match_of.end()) {
                ann.skipped.push_back({f->face_id, "no-match"});
                continue;
            }
            const MatchRecord& m = *mit->second;
            if (!m.norm) {
                ann.skipped.push_back({f->face_id, "no-normalization"});
                continue;
            }
            const auto sit = sources.find(m.xgaze_id);
            if (sit == sources.end()) fail(Errc::validation_error, "match references unknown source face \"" + m.xgaze_id + "\"");
            const FaceEntry& src = *sit->second;
            SourceFace source{src.face_id, read_png(resolve_relative(manifest_path, src.image)),
                              angles_to_vector(GazeAngles::from_degrees((*src.gaze_deg)[0], (*src.gaze_deg)[1]))};
            MatchResult mr{m.wider_id, m.xgaze_id, m.score, m.distance, m.mode, m.gender_fallback, m.norm};
            try {
                SwapResult r = swap_face(canvas, target, source, mr, opts.swap);
                canvas = std::move(r.image);
                const GazeAngles g = vector_to_angles(r.gaze);
                AnnotatedFace af;
                af.face_id = f->face_id;
                af.bbox = {std::max(0.0, f->bbox.x0), std::max(0.0, f->bbox.y0), std::min<double>(ann.width, f->bbox.x1),
                           std::min<double>(ann.height, f->bbox.y1)};
                af.landmarks.assign(f->landmarks.begin(), f->landmarks.end());
                af.gaze_deg = std::array<double, 2>{g.pitch_deg(), g.yaw_deg()};
                af.provenance = Provenance{m.wider_id, m.xgaze_id, m.mode};
                ann.faces.push_back(std::move(af));
            } catch (const BlendError&) {
                ann.skipped.push_back({f->face_id, "blend-failed"});
                ++failures[k];
            } catch (const Error& e) {
                if (e.code() != Errc::invalid_argument) throw;
                ann.skipped.push_back({f->face_id, "mask-invalid"});
            }
        }
        write_png(out_dir / ann.image, canvas);
        out.annotations[k] = std::move(ann);
    });
    for (std::size_t f : failures) out.solver_failures += f;
    return out;
}

struct EvalJoin {
    std::vector<FaceEvalRecord> records;
    std::vector<std::string> missing;  // labelled faces without a prediction
};

/// Pairs predictions with labelled faces by id. Predictions for unknown faces
/// are a validation error.
inline EvalJoin join_predictions(std::span<const ImageAnnotation> annotations, std::span<const Prediction> predictions) {
    std::map<std::string, const Prediction*> pred;
    for (const auto& p : predictions)
        if (!pred.emplace(p.face_id, &p).second) fail(Errc::validation_error, "duplicate prediction for \"" + p.face_id + "\"");
    EvalJoin out;
    std::size_t used = 0;
    for (const auto& img : annotations)
        for (const auto& f : img.faces) {
            if (!f.gaze_deg) continue;
            const auto it = pred.find(f.face_id);
            if (it == pred.end()) {
                out.missing.push_back(f.face_id);
                continue;
            }
            ++used;
            const auto& gt = *f.gaze_deg;
            const auto& pg = it->second->gaze_deg;
            out.records.push_back({f.face_id, f.bbox.width(), angles_to_vector(GazeAngles::from_degrees(gt[0], gt[1])),
                                   angles_to_vector(GazeAngles::from_degrees(pg[0], pg[1]))});
        }
    if (used != pred.size()) {
        std::set<std::string> known;
        for (const auto& r : out.records) known.insert(r.face_id);
        for (const auto& [id, _] : pred)
            if (!known.count(id)) fail(Errc::validation_error, "prediction for unknown or unlabelled face \"" + id + "\"");
    }
    return out;
}

}  // namespace gazeswap
