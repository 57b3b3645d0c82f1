#pragma once

// Staged human gaze labels over an annotated image set. State is an
// append-only JSON-lines log replayed into an in-memory index at startup.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "gazeswap/dataset_io.hpp"
#include "gazeswap/geometry.hpp"
#include "gazeswap/image.hpp"
#include "gazeswap/normalization.hpp"

namespace gazeswap {

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct ImageSummary {
    std::string image_id;
    std::string image;
    int width = 0;
    int height = 0;
    std::size_t faces = 0;
    std::size_t labeled = 0;
};

struct FaceView {
    std::string face_id;
    std::string image_id;
    BBox bbox;
    std::optional<AnnotationRecord> label;  // absent until the first import or edit
};

/// Arrow drawn over a normalised crop: from the crop centre to the front
/// projection of the current gaze at the face radius expressed in crop pixels.
struct ArrowGeometry {
    double radius = 0.0;      // half the bbox width, original pixels
    double crop_scale = 0.0;  // crop pixels per original pixel at the face
    double crop_radius = 0.0;
    Point2 origin;
    std::optional<Point2> end;
};

struct CropResult {
    Image image;
    NormalizationResult norm;
    ArrowGeometry arrow;
};

class AnnotationStore {
public:
    static constexpr const char* kDatasetFile = "dataset.jsonl";
    static constexpr const char* kLogFile = "annotations.log.jsonl";

    using Clock = std::function<std::string()>;

    explicit AnnotationStore(std::filesystem::path data_dir, NormalizationParams crop = {}, Clock clock = utc_timestamp)
        : dir_(std::move(data_dir)), crop_(crop), clock_(std::move(clock)) {
        if (!std::filesystem::is_directory(dir_)) fail(Errc::not_found, "data directory " + dir_.string() + " does not exist");
        const auto dataset = dir_ / kDatasetFile;
        if (std::filesystem::exists(dataset)) images_ = load_records<ImageAnnotation>(dataset);
        std::sort(images_.begin(), images_.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
        for (std::size_t i = 0; i < images_.size(); ++i) {
            if (i > 0 && images_[i].image_id == images_[i - 1].image_id)
                fail(Errc::validation_error, "duplicate image id \"" + images_[i].image_id + "\"");
            for (std::size_t k = 0; k < images_[i].faces.size(); ++k)
                if (!faces_.emplace(images_[i].faces[k].face_id, std::pair{i, k}).second)
                    fail(Errc::validation_error, "duplicate face id \"" + images_[i].faces[k].face_id + "\"");
        }
        recover_log();
    }

    const std::filesystem::path& data_dir() const { return dir_; }
    std::filesystem::path log_path() const { return dir_ / kLogFile; }

    std::vector<ImageSummary> list_images() const {
        std::shared_lock lock(mutex_);
        std::vector<ImageSummary> out;
        for (const auto& img : images_) {
            ImageSummary s{img.image_id, img.image, img.width, img.height, img.faces.size(), 0};
            for (const auto& f : img.faces) s.labeled += labels_.count(f.face_id);
            out.push_back(std::move(s));
        }
        return out;
    }

    std::vector<FaceView> get_faces(const std::string& image_id) const {
        std::shared_lock lock(mutex_);
        const auto it = std::lower_bound(images_.begin(), images_.end(), image_id,
                                         [](const ImageAnnotation& a, const std::string& id) { return a.image_id < id; });
        if (it == images_.end() || it->image_id != image_id) fail(Errc::not_found, "unknown image \"" + image_id + "\"");
        std::vector<FaceView> out;
        for (const auto& f : it->faces) out.push_back(view_locked(f.face_id));
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.face_id < b.face_id; });
        return out;
    }

    FaceView get_face(const std::string& face_id) const {
        std::shared_lock lock(mutex_);
        return view_locked(face_id);
    }

    /// Arrow geometry for the current label without rendering the crop.
    ArrowGeometry arrow(const std::string& face_id) const {
        std::shared_lock lock(mutex_);
        const auto& [img, face] = locate(face_id);
        return arrow_for(face, normalization_for(img, face), label_locked(face_id));
    }

    CropResult get_crop(const std::string& face_id) const {
        ImageAnnotation img;
        AnnotatedFace face;
        std::optional<AnnotationRecord> label;
        {
            std::shared_lock lock(mutex_);
            const auto& [i, f] = locate(face_id);
            img = i;
            face = f;
            label = label_locked(face_id);
        }
        CropResult out;
        out.norm = normalization_for(img, face);
        const Image full = read_png(resolve_relative(dir_ / kDatasetFile, img.image));
        if (full.width() != img.width || full.height() != img.height)
            fail(Errc::validation_error, "image " + img.image + " does not match its recorded size");
        out.image = warp_image(full, out.norm);
        out.arrow = arrow_for(face, out.norm, label);
        return out;
    }

    /// Stores a label. Stages only move forward; a write at the current stage
    /// replaces the current value.
    AnnotationRecord put_gaze(const std::string& face_id, double pitch, double yaw, Stage stage, const std::string& editor) {
        if (!std::isfinite(pitch) || !std::isfinite(yaw)) fail(Errc::invalid_argument, "angles must be finite");
        std::unique_lock lock(mutex_);
        locate(face_id);
        check_stage(face_id, stage);
        AnnotationRecord r{face_id, pitch, yaw, stage, editor, clock_()};
        commit({r});
        return r;
    }

    /// Ingests labels at stage preliminary, keeping their editor and timestamp
    /// when present. All-or-nothing: any unknown face or stage conflict
    /// rejects the whole batch.
    std::size_t import_preliminary(std::vector<AnnotationRecord> records) {
        std::unique_lock lock(mutex_);
        for (auto& r : records) {
            Schema<AnnotationRecord>::validate(r);
            locate(r.face_id);
            r.stage = Stage::Preliminary;
            check_stage(r.face_id, r.stage);
            if (r.timestamp.empty()) r.timestamp = clock_();
        }
        commit(records);
        return records.size();
    }

    /// Current labels, sorted by face id.
    std::vector<AnnotationRecord> export_records() const {
        std::shared_lock lock(mutex_);
        std::vector<AnnotationRecord> out;
        for (const auto& [_, r] : labels_) out.push_back(r);
        return out;
    }

    /// State obtained by applying log records in order (last write wins).
    static std::map<std::string, AnnotationRecord> replay(std::span<const AnnotationRecord> log) {
        std::map<std::string, AnnotationRecord> state;
        for (const auto& r : log) state[r.face_id] = r;
        return state;
    }

    std::map<std::string, AnnotationRecord> snapshot() const {
        std::shared_lock lock(mutex_);
        return labels_;
    }

private:
    std::pair<const ImageAnnotation&, const AnnotatedFace&> locate(const std::string& face_id) const {
        const auto it = faces_.find(face_id);
        if (it == faces_.end()) fail(Errc::not_found, "unknown face \"" + face_id + "\"");
        const auto& img = images_[it->second.first];
        return {img, img.faces[it->second.second]};
    }

    std::optional<AnnotationRecord> label_locked(const std::string& face_id) const {
        const auto it = labels_.find(face_id);
        if (it == labels_.end()) return std::nullopt;
        return it->second;
    }

    FaceView view_locked(const std::string& face_id) const {
        const auto& [img, face] = locate(face_id);
        return {face.face_id, img.image_id, face.bbox, label_locked(face_id)};
    }

    void check_stage(const std::string& face_id, Stage stage) const {
        if (const auto cur = label_locked(face_id); cur && stage < cur->stage)
            fail(Errc::conflict, "face \"" + face_id + "\" is at stage " + to_string(cur->stage) + "; cannot move back to " +
                                     to_string(stage));
    }

    NormalizationResult normalization_for(const ImageAnnotation& img, const AnnotatedFace& face) const {
        if (face.landmarks.size() != 68)
            fail(Errc::estimation_failed, "face \"" + face.face_id + "\" needs 68 landmarks for normalisation");
        Landmarks68 lmk{};
        std::copy(face.landmarks.begin(), face.landmarks.end(), lmk.begin());
        const auto cam = CameraIntrinsics::default_for(img.width, img.height);
        return compute_normalization(estimate_head_pose(lmk, cam).pose, cam, crop_);
    }

    ArrowGeometry arrow_for(const AnnotatedFace& face, const NormalizationResult& norm,
                            const std::optional<AnnotationRecord>& label) const {
        ArrowGeometry a;
        a.radius = face.bbox.width() / 2.0;
        // Local scale of W at the face centre: the Jacobian determinant of a
        // homography at p is det(W) / w(p)^3.
        const Point2 c = face.bbox.center();
        const double w = norm.warp(2, 0) * c.x + norm.warp(2, 1) * c.y + norm.warp(2, 2);
        a.crop_scale = std::sqrt(std::abs(norm.warp.determinant() / (w * w * w)));
        a.crop_radius = a.radius * a.crop_scale;
        a.origin = {norm.crop_size / 2.0, norm.crop_size / 2.0};
        if (label) {
            const PlanePoint p = project(Plane::Front, GazeAngles::from_degrees(label->pitch, label->yaw), FaceRadius(a.crop_radius));
            a.end = Point2{a.origin.x + p.u, a.origin.y + p.v};
        }
        return a;
    }

    void commit(const std::vector<AnnotationRecord>& records) {
        append_records(log_path(), records);
        for (const auto& r : records) labels_[r.face_id] = r;
    }

    // Replays the log. A torn final line (no newline, unparsable) is the
    // signature of an interrupted append and is cut off; anything else fails.
    void recover_log() {
        const auto path = log_path();
        if (!std::filesystem::exists(path)) return;
        std::string text;
        {
            std::ifstream in(path, std::ios::binary);
            text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        }
        auto result = read_records_string<AnnotationRecord>(text);
        if (!result.ok()) {
            const std::size_t last_line = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) + 1;
            const bool torn = result.errors.size() == 1 && !text.empty() && text.back() != '\n' &&
                              result.errors.front().line == last_line;
            if (!torn) result.require_ok(path.string());
            std::filesystem::resize_file(path, text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1);
        }
        for (const auto& r : result.records) locate(r.face_id);
        labels_ = replay(result.records);
    }

    std::filesystem::path dir_;
    NormalizationParams crop_;
    Clock clock_;
    std::vector<ImageAnnotation> images_;                                   // sorted by id, immutable after load
    std::map<std::string, std::pair<std::size_t, std::size_t>> faces_;       // face id -> (image, face)
    std::map<std::string, AnnotationRecord> labels_;                         // current label per face
    mutable std::shared_mutex mutex_;
};

}  // namespace gazeswap
