#pragma once

// JSON-lines schemas for every artifact the toolkit reads or writes. Each
// schema has a typed record, a canonical writer (fixed field order, one record
// per line) and a validating reader that reports failures per line.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gazeswap/error.hpp"
#include "gazeswap/eval.hpp"
#include "gazeswap/matching.hpp"
#include "gazeswap/normalization.hpp"

namespace gazeswap {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------- records

/// One face in a batch manifest. For XGaze entries `image` is the normalised
/// crop and `gaze_deg` its normalised-frame label; for Wider entries `image`
/// is the full in-the-wild picture.
struct FaceEntry {
    std::string face_id;
    FaceSource source = FaceSource::Wider;
    std::string image;  // relative to the manifest's directory
    int image_width = 0;
    int image_height = 0;
    BBox bbox;
    Landmarks68 landmarks{};
    std::optional<std::array<double, 2>> gaze_deg;  // pitch, yaw

    bool operator==(const FaceEntry&) const = default;
};

struct MatchRecord {
    std::string wider_id;
    std::string xgaze_id;
    double score = 0.0;
    double distance = 0.0;
    SwapMode mode = SwapMode::Full;
    bool gender_fallback = false;
    std::optional<NormalizationResult> norm;

    bool operator==(const MatchRecord& o) const {
        auto same_norm = [&] {
            if (norm.has_value() != o.norm.has_value()) return false;
            return !norm || (norm->warp == o.norm->warp && norm->rotation == o.norm->rotation && norm->crop_size == o.norm->crop_size);
        };
        return wider_id == o.wider_id && xgaze_id == o.xgaze_id && score == o.score && distance == o.distance &&
               mode == o.mode && gender_fallback == o.gender_fallback && same_norm();
    }
};

inline MatchRecord to_record(const MatchResult& m) {
    return {m.wider_id, m.xgaze_id, m.score, m.distance, m.mode, m.gender_fallback, m.norm};
}

struct Provenance {
    std::string wider_id;
    std::string xgaze_id;
    SwapMode mode = SwapMode::Full;

    bool operator==(const Provenance&) const = default;
};

struct AnnotatedFace {
    std::string face_id;
    BBox bbox;
    std::vector<Point2> landmarks;                  // 68 or 5 points, may be empty
    std::optional<std::array<double, 2>> gaze_deg;  // absent for unlabeled faces
    std::optional<Provenance> provenance;

    bool operator==(const AnnotatedFace&) const = default;
};

struct SkippedFace {
    std::string face_id;
    std::string reason;

    bool operator==(const SkippedFace&) const = default;
};

/// One full image with its per-face labels.
struct ImageAnnotation {
    std::string image_id;
    std::string image;
    int width = 0;
    int height = 0;
    std::vector<AnnotatedFace> faces;
    std::vector<SkippedFace> skipped;

    bool operator==(const ImageAnnotation&) const = default;
};

struct Prediction {
    std::string face_id;
    std::array<double, 2> gaze_deg{};

    bool operator==(const Prediction&) const = default;
};

enum class Stage { Preliminary = 0, CropAdjusted = 1, ContextAdjusted = 2 };

inline std::string to_string(Stage s) {
    switch (s) {
        case Stage::Preliminary: return "preliminary";
        case Stage::CropAdjusted: return "crop_adjusted";
        case Stage::ContextAdjusted: return "context_adjusted";
    }
    return "?";
}

inline std::optional<Stage> parse_stage(const std::string& s) {
    if (s == "preliminary") return Stage::Preliminary;
    if (s == "crop_adjusted") return Stage::CropAdjusted;
    if (s == "context_adjusted") return Stage::ContextAdjusted;
    return std::nullopt;
}

struct AnnotationRecord {
    std::string face_id;
    double pitch = 0.0;  // degrees
    double yaw = 0.0;    // degrees
    Stage stage = Stage::Preliminary;
    std::string editor;
    std::string timestamp;  // ISO-8601 UTC

    bool operator==(const AnnotationRecord&) const = default;
};

// ---------------------------------------------------------------- field helpers

namespace detail {

[[noreturn]] inline void invalid(const std::string& field, const std::string& msg) {
    fail(Errc::validation_error, "field '" + field + "': " + msg);
}

inline void require_keys(const Json& j, std::initializer_list<const char*> allowed, std::initializer_list<const char*> required) {
    if (!j.is_object()) fail(Errc::validation_error, "record must be a JSON object");
    for (const char* k : required)
        if (!j.contains(k)) fail(Errc::validation_error, std::string("missing field '") + k + "'");
    for (const auto& [k, _] : j.items())
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
            fail(Errc::validation_error, "unknown field '" + k + "'");
}

inline std::string get_string(const Json& j, const char* key, bool allow_empty = false) {
    const auto& v = j.at(key);
    if (!v.is_string()) invalid(key, "expected a string");
    auto s = v.get<std::string>();
    if (!allow_empty && s.empty()) invalid(key, "must not be empty");
    return s;
}

inline double number_value(const Json& v, const std::string& field) {
    if (!v.is_number()) invalid(field, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) invalid(field, "must be finite");
    return d;
}

inline double get_number(const Json& j, const char* key) { return number_value(j.at(key), key); }

inline bool get_bool(const Json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_boolean()) invalid(key, "expected a boolean");
    return v.get<bool>();
}

inline int get_int(const Json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_number_integer()) invalid(key, "expected an integer");
    return v.get<int>();
}

template <std::size_t N>
std::array<double, N> get_array(const Json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != N) invalid(key, "expected an array of " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = number_value(v[i], key);
    return out;
}

inline std::vector<Point2> get_points(const Json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_array()) invalid(key, "expected an array of [x, y] pairs");
    std::vector<Point2> out;
    for (const auto& p : v) {
        if (!p.is_array() || p.size() != 2) invalid(key, "expected an array of [x, y] pairs");
        out.push_back({number_value(p[0], key), number_value(p[1], key)});
    }
    return out;
}

inline Landmarks68 get_landmarks68(const Json& j, const char* key) {
    const auto pts = get_points(j, key);
    if (pts.size() != 68) invalid(key, "expected 68 points, got " + std::to_string(pts.size()));
    Landmarks68 out{};
    std::copy(pts.begin(), pts.end(), out.begin());
    return out;
}

inline Json points_json(std::span<const Point2> pts) {
    Json a = Json::array();
    for (const auto& p : pts) a.push_back({p.x, p.y});
    return a;
}

template <std::size_t N>
Json array_json(const std::array<double, N>& v) {
    return Json(std::vector<double>(v.begin(), v.end()));
}

inline Json bbox_json(const BBox& b) { return {b.x0, b.y0, b.x1, b.y1}; }

inline BBox get_bbox(const Json& j, const char* key) {
    const auto a = get_array<4>(j, key);
    const BBox b{a[0], a[1], a[2], a[3]};
    if (!(b.width() > 0.0) || !(b.height() > 0.0)) invalid(key, "box must have positive width and height");
    return b;
}

inline FaceSource get_source(const Json& j, const char* key) {
    const auto s = get_string(j, key);
    if (s == "wider") return FaceSource::Wider;
    if (s == "xgaze") return FaceSource::XGaze;
    invalid(key, "expected \"wider\" or \"xgaze\", got \"" + s + "\"");
}

inline SwapMode get_mode(const Json& j, const char* key) {
    const auto s = get_string(j, key);
    if (s == "eyes") return SwapMode::Eyes;
    if (s == "full") return SwapMode::Full;
    invalid(key, "expected \"eyes\" or \"full\", got \"" + s + "\"");
}

template <std::size_t N>
void require_probabilities(const std::array<double, N>& p, const char* field) {
    double sum = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0.0) invalid(field, "probabilities must be finite and non-negative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-3) {
        std::ostringstream os;
        os << "probabilities sum to " << sum << ", expected 1";
        invalid(field, os.str());
    }
}

template <std::size_t N>
Eigen::Matrix3d matrix_from(const std::array<double, N>& a) {
    static_assert(N == 9);
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = a[static_cast<std::size_t>(3 * r + c)];
    return m;
}

inline Json matrix_json(const Eigen::Matrix3d& m) {
    Json a = Json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
    return a;
}

}  // namespace detail

// ---------------------------------------------------------------- schemas

template <typename T>
struct Schema;

template <>
struct Schema<AttributeRecord> {
    static constexpr const char* name = "attributes";

    static void validate(const AttributeRecord& r) {
        if (r.face_id.empty()) detail::invalid("face_id", "must not be empty");
        if (!all_finite(r.lmk)) detail::invalid("lmk", "must be finite");
        for (double v : r.pose)
            if (!std::isfinite(v)) detail::invalid("pose", "must be finite");
        detail::require_probabilities(r.age, "age");
        detail::require_probabilities(r.race, "race");
        detail::require_probabilities(r.gender, "gender");
    }

    static Json to_json(const AttributeRecord& r) {
        validate(r);
        Json j;
        j["face_id"] = r.face_id;
        j["source"] = to_string(r.source);
        j["lmk"] = detail::points_json(r.lmk);
        j["pose"] = detail::array_json(r.pose);
        j["age"] = detail::array_json(r.age);
        j["race"] = detail::array_json(r.race);
        j["gender"] = detail::array_json(r.gender);
        return j;
    }

    static AttributeRecord from_json(const Json& j) {
        detail::require_keys(j, {"face_id", "source", "lmk", "pose", "age", "race", "gender"},
                             {"face_id", "source", "lmk", "pose", "age", "race", "gender"});
        AttributeRecord r;
        r.face_id = detail::get_string(j, "face_id");
        r.source = detail::get_source(j, "source");
        r.lmk = detail::get_landmarks68(j, "lmk");
        r.pose = detail::get_array<2>(j, "pose");
        r.age = detail::get_array<9>(j, "age");
        r.race = detail::get_array<7>(j, "race");
        r.gender = detail::get_array<2>(j, "gender");
        validate(r);
        return r;
    }
};

template <>
struct Schema<FaceEntry> {
    static constexpr const char* name = "faces";

    static void validate(const FaceEntry& f) {
        if (f.face_id.empty()) detail::invalid("face_id", "must not be empty");
        if (f.image.empty()) detail::invalid("image", "must not be empty");
        if (f.image_width < 1 || f.image_height < 1) detail::invalid("image_size", "must be positive");
        if (!(f.bbox.width() > 0.0) || !(f.bbox.height() > 0.0)) detail::invalid("bbox", "box must have positive width and height");
        if (!all_finite(f.landmarks)) detail::invalid("landmarks", "must be finite");
        if (f.gaze_deg && !(std::isfinite((*f.gaze_deg)[0]) && std::isfinite((*f.gaze_deg)[1])))
            detail::invalid("gaze", "must be finite");
        if (f.source == FaceSource::XGaze && !f.gaze_deg) detail::invalid("gaze", "required for xgaze faces");
    }

    static Json to_json(const FaceEntry& f) {
        validate(f);
        Json j;
        j["face_id"] = f.face_id;
        j["source"] = to_string(f.source);
        j["image"] = f.image;
        j["image_size"] = {f.image_width, f.image_height};
        j["bbox"] = detail::bbox_json(f.bbox);
        j["landmarks"] = detail::points_json(f.landmarks);
        if (f.gaze_deg) j["gaze"] = detail::array_json(*f.gaze_deg);
        return j;
    }

    static FaceEntry from_json(const Json& j) {
        detail::require_keys(j, {"face_id", "source", "image", "image_size", "bbox", "landmarks", "gaze"},
                             {"face_id", "source", "image", "image_size", "bbox", "landmarks"});
        FaceEntry f;
        f.face_id = detail::get_string(j, "face_id");
        f.source = detail::get_source(j, "source");
        f.image = detail::get_string(j, "image");
        const auto& size = j.at("image_size");
        if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() || !size[1].is_number_integer())
            detail::invalid("image_size", "expected [width, height] integers");
        f.image_width = size[0].get<int>();
        f.image_height = size[1].get<int>();
        f.bbox = detail::get_bbox(j, "bbox");
        f.landmarks = detail::get_landmarks68(j, "landmarks");
        if (j.contains("gaze")) f.gaze_deg = detail::get_array<2>(j, "gaze");
        validate(f);
        return f;
    }
};

template <>
struct Schema<MatchRecord> {
    static constexpr const char* name = "matches";

    static void validate(const MatchRecord& m) {
        if (m.wider_id.empty()) detail::invalid("wider_id", "must not be empty");
        if (m.xgaze_id.empty()) detail::invalid("xgaze_id", "must not be empty");
        if (!std::isfinite(m.score)) detail::invalid("score", "must be finite");
        if (!std::isfinite(m.distance) || m.distance < 0.0) detail::invalid("distance", "must be finite and non-negative");
        if (m.norm) {
            if (!m.norm->warp.allFinite() || std::abs(m.norm->warp.determinant()) < 1e-12)
                detail::invalid("norm.warp", "must be finite and invertible");
            const Eigen::Matrix3d& r = m.norm->rotation;
            if (!r.allFinite() || !(r.transpose() * r).isApprox(Eigen::Matrix3d::Identity(), 1e-6) || r.determinant() < 0.0)
                detail::invalid("norm.rotation", "must be a rotation matrix");
            if (m.norm->crop_size < 1) detail::invalid("norm.crop_size", "must be positive");
        }
    }

    static Json to_json(const MatchRecord& m) {
        validate(m);
        Json j;
        j["wider_id"] = m.wider_id;
        j["xgaze_id"] = m.xgaze_id;
        j["score"] = m.score;
        j["distance"] = m.distance;
        j["mode"] = to_string(m.mode);
        j["gender_fallback"] = m.gender_fallback;
        if (m.norm) {
            Json n;
            n["warp"] = detail::matrix_json(m.norm->warp);
            n["rotation"] = detail::matrix_json(m.norm->rotation);
            n["crop_size"] = m.norm->crop_size;
            j["norm"] = n;
        }
        return j;
    }

    static MatchRecord from_json(const Json& j) {
        detail::require_keys(j, {"wider_id", "xgaze_id", "score", "distance", "mode", "gender_fallback", "norm"},
                             {"wider_id", "xgaze_id", "score", "distance", "mode", "gender_fallback"});
        MatchRecord m;
        m.wider_id = detail::get_string(j, "wider_id");
        m.xgaze_id = detail::get_string(j, "xgaze_id");
        m.score = detail::get_number(j, "score");
        m.distance = detail::get_number(j, "distance");
        m.mode = detail::get_mode(j, "mode");
        m.gender_fallback = detail::get_bool(j, "gender_fallback");
        if (j.contains("norm")) {
            const auto& n = j.at("norm");
            detail::require_keys(n, {"warp", "rotation", "crop_size"}, {"warp", "rotation", "crop_size"});
            NormalizationResult norm;
            norm.warp = detail::matrix_from(detail::get_array<9>(n, "warp"));
            norm.rotation = detail::matrix_from(detail::get_array<9>(n, "rotation"));
            norm.crop_size = detail::get_int(n, "crop_size");
            m.norm = norm;
        }
        validate(m);
        return m;
    }
};

template <>
struct Schema<ImageAnnotation> {
    static constexpr const char* name = "annotations";

    static void validate(const ImageAnnotation& a) {
        if (a.image_id.empty()) detail::invalid("image_id", "must not be empty");
        if (a.image.empty()) detail::invalid("image", "must not be empty");
        if (a.width < 1 || a.height < 1) detail::invalid("image_size", "must be positive");
        std::set<std::string> ids;
        for (const auto& f : a.faces) {
            if (f.face_id.empty()) detail::invalid("faces.face_id", "must not be empty");
            if (!ids.insert(f.face_id).second) detail::invalid("faces.face_id", "duplicate id \"" + f.face_id + "\"");
            const BBox& b = f.bbox;
            if (!(b.width() > 0.0) || !(b.height() > 0.0)) detail::invalid("faces.bbox", "box must have positive width and height");
            if (b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > a.width || b.y1 > a.height)
                detail::invalid("faces.bbox", "box of \"" + f.face_id + "\" extends outside the image");
            if (!f.landmarks.empty() && f.landmarks.size() != 68 && f.landmarks.size() != 5)
                detail::invalid("faces.landmarks", "expected 68 or 5 points");
            for (const auto& p : f.landmarks)
                if (!std::isfinite(p.x) || !std::isfinite(p.y)) detail::invalid("faces.landmarks", "must be finite");
            if (f.gaze_deg && !(std::isfinite((*f.gaze_deg)[0]) && std::isfinite((*f.gaze_deg)[1])))
                detail::invalid("faces.gaze", "must be finite");
            if (f.provenance && (f.provenance->wider_id.empty() || f.provenance->xgaze_id.empty()))
                detail::invalid("faces.provenance", "ids must not be empty");
        }
        for (const auto& s : a.skipped) {
            if (s.face_id.empty()) detail::invalid("skipped.face_id", "must not be empty");
            if (s.reason.empty()) detail::invalid("skipped.reason", "must not be empty");
            if (!ids.insert(s.face_id).second) detail::invalid("skipped.face_id", "duplicate id \"" + s.face_id + "\"");
        }
    }

    static Json to_json(const ImageAnnotation& a) {
        validate(a);
        Json j;
        j["image_id"] = a.image_id;
        j["image"] = a.image;
        j["image_size"] = {a.width, a.height};
        Json faces = Json::array();
        for (const auto& f : a.faces) {
            Json jf;
            jf["face_id"] = f.face_id;
            jf["bbox"] = detail::bbox_json(f.bbox);
            jf["landmarks"] = detail::points_json(f.landmarks);
            jf["gaze"] = f.gaze_deg ? detail::array_json(*f.gaze_deg) : Json(nullptr);
            if (f.provenance)
                jf["provenance"] = {{"wider_id", f.provenance->wider_id}, {"xgaze_id", f.provenance->xgaze_id},
                                    {"mode", to_string(f.provenance->mode)}};
            faces.push_back(jf);
        }
        j["faces"] = faces;
        Json skipped = Json::array();
        for (const auto& s : a.skipped) skipped.push_back({{"face_id", s.face_id}, {"reason", s.reason}});
        j["skipped"] = skipped;
        return j;
    }

    static ImageAnnotation from_json(const Json& j) {
        detail::require_keys(j, {"image_id", "image", "image_size", "faces", "skipped"}, {"image_id", "image", "image_size", "faces"});
        ImageAnnotation a;
        a.image_id = detail::get_string(j, "image_id");
        a.image = detail::get_string(j, "image");
        const auto& size = j.at("image_size");
        if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() || !size[1].is_number_integer())
            detail::invalid("image_size", "expected [width, height] integers");
        a.width = size[0].get<int>();
        a.height = size[1].get<int>();
        if (!j.at("faces").is_array()) detail::invalid("faces", "expected an array");
        for (const auto& jf : j.at("faces")) {
            detail::require_keys(jf, {"face_id", "bbox", "landmarks", "gaze", "provenance"}, {"face_id", "bbox"});
            AnnotatedFace f;
            f.face_id = detail::get_string(jf, "face_id");
            f.bbox = detail::get_bbox(jf, "bbox");
            if (jf.contains("landmarks")) f.landmarks = detail::get_points(jf, "landmarks");
            if (jf.contains("gaze") && !jf.at("gaze").is_null()) f.gaze_deg = detail::get_array<2>(jf, "gaze");
            if (jf.contains("provenance")) {
                const auto& p = jf.at("provenance");
                detail::require_keys(p, {"wider_id", "xgaze_id", "mode"}, {"wider_id", "xgaze_id", "mode"});
                f.provenance = Provenance{detail::get_string(p, "wider_id"), detail::get_string(p, "xgaze_id"), detail::get_mode(p, "mode")};
            }
            a.faces.push_back(std::move(f));
        }
        if (j.contains("skipped")) {
            if (!j.at("skipped").is_array()) detail::invalid("skipped", "expected an array");
            for (const auto& js : j.at("skipped")) {
                detail::require_keys(js, {"face_id", "reason"}, {"face_id", "reason"});
                a.skipped.push_back({detail::get_string(js, "face_id"), detail::get_string(js, "reason")});
            }
        }
        validate(a);
        return a;
    }
};

template <>
struct Schema<Prediction> {
    static constexpr const char* name = "predictions";

    static void validate(const Prediction& p) {
        if (p.face_id.empty()) detail::invalid("face_id", "must not be empty");
        if (!std::isfinite(p.gaze_deg[0]) || !std::isfinite(p.gaze_deg[1])) detail::invalid("gaze", "must be finite");
    }

    static Json to_json(const Prediction& p) {
        validate(p);
        Json j;
        j["face_id"] = p.face_id;
        j["gaze"] = detail::array_json(p.gaze_deg);
        return j;
    }

    static Prediction from_json(const Json& j) {
        detail::require_keys(j, {"face_id", "gaze"}, {"face_id", "gaze"});
        Prediction p{detail::get_string(j, "face_id"), detail::get_array<2>(j, "gaze")};
        validate(p);
        return p;
    }
};

template <>
struct Schema<AnnotationRecord> {
    static constexpr const char* name = "annotation-records";

    static void validate(const AnnotationRecord& r) {
        if (r.face_id.empty()) detail::invalid("face_id", "must not be empty");
        if (!std::isfinite(r.pitch)) detail::invalid("pitch", "must be finite");
        if (!std::isfinite(r.yaw)) detail::invalid("yaw", "must be finite");
    }

    static Json to_json(const AnnotationRecord& r) {
        validate(r);
        Json j;
        j["face_id"] = r.face_id;
        j["pitch"] = r.pitch;
        j["yaw"] = r.yaw;
        j["stage"] = to_string(r.stage);
        j["editor"] = r.editor;
        j["timestamp"] = r.timestamp;
        return j;
    }

    static AnnotationRecord from_json(const Json& j) {
        detail::require_keys(j, {"face_id", "pitch", "yaw", "stage", "editor", "timestamp"}, {"face_id", "pitch", "yaw"});
        AnnotationRecord r;
        r.face_id = detail::get_string(j, "face_id");
        r.pitch = detail::get_number(j, "pitch");
        r.yaw = detail::get_number(j, "yaw");
        if (j.contains("stage")) {
            const auto s = parse_stage(detail::get_string(j, "stage"));
            if (!s) detail::invalid("stage", "expected preliminary, crop_adjusted or context_adjusted");
            r.stage = *s;
        }
        if (j.contains("editor")) r.editor = detail::get_string(j, "editor", true);
        if (j.contains("timestamp")) r.timestamp = detail::get_string(j, "timestamp", true);
        validate(r);
        return r;
    }
};

// ---------------------------------------------------------------- reading

struct LineError {
    std::size_t line = 0;  // 1-based
    Errc code = Errc::parse_error;
    std::string message;

    std::string to_string() const { return "line " + std::to_string(line) + ": " + std::string(gazeswap::to_string(code)) + ": " + message; }
};

template <typename T>
struct ReadResult {
    std::vector<T> records;
    std::vector<std::size_t> lines;  // source line of each record
    std::vector<LineError> errors;

    bool ok() const { return errors.empty(); }

    /// Throws the first error, prefixed with `origin`.
    void require_ok(const std::string& origin) const {
        if (!ok()) fail(errors.front().code, origin + ": " + errors.front().to_string());
    }
};

template <typename T>
std::string serialize(const T& record) {
    return Schema<T>::to_json(record).dump();
}

template <typename T>
T deserialize(const std::string& line) {
    Json j;
    try {
        j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::parse_error, e.what());
    }
    try {
        return Schema<T>::from_json(j);
    } catch (const Error&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::validation_error, e.what());
    }
}

/// Reads every line, collecting per-line errors instead of stopping. Blank
/// lines are skipped.
template <typename T>
ReadResult<T> read_records(std::istream& in) {
    ReadResult<T> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            out.records.push_back(deserialize<T>(line));
            out.lines.push_back(n);
        } catch (const Error& e) {
            out.errors.push_back({n, e.code(), e.what()});
        } catch (const std::exception& e) {
            out.errors.push_back({n, Errc::validation_error, e.what()});
        }
    }
    return out;
}

template <typename T>
ReadResult<T> read_records_string(const std::string& text) {
    std::istringstream in(text);
    return read_records<T>(in);
}

template <typename T>
ReadResult<T> read_records(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::io_error, "cannot open " + path.string());
    return read_records<T>(in);
}

/// Reads a file and throws on the first error.
template <typename T>
std::vector<T> load_records(const std::filesystem::path& path) {
    auto r = read_records<T>(path);
    r.require_ok(path.string());
    return std::move(r.records);
}

// ---------------------------------------------------------------- writing

template <typename T>
std::string serialize_all(std::span<const T> records) {
    std::string out;
    for (const auto& r : records) {
        out += serialize(r);
        out += '\n';
    }
    return out;
}

template <typename T>
void write_records(std::ostream& out, std::span<const T> records) {
    out << serialize_all(records);
}

namespace detail {

class LockedFile {
public:
    LockedFile(const std::filesystem::path& path, int flags) : fd_(::open(path.c_str(), flags | O_CLOEXEC, 0644)) {
        if (fd_ < 0) fail(Errc::io_error, "cannot open " + path.string() + " for writing");
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            fail(Errc::io_error, "cannot lock " + path.string());
        }
    }
    ~LockedFile() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    LockedFile(const LockedFile&) = delete;
    LockedFile& operator=(const LockedFile&) = delete;

    void truncate(const std::filesystem::path& path) {
        if (::ftruncate(fd_, 0) != 0) fail(Errc::io_error, "cannot truncate " + path.string());
    }

    void write_all(const std::string& bytes, const std::filesystem::path& path) {
        std::size_t done = 0;
        while (done < bytes.size()) {
            const ssize_t n = ::write(fd_, bytes.data() + done, bytes.size() - done);
            if (n < 0) fail(Errc::io_error, "write failed on " + path.string());
            done += static_cast<std::size_t>(n);
        }
    }

private:
    int fd_;
};

}  // namespace detail

/// Replaces the file's contents. Every record is validated before any byte is written.
template <typename T>
void write_records(const std::filesystem::path& path, std::span<const T> records) {
    const std::string bytes = serialize_all(records);
    detail::LockedFile f(path, O_WRONLY | O_CREAT);
    f.truncate(path);
    f.write_all(bytes, path);
}

/// Appends whole lines under an exclusive lock.
template <typename T>
void append_records(const std::filesystem::path& path, std::span<const T> records) {
    const std::string bytes = serialize_all(records);
    detail::LockedFile f(path, O_WRONLY | O_CREAT | O_APPEND);
    f.write_all(bytes, path);
}

template <typename T>
void write_records(const std::filesystem::path& path, const std::vector<T>& records) {
    write_records(path, std::span<const T>(records));
}

template <typename T>
void append_records(const std::filesystem::path& path, const std::vector<T>& records) {
    append_records(path, std::span<const T>(records));
}

/// Resolves an image reference relative to the file that names it.
inline std::filesystem::path resolve_relative(const std::filesystem::path& manifest, const std::string& ref) {
    const std::filesystem::path p(ref);
    return p.is_absolute() ? p : manifest.parent_path() / p;
}

// ---------------------------------------------------------------- statistics

struct DatasetStats {
    std::size_t images = 0;
    std::size_t faces = 0;    // labelled (swapped) faces
    std::size_t skipped = 0;
    std::map<std::string, std::size_t> skipped_by_reason;
    std::vector<std::pair<std::string, std::size_t>> width_histogram;  // width bins of labelled faces
    std::size_t narrower_than_bins = 0;                                  // labelled faces below the first width edge
    std::size_t min_faces_per_image = 0;
    std::size_t max_faces_per_image = 0;

    std::size_t candidates() const { return faces + skipped; }
};

inline DatasetStats dataset_stats(std::span<const ImageAnnotation> images) {
    const BinSpec bins = width_bins();
    DatasetStats s;
    for (const auto& label : bins.labels) s.width_histogram.emplace_back(label, 0);
    bool first = true;
    for (const auto& img : images) {
        ++s.images;
        s.faces += img.faces.size();
        s.skipped += img.skipped.size();
        for (const auto& k : img.skipped) ++s.skipped_by_reason[k.reason];
        for (const auto& f : img.faces) {
            if (const auto b = bins.bin_of(f.bbox.width()))
                ++s.width_histogram[*b].second;
            else
                ++s.narrower_than_bins;
        }
        const std::size_t n = img.faces.size();
        s.min_faces_per_image = first ? n : std::min(s.min_faces_per_image, n);
        s.max_faces_per_image = first ? n : std::max(s.max_faces_per_image, n);
        first = false;
    }
    return s;
}

inline DatasetStats dataset_stats(const std::vector<ImageAnnotation>& images) {
    return dataset_stats(std::span<const ImageAnnotation>(images));
}

}  // namespace gazeswap
