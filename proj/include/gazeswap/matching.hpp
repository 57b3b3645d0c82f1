#pragma once

// Retrieval of the nearest gaze-labelled face for an in-the-wild face:
// gender filter, weighted landmark/pose distance, top-n cut, age/race penalty.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gazeswap/error.hpp"
#include "gazeswap/normalization.hpp"

namespace gazeswap {

enum class FaceSource { Wider, XGaze };
enum class SwapMode { Eyes, Full };

inline std::string to_string(FaceSource s) { return s == FaceSource::Wider ? "wider" : "xgaze"; }
inline std::string to_string(SwapMode m) { return m == SwapMode::Eyes ? "eyes" : "full"; }

struct AttributeRecord {
    std::string face_id;
    FaceSource source = FaceSource::Wider;
    Landmarks68 lmk{};                 // normalised-frame pixels
    std::array<double, 2> pose{};      // pitch, yaw in degrees
    std::array<double, 9> age{};       // class probabilities
    std::array<double, 7> race{};
    std::array<double, 2> gender{};

    bool operator==(const AttributeRecord&) const = default;
};

struct MatchConfig {
    double alpha_lmk = 1.0;
    double alpha_pose = 1.0;
    std::size_t top_n = 50;
    double beta_age = 0.5;
    double beta_race = 0.5;
    double eye_swap_threshold = 2.0;

    void validate() const {
        if (top_n < 1) fail(Errc::invalid_argument, "top-n must be at least 1");
        for (double w : {alpha_lmk, alpha_pose, beta_age, beta_race})
            if (!(w >= 0.0) || !std::isfinite(w)) fail(Errc::invalid_argument, "match weights must be non-negative");
    }
};

struct MatchResult {
    std::string wider_id;
    std::string xgaze_id;
    double score = 0.0;     // final score: -(distance) - penalty
    double distance = 0.0;  // weighted landmark/pose distance of the winner
    SwapMode mode = SwapMode::Full;
    bool gender_fallback = false;
    std::optional<NormalizationResult> norm;  // normalisation of the wider face
};

/// Index of the largest entry, ties toward the lowest index.
template <std::size_t N>
std::size_t argmax(const std::array<double, N>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct GenderFilterResult {
    std::vector<std::size_t> indices;
    bool fallback = false;  // no candidate matched; all were passed through
};

inline GenderFilterResult gender_filter(const AttributeRecord& query, std::span<const AttributeRecord> candidates) {
    GenderFilterResult out;
    const std::size_t g = argmax(query.gender);
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (argmax(candidates[i].gender) == g) out.indices.push_back(i);
    if (out.indices.empty()) {
        out.indices.resize(candidates.size());
        std::iota(out.indices.begin(), out.indices.end(), std::size_t{0});
        out.fallback = true;
    }
    return out;
}

namespace detail {
inline void require_complete(const AttributeRecord& r) {
    auto finite = [](const auto& arr) { return std::all_of(arr.begin(), arr.end(), [](double v) { return std::isfinite(v); }); };
    if (!all_finite(r.lmk) || !finite(r.pose))
        fail(Errc::invalid_argument, "attribute record " + r.face_id + " has missing landmark or pose values");
}
}  // namespace detail

/// alpha_lmk * mean |d lmk| (136 coordinates) + alpha_pose * mean |d pose| (degrees).
inline double matching_distance(const AttributeRecord& w, const AttributeRecord& e, const MatchConfig& cfg) {
    detail::require_complete(w);
    detail::require_complete(e);
    double lmk = 0.0;
    for (std::size_t i = 0; i < w.lmk.size(); ++i)
        lmk += std::abs(w.lmk[i].x - e.lmk[i].x) + std::abs(w.lmk[i].y - e.lmk[i].y);
    lmk /= 2.0 * static_cast<double>(w.lmk.size());
    const double pose = (std::abs(w.pose[0] - e.pose[0]) + std::abs(w.pose[1] - e.pose[1])) / 2.0;
    return cfg.alpha_lmk * lmk + cfg.alpha_pose * pose;
}

inline double matching_score(const AttributeRecord& w, const AttributeRecord& e, const MatchConfig& cfg) {
    return -matching_distance(w, e, cfg);
}

inline double auxiliary_penalty(const AttributeRecord& w, const AttributeRecord& e, const MatchConfig& cfg) {
    auto l1 = [](const auto& a, const auto& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
        return s;
    };
    return cfg.beta_age * l1(w.age, e.age) + cfg.beta_race * l1(w.race, e.race);
}

inline MatchResult retrieve(const AttributeRecord& query, std::span<const AttributeRecord> candidates,
                            const MatchConfig& cfg) {
    cfg.validate();
    if (candidates.empty()) fail(Errc::no_match, "no candidates for face " + query.face_id);

    const GenderFilterResult pool = gender_filter(query, candidates);

    struct Scored {
        std::size_t index;
        double distance;
    };
    std::vector<Scored> ranked;
    ranked.reserve(pool.indices.size());
    for (std::size_t i : pool.indices) ranked.push_back({i, matching_distance(query, candidates[i], cfg)});

    auto by_distance = [&](const Scored& a, const Scored& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return candidates[a.index].face_id < candidates[b.index].face_id;
    };
    const std::size_t keep = std::min(cfg.top_n, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end(), by_distance);
    ranked.resize(keep);

    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        const double s = -ranked[k].distance - auxiliary_penalty(query, candidates[ranked[k].index], cfg);
        const bool better = s > best_score ||
                            (s == best_score && candidates[ranked[k].index].face_id < candidates[ranked[best].index].face_id);
        if (better) {
            best = k;
            best_score = s;
        }
    }

    MatchResult out;
    out.wider_id = query.face_id;
    out.xgaze_id = candidates[ranked[best].index].face_id;
    out.score = best_score;
    out.distance = ranked[best].distance;
    out.mode = out.distance < cfg.eye_swap_threshold ? SwapMode::Eyes : SwapMode::Full;
    out.gender_fallback = pool.fallback;
    return out;
}

}  // namespace gazeswap
