#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gazeswap/error.hpp"
#include "gazeswap/geometry.hpp"

namespace gazeswap {

struct FaceEvalRecord {
    std::string face_id;
    double face_width = 0.0;  // pixels
    GazeVector gt;
    GazeVector pred;
};

/// Angular distance from the camera-facing direction, degrees.
inline double angle_from_frontal(const GazeVector& g) { return angular_error(g, GazeVector{0.0, 0.0, -1.0}); }

/// Ordered half-open bins [edges[i], edges[i+1]). The last edge may be +inf.
struct BinSpec {
    std::vector<double> edges;
    std::vector<std::string> labels;

    void validate() const {
        if (edges.size() < 2 || labels.size() + 1 != edges.size())
            fail(Errc::invalid_argument, "bin spec needs n+1 edges for n labels");
        for (std::size_t i = 1; i < edges.size(); ++i)
            if (!(edges[i] > edges[i - 1])) fail(Errc::invalid_argument, "bin edges must be strictly increasing");
    }

    /// Bin index of v, or nullopt if it falls outside every bin.
    std::optional<std::size_t> bin_of(double v) const {
        if (!(v >= edges.front()) || !(v < edges.back())) return std::nullopt;
        for (std::size_t i = 0; i + 1 < edges.size(); ++i)
            if (v < edges[i + 1]) return i;
        return std::nullopt;
    }
};

/// Face-width protocol: 30-60, ..., 210-240, >240 pixels.
inline BinSpec width_bins() {
    BinSpec s;
    for (int lo = 30; lo <= 240; lo += 30) s.edges.push_back(lo);
    s.edges.push_back(std::numeric_limits<double>::infinity());
    for (int lo = 30; lo < 240; lo += 30) s.labels.push_back(std::to_string(lo) + "-" + std::to_string(lo + 30));
    s.labels.push_back(">240");
    return s;
}

/// Gaze-angle protocol: 0-20, 20-30, ..., 80-90 degrees.
inline BinSpec angle_bins() {
    BinSpec s;
    s.edges = {0, 20, 30, 40, 50, 60, 70, 80, 90};
    for (std::size_t i = 0; i + 1 < s.edges.size(); ++i)
        s.labels.push_back(std::to_string(static_cast<int>(s.edges[i])) + "-" + std::to_string(static_cast<int>(s.edges[i + 1])));
    return s;
}

enum class BinAxis { Width, Angle };

struct BinStat {
    std::string label;
    std::size_t count = 0;
    std::optional<double> mean_error;  // absent for empty bins
};

struct BinnedError {
    std::vector<BinStat> bins;
    std::size_t excluded = 0;  // records outside every bin (e.g. faces narrower than 30 px)
    std::size_t total = 0;
};

inline double bin_key(const FaceEvalRecord& r, BinAxis axis) {
    return axis == BinAxis::Width ? r.face_width : angle_from_frontal(r.gt);
}

/// Mean angular error per bin. Sums run in record order.
inline BinnedError binned_error(const std::vector<FaceEvalRecord>& records, const BinSpec& spec, BinAxis axis) {
    spec.validate();
    BinnedError out;
    out.bins.resize(spec.labels.size());
    std::vector<double> sums(spec.labels.size(), 0.0);
    for (std::size_t i = 0; i < spec.labels.size(); ++i) out.bins[i].label = spec.labels[i];
    for (const auto& r : records) {
        ++out.total;
        const auto b = spec.bin_of(bin_key(r, axis));
        if (!b) {
            ++out.excluded;
            continue;
        }
        sums[*b] += angular_error(r.gt, r.pred);
        ++out.bins[*b].count;
    }
    for (std::size_t i = 0; i < sums.size(); ++i)
        if (out.bins[i].count) out.bins[i].mean_error = sums[i] / static_cast<double>(out.bins[i].count);
    return out;
}

/// Per-image running time: base + per_face * faces.
struct CostModel {
    std::string name;
    double base_ms = 0.0;
    double per_face_ms = 0.0;

    double time_ms(std::size_t faces) const { return base_ms + per_face_ms * static_cast<double>(faces); }
    double fps(std::size_t faces) const { return 1000.0 / time_ms(faces); }
};

/// Detector cost shared by the multi-stage pipelines.
inline constexpr double kDetectorMs = 25.0;

inline CostModel one_stage_model() { return {"Ours (MobileNet)", 24.93, 0.0}; }

inline std::vector<CostModel> per_face_models() {
    return {{"Full-face", kDetectorMs, 1.21}, {"ETH-18", kDetectorMs, 3.15}, {"ETH-50", kDetectorMs, 6.64}, {"GazeTR", kDetectorMs, 9.98}};
}

/// Smallest face count at which `model` is slower than `reference`, or nullopt
/// if it never is within `max_faces`.
inline std::optional<std::size_t> crossover(const CostModel& model, const CostModel& reference, std::size_t max_faces = 1000) {
    for (std::size_t n = 1; n <= max_faces; ++n)
        if (model.time_ms(n) > reference.time_ms(n)) return n;
    return std::nullopt;
}

}  // namespace gazeswap
