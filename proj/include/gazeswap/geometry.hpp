#pragma once

// Gaze direction representations and their projections onto the front, top
// and side planes of a face-centred frame.
//
// Camera frame: x right, y down, z forward (away from the camera). A gaze
// looking into the camera points toward -z. With pitch theta and yaw phi the
// unit gaze vector is
//
//     g = (-cos(theta) sin(phi), -sin(theta), -cos(theta) cos(phi))
//
// and the three plane projections reduce to coordinate picks scaled by the
// half face width r:
//
//     front = r (g.x, g.y),   top = (-r g.z, r g.x),   side = (r g.z, r g.y)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "gazeswap/error.hpp"
#include "gazeswap/random.hpp"

namespace gazeswap {

inline constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Pitch and yaw in radians.
struct GazeAngles {
    double pitch = 0.0;
    double yaw = 0.0;

    static GazeAngles from_degrees(double pitch_deg, double yaw_deg) {
        return {deg2rad(pitch_deg), deg2rad(yaw_deg)};
    }
    double pitch_deg() const { return rad2deg(pitch); }
    double yaw_deg() const { return rad2deg(yaw); }
    bool finite() const { return std::isfinite(pitch) && std::isfinite(yaw); }
};

struct GazeVector {
    double x = 0.0;
    double y = 0.0;
    double z = -1.0;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    double dot(const GazeVector& o) const { return x * o.x + y * o.y + z * o.z; }
    bool is_unit(double tol = 1e-9) const { return std::abs(norm() - 1.0) <= tol; }
    GazeVector operator-() const { return {-x, -y, -z}; }
    GazeVector normalized() const {
        const double n = norm();
        return {x / n, y / n, z / n};
    }
};

enum class Plane { Front, Top, Side };

inline std::string to_string(Plane p) {
    switch (p) {
        case Plane::Front: return "F";
        case Plane::Top: return "T";
        case Plane::Side: return "S";
    }
    return "?";
}

struct PlanePoint {
    double u = 0.0;
    double v = 0.0;
    Plane plane = Plane::Front;
};

/// Half face width; strictly positive.
class FaceRadius {
public:
    explicit FaceRadius(double r) : r_(r) {
        if (!(r > 0.0) || !std::isfinite(r)) fail(Errc::invalid_argument, "face radius must be positive and finite");
    }
    double value() const { return r_; }

private:
    double r_;
};

inline GazeVector angles_to_vector(const GazeAngles& a) {
    if (!a.finite()) fail(Errc::invalid_argument, "gaze angles must be finite");
    const double ct = std::cos(a.pitch);
    return {-ct * std::sin(a.yaw), -std::sin(a.pitch), -ct * std::cos(a.yaw)};
}

inline GazeAngles vector_to_angles(const GazeVector& g) {
    if (!std::isfinite(g.x) || !std::isfinite(g.y) || !std::isfinite(g.z) || !g.is_unit())
        fail(Errc::invalid_argument, "gaze vector must be unit norm");
    return {-std::asin(std::clamp(g.y, -1.0, 1.0)), std::atan2(-g.x, -g.z)};
}

inline PlanePoint project(Plane plane, const GazeAngles& a, FaceRadius radius) {
    const double r = radius.value();
    const double st = std::sin(a.pitch), ct = std::cos(a.pitch);
    const double sp = std::sin(a.yaw), cp = std::cos(a.yaw);
    switch (plane) {
        case Plane::Front: return {-r * sp * ct, -r * st, plane};
        case Plane::Top: return {r * cp * ct, -r * sp * ct, plane};
        case Plane::Side: return {-r * cp * ct, -r * st, plane};
    }
    return {};
}

/// Inverse of the front projection on the camera-facing hemisphere.
inline GazeAngles unproject_front(const PlanePoint& p, FaceRadius radius) {
    const double r = radius.value();
    if (p.plane != Plane::Front) fail(Errc::invalid_argument, "unproject_front needs a front-plane point");
    if (!(std::abs(p.v) < r)) fail(Errc::out_of_domain, "front-plane v outside the face disc");
    const double pitch = -std::asin(p.v / r);
    const double rc = r * std::cos(pitch);
    if (!(std::abs(p.u) < rc)) fail(Errc::out_of_domain, "front-plane point outside the face disc");
    return {pitch, std::asin(-p.u / rc)};
}

/// Gaze sensitivity r / sqrt(r^2 - x^2) at plane coordinate x.
inline double gaze_sensitivity(double x, FaceRadius radius) {
    const double r = radius.value();
    if (!(std::abs(x) < r)) fail(Errc::out_of_domain, "gaze sensitivity undefined for |x| >= r");
    return r / std::sqrt(r * r - x * x);
}

/// Angle between two unit gaze vectors, in degrees.
inline double angular_error(const GazeVector& a, const GazeVector& b) {
    return rad2deg(std::acos(std::clamp(a.dot(b), -1.0, 1.0)));
}

namespace detail {

// Component of g that the plane does not observe.
inline double hidden_component(Plane plane, const GazeVector& g) {
    switch (plane) {
        case Plane::Front: return g.z;
        case Plane::Top: return g.y;
        case Plane::Side: return g.x;
    }
    return 0.0;
}

}  // namespace detail

/// Sensitivity of a whole plane: the gaze sensitivity evaluated at the radial
/// distance of the projected point. Infinite on the disc rim.
inline double plane_sensitivity(Plane plane, const GazeAngles& a, FaceRadius radius) {
    const PlanePoint p = project(plane, a, radius);
    const double rho = std::hypot(p.u, p.v);
    if (rho >= radius.value()) return std::numeric_limits<double>::infinity();
    return gaze_sensitivity(rho, radius);
}

/// Rebuilds a gaze vector from one plane projection. The hidden component takes
/// the sign of `hidden_sign` (the front plane always uses the camera-facing
/// branch). Points outside the disc are pulled back onto the rim.
inline GazeVector reconstruct_from_plane(const PlanePoint& p, FaceRadius radius, double hidden_sign = -1.0) {
    const double r = radius.value();
    double a = p.u / r, b = p.v / r;
    const double rho2 = a * a + b * b;
    double hidden = 0.0;
    if (rho2 > 1.0) {
        const double s = 1.0 / std::sqrt(rho2);
        a *= s;
        b *= s;
    } else {
        hidden = std::sqrt(1.0 - rho2);
    }
    switch (p.plane) {
        case Plane::Front: return {a, b, -hidden};
        case Plane::Top: return {b, hidden_sign < 0 ? -hidden : hidden, -a};
        case Plane::Side: return {hidden_sign < 0 ? -hidden : hidden, b, a};
    }
    return {};
}

/// Monte Carlo estimate of the angular error caused by quantizing plane
/// projections to a pixel grid.
///
/// Each sample adds uniform noise in [-pixel/2, pixel/2]^2 to the projection of
/// `a` on every selected plane. With one plane the gaze is rebuilt from that
/// plane; with several, from the plane whose sensitivity at the true projection
/// is lowest (the hidden-component sign is taken from the true gaze). The noise
/// stream depends only on `seed`, so runs at different angles share it.
inline double quantization_error_mc(const GazeAngles& a, FaceRadius radius, double pixel,
                                    std::span<const Plane> planes, std::int64_t samples,
                                    std::uint64_t seed) {
    if (planes.empty()) fail(Errc::invalid_argument, "quantization experiment needs at least one plane");
    if (samples < 1) fail(Errc::invalid_argument, "sample count must be positive");
    if (!(pixel >= 0.0)) fail(Errc::invalid_argument, "pixel size must be non-negative");

    const GazeVector truth = angles_to_vector(a);
    Plane best = planes.front();
    double best_gs = std::numeric_limits<double>::infinity();
    for (Plane p : planes) {
        const double gs = plane_sensitivity(p, a, radius);
        if (gs < best_gs) {
            best_gs = gs;
            best = p;
        }
    }
    const PlanePoint exact = project(best, a, radius);
    const double sign = detail::hidden_component(best, truth) < 0.0 ? -1.0 : 1.0;

    Rng rng(seed);
    double sum = 0.0;
    for (std::int64_t i = 0; i < samples; ++i) {
        // Every selected plane consumes its own noise pair so that the stream
        // seen by a given plane does not depend on which others are selected.
        double du = 0.0, dv = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            const double nu = (rng.uniform() - 0.5) * pixel;
            const double nv = (rng.uniform() - 0.5) * pixel;
            if (static_cast<Plane>(k) == best) {
                du = nu;
                dv = nv;
            }
        }
        const PlanePoint noisy{exact.u + du, exact.v + dv, best};
        sum += angular_error(truth, reconstruct_from_plane(noisy, radius, sign));
    }
    return sum / static_cast<double>(samples);
}

inline double quantization_error_mc(const GazeAngles& a, FaceRadius radius, double pixel,
                                    std::initializer_list<Plane> planes, std::int64_t samples,
                                    std::uint64_t seed) {
    const std::vector<Plane> v(planes);
    return quantization_error_mc(a, radius, pixel, std::span<const Plane>(v), samples, seed);
}

}  // namespace gazeswap
