#pragma once

// Procedural faces for tests and fixtures: a 68-point 3D layout consistent
// with the generic six-point model, projection through a pose, and a flat
// shaded renderer whose iris position follows a gaze direction.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "gazeswap/blend.hpp"
#include "gazeswap/geometry.hpp"
#include "gazeswap/image.hpp"
#include "gazeswap/matching.hpp"
#include "gazeswap/normalization.hpp"
#include "gazeswap/random.hpp"

namespace gazeswap::synthetic {

using Layout3D = std::array<Eigen::Vector3d, 68>;

/// 68 points in the face-model frame (mm; x right, y down, z away), shifted by
/// the same centroid the generic model is re-centred on.
inline Layout3D face_layout() {
    Layout3D p;
    for (int i = 0; i <= 16; ++i) {
        const double t = kPi * i / 16.0;
        p[static_cast<std::size_t>(i)] = {-70.0 * std::cos(t), -30.0 + 115.0 * std::sin(t), 60.0 - 40.0 * std::sin(t)};
    }
    for (int i = 0; i < 5; ++i) {
        const double bump = std::sin(kPi * i / 4.0);
        p[static_cast<std::size_t>(17 + i)] = {-60.0 + 10.0 * i, -50.0 - 6.0 * bump, 10.0};
        p[static_cast<std::size_t>(22 + i)] = {20.0 + 10.0 * i, -50.0 - 6.0 * std::sin(kPi * (4 - i) / 4.0), 10.0};
    }
    for (int i = 0; i < 4; ++i) p[static_cast<std::size_t>(27 + i)] = {0.0, -35.0 + 13.0 * i, -7.0 * i};
    for (int i = 0; i < 5; ++i) p[static_cast<std::size_t>(31 + i)] = {-15.0 + 7.5 * i, 15.0, i == 2 ? -10.0 : -5.0};
    const double eyes[12][3] = {{-45, -35, 15}, {-37, -40, 10}, {-23, -40, 8}, {-15, -35, 5}, {-23, -31, 8}, {-37, -31, 10},
                                {15, -35, 5},   {23, -40, 8},   {37, -40, 10}, {45, -35, 15}, {37, -31, 10}, {23, -31, 8}};
    for (int i = 0; i < 12; ++i) p[static_cast<std::size_t>(36 + i)] = {eyes[i][0], eyes[i][1], eyes[i][2]};
    const double mouth[20][3] = {{-25, 35, 10}, {-15, 30, 5}, {-5, 28, 3}, {0, 29, 2},  {5, 28, 3},  {15, 30, 5},  {25, 35, 10},
                                 {15, 42, 5},   {5, 45, 3},   {0, 45, 2},  {-5, 45, 3}, {-15, 42, 5}, {-20, 35, 8}, {-8, 33, 4},
                                 {0, 33, 3},    {8, 33, 4},   {20, 35, 8}, {8, 38, 4},  {0, 38, 3},   {-8, 38, 4}};
    for (int i = 0; i < 20; ++i) p[static_cast<std::size_t>(48 + i)] = {mouth[i][0], mouth[i][1], mouth[i][2]};

    const int key[6] = {landmark::kRightEyeOuter, landmark::kRightEyeInner, landmark::kLeftEyeInner,
                        landmark::kLeftEyeOuter,  landmark::kMouthRight,    landmark::kMouthLeft};
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (int k : key) c += p[static_cast<std::size_t>(k)];
    c /= 6.0;
    for (auto& v : p) v -= c;
    return p;
}

inline Landmarks68 project_layout(const HeadPose& pose, const CameraIntrinsics& cam, const Layout3D& layout = face_layout()) {
    Landmarks68 out{};
    for (std::size_t i = 0; i < 68; ++i) out[i] = cam.project(pose.rotation * layout[i] + pose.translation);
    return out;
}

/// Rotation from yaw about y then pitch about x, in degrees.
inline Eigen::Matrix3d head_rotation(double pitch_deg, double yaw_deg, double roll_deg = 0.0) {
    return (Eigen::AngleAxisd(deg2rad(roll_deg), Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(deg2rad(yaw_deg), Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(deg2rad(pitch_deg), Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

inline BBox landmark_box(const Landmarks68& lmk) {
    BBox b{lmk[0].x, lmk[0].y, lmk[0].x, lmk[0].y};
    for (const auto& p : lmk) {
        b.x0 = std::min(b.x0, p.x);
        b.y0 = std::min(b.y0, p.y);
        b.x1 = std::max(b.x1, p.x);
        b.y1 = std::max(b.y1, p.y);
    }
    return b;
}

/// Smooth textured background so blends have gradients to preserve.
inline Image background(int width, int height, std::uint64_t seed) {
    Rng rng(seed);
    const double fx = rng.uniform(0.02, 0.08), fy = rng.uniform(0.02, 0.08);
    const double base[3] = {rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6)};
    Image img(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, y, c) = base[c] + 0.15 * std::sin(fx * x + 0.7 * c) * std::cos(fy * y - 0.3 * c);
    return img;
}

namespace detail {

inline void paint(Image& img, std::span<const Point2> pts, const std::array<double, 3>& rgb, double shade = 0.0) {
    const auto hull = convex_hull(std::vector<Point2>(pts.begin(), pts.end()));
    if (hull.size() < 3) return;
    RegionMask m(img.width(), img.height());
    fill_convex(m, hull);
    double y0 = hull[0].y, y1 = hull[0].y;
    for (const auto& p : hull) {
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (m.at(x, y)) {
                const double t = y1 > y0 ? (y - y0) / (y1 - y0) : 0.0;
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[static_cast<std::size_t>(c)] * (1.0 - shade * t);
            }
}

inline void paint_disc(Image& img, const Point2& c, double radius, std::span<const Point2> clip, const std::array<double, 3>& rgb) {
    const auto hull = convex_hull(std::vector<Point2>(clip.begin(), clip.end()));
    for (int y = std::max(0, static_cast<int>(c.y - radius)); y <= std::min(img.height() - 1, static_cast<int>(c.y + radius) + 1); ++y)
        for (int x = std::max(0, static_cast<int>(c.x - radius)); x <= std::min(img.width() - 1, static_cast<int>(c.x + radius) + 1); ++x)
            if (std::hypot(x - c.x, y - c.y) <= radius && inside_convex(hull, {static_cast<double>(x), static_cast<double>(y)}))
                for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = rgb[static_cast<std::size_t>(ch)];
}

}  // namespace detail

struct Appearance {
    std::array<double, 3> skin{0.85, 0.65, 0.55};
    std::array<double, 3> iris{0.25, 0.15, 0.10};
    std::array<double, 3> lips{0.70, 0.30, 0.30};
};

/// Draws a face over `img`. The iris sits at the eye centre displaced by the
/// front projection of `gaze` at a radius of 0.35 eye widths.
inline void draw_face(Image& img, const Landmarks68& lmk, const GazeAngles& gaze, const Appearance& look = {}) {
    detail::paint(img, lmk, look.skin, 0.25);
    for (int e = 0; e < 2; ++e) {
        const std::span<const Point2> eye(lmk.data() + 36 + 6 * e, 6);
        detail::paint(img, eye, {0.95, 0.95, 0.95});
        Point2 c{};
        for (const auto& p : eye) {
            c.x += p.x / 6.0;
            c.y += p.y / 6.0;
        }
        const double w = std::hypot(eye[3].x - eye[0].x, eye[3].y - eye[0].y);
        const PlanePoint off = project(Plane::Front, gaze, FaceRadius(std::max(0.35 * w, 1e-6)));
        detail::paint_disc(img, {c.x + off.u, c.y + off.v}, 0.22 * w, eye, look.iris);
    }
    detail::paint(img, std::span<const Point2>(lmk.data() + 48, 12), look.lips);
}

/// A face seen by a camera: the rendered image plus its ground truth.
struct Scene {
    Image image;
    CameraIntrinsics camera;
    HeadPose pose;
    Landmarks68 landmarks{};
    BBox bbox;
};

inline Scene render_scene(int width, int height, const HeadPose& pose, const GazeAngles& gaze, std::uint64_t seed = 1,
                          const Appearance& look = {}) {
    Scene s;
    s.camera = CameraIntrinsics::default_for(width, height);
    s.pose = pose;
    s.landmarks = project_layout(pose, s.camera);
    s.bbox = landmark_box(s.landmarks);
    s.image = background(width, height, seed);
    draw_face(s.image, s.landmarks, gaze, look);
    return s;
}

/// A frontal face rendered directly in the normalised frame, as a gaze-labelled
/// source crop.
inline Image render_normalized(const NormalizationParams& params, const GazeAngles& gaze, std::uint64_t seed = 2,
                               const Appearance& look = {}) {
    CameraIntrinsics cam{params.focal_px, params.focal_px, params.crop_px / 2.0, params.crop_px / 2.0};
    HeadPose pose{Eigen::Matrix3d::Identity(), {0.0, 0.0, params.distance_mm}};
    Image img = background(params.crop_px, params.crop_px, seed);
    draw_face(img, project_layout(pose, cam), gaze, look);
    return img;
}

/// Probability vector with one dominant class.
template <std::size_t N>
std::array<double, N> peaked(Rng& rng, std::size_t dominant) {
    std::array<double, N> p{};
    double sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) sum += p[i] = rng.uniform(0.0, 1.0) + (i == dominant ? 3.0 : 0.0);
    for (auto& v : p) v /= sum;
    return p;
}

/// Attribute record with landmarks of a randomly posed face in the normalised frame.
inline AttributeRecord random_attributes(Rng& rng, const std::string& id, FaceSource source) {
    AttributeRecord r;
    r.face_id = id;
    r.source = source;
    const NormalizationParams params;
    CameraIntrinsics cam{params.focal_px, params.focal_px, params.crop_px / 2.0, params.crop_px / 2.0};
    const double pitch = rng.uniform(-25.0, 25.0), yaw = rng.uniform(-40.0, 40.0);
    r.lmk = project_layout({head_rotation(pitch, yaw), {0.0, 0.0, params.distance_mm}}, cam);
    for (auto& p : r.lmk) {
        p.x += rng.uniform(-1.0, 1.0);
        p.y += rng.uniform(-1.0, 1.0);
    }
    r.pose = {pitch, yaw};
    r.age = peaked<9>(rng, static_cast<std::size_t>(rng.next() % 9));
    r.race = peaked<7>(rng, static_cast<std::size_t>(rng.next() % 7));
    r.gender = peaked<2>(rng, static_cast<std::size_t>(rng.next() % 2));
    return r;
}

}  // namespace gazeswap::synthetic
