#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gazeswap/error.hpp"
#include "gazeswap/geometry.hpp"
#include "gazeswap/image.hpp"

namespace gazeswap {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point2&) const = default;
};

/// Axis-aligned box, corners in pixels: [x0, x1) x [y0, y1).
struct BBox {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    Point2 center() const { return {(x0 + x1) / 2.0, (y0 + y1) / 2.0}; }
    bool contains(const Point2& p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }

    bool operator==(const BBox&) const = default;
};

/// 68 facial landmarks in the iBUG ordering (0-16 jaw, 17-26 brows, 27-35
/// nose, 36-47 eyes, 48-67 mouth).
using Landmarks68 = std::array<Point2, 68>;

namespace landmark {
inline constexpr int kRightEyeOuter = 36;
inline constexpr int kRightEyeInner = 39;
inline constexpr int kLeftEyeInner = 42;
inline constexpr int kLeftEyeOuter = 45;
inline constexpr int kMouthRight = 48;
inline constexpr int kMouthLeft = 54;
}  // namespace landmark

inline bool all_finite(const Landmarks68& lmk) {
    return std::all_of(lmk.begin(), lmk.end(),
                       [](const Point2& p) { return std::isfinite(p.x) && std::isfinite(p.y); });
}

struct CameraIntrinsics {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

    /// Uncalibrated default: focal length 1.2 * max(w, h), principal point at the centre.
    static CameraIntrinsics default_for(int image_width, int image_height) {
        const double f = 1.2 * std::max(image_width, image_height);
        return {f, f, image_width / 2.0, image_height / 2.0};
    }

    Eigen::Matrix3d matrix() const {
        if (!(fx > 0.0) || !(fy > 0.0)) fail(Errc::invalid_argument, "focal lengths must be positive");
        Eigen::Matrix3d k;
        k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
        return k;
    }

    Point2 project(const Eigen::Vector3d& p) const { return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy}; }
};

struct HeadPose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d(0.0, 0.0, 600.0);  // mm; face centre in camera frame

    bool valid(double tol = 1e-6) const {
        const bool ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol;
        return ortho && std::abs(rotation.determinant() - 1.0) <= tol && translation.z() > 0.0;
    }
};

/// Sparse generic 3D face: named points in mm, camera-forward right-handed
/// frame (x right, y down, z away from the viewer). Points are re-centred on
/// their centroid so that a pose translation is the face centre.
class FaceModel {
public:
    struct Entry {
        std::string name;
        int landmark;
        Eigen::Vector3d point;
    };

    static const std::map<std::string, int>& landmark_names() {
        static const std::map<std::string, int> names{
            {"right_eye_outer", landmark::kRightEyeOuter}, {"right_eye_inner", landmark::kRightEyeInner},
            {"left_eye_inner", landmark::kLeftEyeInner},   {"left_eye_outer", landmark::kLeftEyeOuter},
            {"mouth_right", landmark::kMouthRight},        {"mouth_left", landmark::kMouthLeft},
        };
        return names;
    }

    /// Default six-point model (eye corners at +-45 mm / +-15 mm, mouth corners).
    static FaceModel generic() {
        std::istringstream in(
            "right_eye_outer -45.0 -35.0 15.0\n"
            "right_eye_inner -15.0 -35.0 5.0\n"
            "left_eye_inner 15.0 -35.0 5.0\n"
            "left_eye_outer 45.0 -35.0 15.0\n"
            "mouth_right -25.0 35.0 10.0\n"
            "mouth_left 25.0 35.0 10.0\n");
        return parse(in, "<generic>");
    }

    /// Plain-text table of `name x y z` rows; `#` starts a comment.
    static FaceModel load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) fail(Errc::io_error, "cannot open face model " + path.string());
        return parse(in, path.string());
    }

    static FaceModel parse(std::istream& in, const std::string& origin) {
        FaceModel model;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            std::istringstream row(line);
            std::string name;
            if (!(row >> name)) continue;
            double x, y, z;
            if (!(row >> x >> y >> z))
                fail(Errc::parse_error, origin + ":" + std::to_string(lineno) + ": expected `name x y z`");
            auto it = landmark_names().find(name);
            if (it == landmark_names().end())
                fail(Errc::parse_error, origin + ":" + std::to_string(lineno) + ": unknown landmark `" + name + "`");
            model.entries_.push_back({name, it->second, {x, y, z}});
        }
        if (model.entries_.size() < 6) fail(Errc::parse_error, origin + ": face model needs 6 points");
        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
        for (const auto& e : model.entries_) centroid += e.point;
        centroid /= static_cast<double>(model.entries_.size());
        for (auto& e : model.entries_) e.point -= centroid;
        return model;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<Entry> entries_;
};

struct PoseEstimate {
    HeadPose pose;
    double rmse = 0.0;  // reprojection RMSE, pixels
    int iterations = 0;
};

namespace detail {

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

inline Eigen::Matrix3d exp_so3(const Eigen::Vector3d& w) {
    const double angle = w.norm();
    if (angle < 1e-15) return Eigen::Matrix3d::Identity() + skew(w);
    return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

inline double reprojection_sq(const std::vector<Eigen::Vector3d>& model, const std::vector<Point2>& obs,
                              const CameraIntrinsics& cam, const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < model.size(); ++i) {
        const Eigen::Vector3d pc = r * model[i] + t;
        if (pc.z() <= 0.0) return std::numeric_limits<double>::infinity();
        const Point2 p = cam.project(pc);
        sum += (p.x - obs[i].x) * (p.x - obs[i].x) + (p.y - obs[i].y) * (p.y - obs[i].y);
    }
    return sum;
}

// Direct linear transform on calibrated, Hartley-normalised coordinates.
inline HeadPose dlt_pose(const std::vector<Eigen::Vector3d>& model, const std::vector<Point2>& obs,
                         const CameraIntrinsics& cam) {
    const std::size_t n = model.size();
    std::vector<Eigen::Vector2d> xn(n);
    Eigen::Vector2d c2 = Eigen::Vector2d::Zero();
    Eigen::Vector3d c3 = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        xn[i] = {(obs[i].x - cam.cx) / cam.fx, (obs[i].y - cam.cy) / cam.fy};
        c2 += xn[i];
        c3 += model[i];
    }
    c2 /= static_cast<double>(n);
    c3 /= static_cast<double>(n);
    double d2 = 0.0, d3 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d2 += (xn[i] - c2).norm();
        d3 += (model[i] - c3).norm();
    }
    const double s2 = std::sqrt(2.0) * static_cast<double>(n) / d2;
    const double s3 = std::sqrt(3.0) * static_cast<double>(n) / d3;

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * static_cast<Eigen::Index>(n), 12);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector2d u = s2 * (xn[i] - c2);
        Eigen::Vector4d X;
        X << s3 * (model[i] - c3), 1.0;
        const auto r0 = static_cast<Eigen::Index>(2 * i);
        a.block<1, 4>(r0, 0) = X.transpose();
        a.block<1, 4>(r0, 8) = -u.x() * X.transpose();
        a.block<1, 4>(r0 + 1, 4) = X.transpose();
        a.block<1, 4>(r0 + 1, 8) = -u.y() * X.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    // A one-dimensional null space is required; a second near-zero singular
    // value means the configuration does not pin the pose down.
    if (sv(10) < 1e-9 * sv(0)) fail(Errc::estimation_failed, "degenerate landmark configuration");
    const Eigen::VectorXd v = svd.matrixV().col(11);
    Eigen::Matrix<double, 3, 4> pn;
    pn << v.segment<4>(0).transpose(), v.segment<4>(4).transpose(), v.segment<4>(8).transpose();

    Eigen::Matrix3d t2 = Eigen::Matrix3d::Identity();
    t2(0, 0) = t2(1, 1) = s2;
    t2.block<2, 1>(0, 2) = -s2 * c2;
    Eigen::Matrix4d t3 = Eigen::Matrix4d::Identity();
    t3.block<3, 3>(0, 0) *= s3;
    t3.block<3, 1>(0, 3) = -s3 * c3;
    Eigen::Matrix<double, 3, 4> p = t2.inverse() * pn * t3;

    Eigen::Matrix3d m = p.block<3, 3>(0, 0);
    if (m.determinant() < 0.0) {
        p = -p;
        m = -m;
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> msvd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    HeadPose pose;
    pose.rotation = msvd.matrixU() * msvd.matrixV().transpose();
    const double scale = msvd.singularValues().mean();
    if (!(scale > 0.0)) fail(Errc::estimation_failed, "degenerate DLT solution");
    pose.translation = p.col(3) / scale;
    if (pose.translation.z() <= 0.0) fail(Errc::estimation_failed, "DLT placed the face behind the camera");
    return pose;
}

}  // namespace detail

struct PnpOptions {
    int max_iterations = 100;
    double step_tolerance = 1e-10;
};

/// Head pose from the six model landmarks: DLT initialisation followed by
/// Gauss-Newton on the squared reprojection error.
inline PoseEstimate estimate_head_pose(const Landmarks68& lmk, const CameraIntrinsics& cam,
                                       const FaceModel& model = FaceModel::generic(), PnpOptions opts = {}) {
    if (!all_finite(lmk)) fail(Errc::invalid_argument, "landmarks must be finite");
    cam.matrix();

    std::vector<Eigen::Vector3d> pts;
    std::vector<Point2> obs;
    for (const auto& e : model.entries()) {
        pts.push_back(e.point);
        obs.push_back(lmk[static_cast<std::size_t>(e.landmark)]);
    }

    // Collinear or coincident image points cannot constrain a rotation.
    {
        Eigen::Vector2d mean = Eigen::Vector2d::Zero();
        for (const auto& p : obs) mean += Eigen::Vector2d(p.x, p.y);
        mean /= static_cast<double>(obs.size());
        Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
        for (const auto& p : obs) {
            const Eigen::Vector2d d = Eigen::Vector2d(p.x, p.y) - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
        if (es.eigenvalues()(1) <= 0.0 || es.eigenvalues()(0) < 1e-10 * es.eigenvalues()(1))
            fail(Errc::estimation_failed, "landmarks are collinear");
    }

    HeadPose pose = detail::dlt_pose(pts, obs, cam);
    Eigen::Matrix3d r = pose.rotation;
    Eigen::Vector3d t = pose.translation;
    double cost = detail::reprojection_sq(pts, obs, cam, r, t);

    const std::size_t n = pts.size();
    for (int it = 1; it <= opts.max_iterations; ++it) {
        Eigen::MatrixXd jac(2 * static_cast<Eigen::Index>(n), 6);
        Eigen::VectorXd res(2 * static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const Eigen::Vector3d rx = r * pts[i];
            const Eigen::Vector3d pc = rx + t;
            const double iz = 1.0 / pc.z();
            Eigen::Matrix<double, 2, 3> dproj;
            dproj << cam.fx * iz, 0.0, -cam.fx * pc.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
            const auto row = static_cast<Eigen::Index>(2 * i);
            jac.block<2, 3>(row, 0) = dproj * (-detail::skew(rx));
            jac.block<2, 3>(row, 3) = dproj;
            const Point2 proj = cam.project(pc);
            res(row) = proj.x - obs[i].x;
            res(row + 1) = proj.y - obs[i].y;
        }
        const Eigen::Matrix<double, 6, 6> jtj = jac.transpose() * jac;
        const Eigen::Matrix<double, 6, 1> step = jtj.ldlt().solve(-jac.transpose() * res);
        if (!step.allFinite()) fail(Errc::estimation_failed, "Gauss-Newton step is not finite");

        // Backtrack if the full step overshoots.
        double scale = 1.0;
        Eigen::Matrix3d r_new;
        Eigen::Vector3d t_new;
        double cost_new = 0.0;
        for (int k = 0; k < 30; ++k) {
            r_new = detail::exp_so3(scale * step.head<3>()) * r;
            t_new = t + scale * step.tail<3>();
            cost_new = detail::reprojection_sq(pts, obs, cam, r_new, t_new);
            if (cost_new <= cost) break;
            scale *= 0.5;
        }
        const bool improved = cost_new <= cost;
        if (improved) {
            r = r_new;
            t = t_new;
            cost = cost_new;
        }
        if (scale * step.norm() < opts.step_tolerance || !improved) {
            // Re-orthonormalise against drift from repeated products.
            Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
            r = svd.matrixU() * svd.matrixV().transpose();
            PoseEstimate out;
            out.pose.rotation = r;
            out.pose.translation = t;
            out.rmse = std::sqrt(cost / static_cast<double>(n));
            out.iterations = it;
            return out;
        }
    }
    fail(Errc::estimation_failed, "head pose did not converge in " + std::to_string(opts.max_iterations) + " iterations");
}

struct NormalizationParams {
    double distance_mm = 600.0;  // virtual camera distance
    double focal_px = 960.0;     // virtual focal length
    int crop_px = 224;           // square output size
};

struct NormalizationResult {
    Eigen::Matrix3d warp = Eigen::Matrix3d::Identity();      // W: original pixels -> crop pixels
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // R: camera -> normalised camera
    int crop_size = 224;
};

/// Virtual-camera normalisation: rotate so the face centre is on the optical
/// axis with the head x-axis parallel to image x, scale to a fixed distance,
/// and re-project with the virtual intrinsics.
inline NormalizationResult compute_normalization(const HeadPose& pose, const CameraIntrinsics& cam,
                                                 const NormalizationParams& params = {}) {
    if (!pose.valid()) fail(Errc::invalid_argument, "head pose is not a proper rotation in front of the camera");
    const Eigen::Vector3d& center = pose.translation;
    const double distance = center.norm();
    const Eigen::Vector3d forward = center / distance;
    const Eigen::Vector3d head_x = pose.rotation.col(0);
    const Eigen::Vector3d down = forward.cross(head_x).normalized();
    const Eigen::Vector3d right = down.cross(forward).normalized();

    NormalizationResult out;
    out.rotation.row(0) = right.transpose();
    out.rotation.row(1) = down.transpose();
    out.rotation.row(2) = forward.transpose();
    out.crop_size = params.crop_px;

    Eigen::Matrix3d virt;
    virt << params.focal_px, 0.0, params.crop_px / 2.0, 0.0, params.focal_px, params.crop_px / 2.0, 0.0, 0.0, 1.0;
    const Eigen::Matrix3d scale = Eigen::Vector3d(1.0, 1.0, params.distance_mm / distance).asDiagonal();
    out.warp = virt * scale * out.rotation * cam.matrix().inverse();
    return out;
}

/// Applies a homography to a pixel coordinate.
inline Point2 apply_warp(const Eigen::Matrix3d& w, const Point2& p) {
    const Eigen::Vector3d q = w * Eigen::Vector3d(p.x, p.y, 1.0);
    return {q.x() / q.z(), q.y() / q.z()};
}

/// Bilinear sample with zero outside the image.
inline double sample_bilinear(const Image& img, double x, double y, int c) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto px = [&](int xi, int yi) { return img.contains(xi, yi) ? img.at(xi, yi, c) : 0.0; };
    return (1.0 - fy) * ((1.0 - fx) * px(x0, y0) + fx * px(x0 + 1, y0)) +
           fy * ((1.0 - fx) * px(x0, y0 + 1) + fx * px(x0 + 1, y0 + 1));
}

/// Backward-mapped warp: out(p) = img(W^-1 p), bilinear, zero outside.
inline Image warp_image(const Image& img, const Eigen::Matrix3d& w, int out_width, int out_height) {
    Eigen::FullPivLU<Eigen::Matrix3d> lu(w);
    if (!lu.isInvertible() || !w.allFinite()) fail(Errc::invalid_argument, "warp matrix is singular");
    const Eigen::Matrix3d inv = lu.inverse();
    Image out(out_width, out_height);
    for (int y = 0; y < out_height; ++y) {
        for (int x = 0; x < out_width; ++x) {
            const Point2 s = apply_warp(inv, {static_cast<double>(x), static_cast<double>(y)});
            if (!std::isfinite(s.x) || !std::isfinite(s.y)) continue;
            for (int c = 0; c < Image::kChannels; ++c) out.at(x, y, c) = sample_bilinear(img, s.x, s.y, c);
        }
    }
    return out;
}

inline Image warp_image(const Image& img, const NormalizationResult& norm) {
    return warp_image(img, norm.warp, norm.crop_size, norm.crop_size);
}

namespace detail {
inline void require_rotation(const Eigen::Matrix3d& r) {
    const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!r.allFinite() || ortho > 1e-6 || std::abs(r.determinant() - 1.0) > 1e-6)
        fail(Errc::invalid_argument, "matrix is not a rotation");
}
inline GazeVector mul(const Eigen::Matrix3d& m, const GazeVector& g) {
    const Eigen::Vector3d v = m * Eigen::Vector3d(g.x, g.y, g.z);
    return {v.x(), v.y(), v.z()};
}
}  // namespace detail

/// Camera-frame gaze -> normalised frame (R g).
inline GazeVector rotate_gaze(const Eigen::Matrix3d& r, const GazeVector& g) {
    detail::require_rotation(r);
    if (!g.is_unit()) fail(Errc::invalid_argument, "gaze vector must be unit norm");
    return detail::mul(r, g);
}

/// Normalised-frame gaze -> camera frame (R^-1 g = R^T g).
inline GazeVector denormalize_gaze(const Eigen::Matrix3d& r, const GazeVector& g) {
    detail::require_rotation(r);
    if (!g.is_unit()) fail(Errc::invalid_argument, "gaze vector must be unit norm");
    return detail::mul(r.transpose(), g);
}

}  // namespace gazeswap
