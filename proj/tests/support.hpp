#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <random>
#include <string>

#include "gazeswap/geometry.hpp"
#include "gazeswap/blend.hpp"
#include "gazeswap/random.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("gazeswap-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Uniformly random rotation (quaternion from four normals).
inline Eigen::Matrix3d random_rotation(gazeswap::Rng& rng) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    return q.toRotationMatrix();
}

inline gazeswap::GazeVector random_unit(gazeswap::Rng& rng) {
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    v.normalize();
    return {v.x(), v.y(), v.z()};
}

inline Eigen::Vector3d as_eigen(const gazeswap::GazeVector& g) { return {g.x, g.y, g.z}; }

/// Angle between two vectors in degrees via atan2 of cross and dot, an
/// evaluation route independent of the library's arccos.
inline double angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    return std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / std::numbers::pi;
}

/// Dense assembly of the discrete Poisson equations, solved by full-pivot LU:
/// for every masked pixel p, sum over 4-neighbours q of (f_p - f_q) =
/// sum (s_p - s_q), with f_q = t_q when q is outside the mask.
inline gazeswap::Image dense_poisson(const gazeswap::Image& t, const gazeswap::Image& s, const gazeswap::RegionMask& m) {
    std::vector<std::pair<int, int>> px;
    std::map<std::pair<int, int>, int> id;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y)) {
                id[{x, y}] = static_cast<int>(px.size());
                px.push_back({x, y});
            }
    const int n = static_cast<int>(px.size());
    gazeswap::Image out = t;
    for (int c = 0; c < 3; ++c) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) {
            const auto [x, y] = px[static_cast<std::size_t>(i)];
            for (auto [dx, dy] : {std::pair{1, 0}, std::pair{-1, 0}, std::pair{0, 1}, std::pair{0, -1}}) {
                const int qx = x + dx, qy = y + dy;
                a(i, i) += 1.0;
                b(i) += s.at(x, y, c) - s.at(qx, qy, c);
                if (auto it = id.find({qx, qy}); it != id.end())
                    a(i, it->second) -= 1.0;
                else
                    b(i) += t.at(qx, qy, c);
            }
        }
        const Eigen::VectorXd f = a.fullPivLu().solve(b);
        for (int i = 0; i < n; ++i) out.at(px[static_cast<std::size_t>(i)].first, px[static_cast<std::size_t>(i)].second, c) = f(i);
    }
    return out;
}

inline double max_abs_diff(const gazeswap::Image& a, const gazeswap::Image& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace testing_support
