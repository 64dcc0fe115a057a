#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mtlpose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Scalar-first Hamilton quaternion. Rotations are camera-from-body.
struct Quaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    static Quaternion identity() { return {}; }
    static Quaternion from_axis_angle(const Vec3& axis, double angle_rad);

    double norm() const;
    double dot(const Quaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
    Quaternion normalized() const;
    Quaternion conjugate() const { return {w, -x, -y, -z}; }
    Quaternion operator-() const { return {-w, -x, -y, -z}; }
    Quaternion operator*(const Quaternion& o) const;
};

/// Rigid transform mapping body-frame points into the camera frame: p_c = R(q) p_b + t.
class Pose {
public:
    Pose() = default;
    /// Normalizes q. Throws InvalidInput for a near-zero q or a non-finite component.
    Pose(const Quaternion& q, const Vec3& t);

    const Quaternion& q() const { return q_; }
    const Vec3& t() const { return t_; }
    Mat3 rotation() const;
    Vec3 transform(const Vec3& p_body) const;

private:
    Quaternion q_;
    Vec3 t_ = Vec3::Zero();
};

/// Pinhole camera with square pixels. Pixel (row r, col c) has its center at (u, v) = (c, r).
struct CameraModel {
    int width_px = 64;
    int height_px = 64;
    double f_px = 0.0;
    double cx = 0.0;
    double cy = 0.0;

    /// Focal length from the horizontal field of view, principal point at (W/2, H/2).
    static CameraModel from_fov(int width_px, int height_px, double fov_deg);
    void validate() const;
    /// True when the nearest pixel to (u, v) lies inside the image.
    bool in_frame(const Vec2& uv) const;
};

Mat3 quat_to_matrix(const Quaternion& q);
Quaternion matrix_to_quat(const Mat3& r);

/// Projects body-frame points; throws BehindCamera naming the first point with depth <= 1e-6 m.
std::vector<Vec2> project(const CameraModel& camera, const Pose& pose, std::span<const Vec3> points);

double translation_error(const Vec3& t_hat, const Vec3& t);
/// Geodesic angle between two rotations, in [0, pi].
double rotation_error(const Quaternion& q_hat, const Quaternion& q);
/// E_R + E_T / ||t_gt||.
double speed_score(const Pose& pose_hat, const Pose& pose_gt);

}  // namespace mtlpose
