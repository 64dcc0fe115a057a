#include "mtlpose/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mtlpose/errors.hpp"

namespace mtlpose {

namespace {

bool finite(const Vec3& v) { return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z()); }

bool finite(const Quaternion& q) {
    return std::isfinite(q.w) && std::isfinite(q.x) && std::isfinite(q.y) && std::isfinite(q.z);
}

}  // namespace

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double angle_rad) {
    const double n = axis.norm();
    if (!(n > 0.0)) throw InvalidInput("axis-angle with zero axis");
    const Vec3 a = axis / n;
    const double s = std::sin(0.5 * angle_rad);
    return {std::cos(0.5 * angle_rad), a.x() * s, a.y() * s, a.z() * s};
}

double Quaternion::norm() const { return std::sqrt(dot(*this)); }

Quaternion Quaternion::normalized() const {
    const double n = norm();
    if (!(n > 1e-12) || !std::isfinite(n)) throw InvalidInput("cannot normalize quaternion of norm " + std::to_string(n));
    return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::operator*(const Quaternion& o) const {
    return {w * o.w - x * o.x - y * o.y - z * o.z,
            w * o.x + x * o.w + y * o.z - z * o.y,
            w * o.y - x * o.z + y * o.w + z * o.x,
            w * o.z + x * o.y - y * o.x + z * o.w};
}

Pose::Pose(const Quaternion& q, const Vec3& t) : t_(t) {
    if (!finite(q)) throw InvalidInput("pose quaternion is not finite");
    if (!finite(t)) throw InvalidInput("pose translation is not finite");
    // Already-unit inputs keep their exact bits so stored poses round-trip.
    q_ = std::abs(q.norm() - 1.0) <= 1e-12 ? q : q.normalized();
}

Mat3 Pose::rotation() const { return quat_to_matrix(q_); }

Vec3 Pose::transform(const Vec3& p_body) const { return rotation() * p_body + t_; }

CameraModel CameraModel::from_fov(int width_px, int height_px, double fov_deg) {
    if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw InvalidInput("field of view must lie in (0, 180) degrees");
    CameraModel cam;
    cam.width_px = width_px;
    cam.height_px = height_px;
    cam.f_px = width_px / (2.0 * std::tan(0.5 * fov_deg * std::numbers::pi / 180.0));
    cam.cx = 0.5 * width_px;
    cam.cy = 0.5 * height_px;
    cam.validate();
    return cam;
}

void CameraModel::validate() const {
    if (width_px <= 0 || height_px <= 0) throw InvalidInput("camera image size must be positive");
    if (!(f_px > 0.0) || !std::isfinite(f_px)) throw InvalidInput("camera focal length must be positive");
    if (!(cx >= 0.0 && cx < width_px && cy >= 0.0 && cy < height_px))
        throw InvalidInput("camera principal point lies outside the image");
}

bool CameraModel::in_frame(const Vec2& uv) const {
    return uv.x() >= -0.5 && uv.x() < width_px - 0.5 && uv.y() >= -0.5 && uv.y() < height_px - 0.5;
}

Mat3 quat_to_matrix(const Quaternion& q) {
    if (!finite(q) || std::abs(q.norm() - 1.0) > 1e-6) throw InvalidInput("quat_to_matrix expects a unit quaternion");
    const auto [w, x, y, z] = q;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Shepperd's method: pivot on the largest of (trace, diagonal) for conditioning.
Quaternion matrix_to_quat(const Mat3& r) {
    const double tr = r.trace();
    Quaternion q;
    if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + tr);
        q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
        q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
        q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
    } else {
        const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
        q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
    }
    return q.normalized();
}

std::vector<Vec2> project(const CameraModel& camera, const Pose& pose, std::span<const Vec3> points) {
    const Mat3 r = pose.rotation();
    std::vector<Vec2> out;
    out.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Vec3 pc = r * points[i] + pose.t();
        if (!(pc.z() > 1e-6)) throw BehindCamera(i, pc.z());
        out.emplace_back(camera.f_px * pc.x() / pc.z() + camera.cx, camera.f_px * pc.y() / pc.z() + camera.cy);
    }
    return out;
}

double translation_error(const Vec3& t_hat, const Vec3& t) {
    if (!finite(t_hat) || !finite(t)) throw InvalidInput("translation_error on non-finite input");
    return (t_hat - t).norm();
}

double rotation_error(const Quaternion& q_hat, const Quaternion& q) {
    // Half the 4D angle between the unit quaternions, via atan2 for accuracy near 0 and pi.
    const double s = q_hat.dot(q) < 0.0 ? -1.0 : 1.0;
    const double dw = q_hat.w - s * q.w, dx = q_hat.x - s * q.x, dy = q_hat.y - s * q.y, dz = q_hat.z - s * q.z;
    const double pw = q_hat.w + s * q.w, px = q_hat.x + s * q.x, py = q_hat.y + s * q.y, pz = q_hat.z + s * q.z;
    return 4.0 * std::atan2(std::sqrt(dw * dw + dx * dx + dy * dy + dz * dz), std::sqrt(pw * pw + px * px + py * py + pz * pz));
}

double speed_score(const Pose& pose_hat, const Pose& pose_gt) {
    const double range = pose_gt.t().norm();
    if (!(range > 0.0)) throw InvalidInput("speed_score needs a non-zero ground-truth translation");
    return rotation_error(pose_hat.q(), pose_gt.q()) + translation_error(pose_hat.t(), pose_gt.t()) / range;
}

}  // namespace mtlpose
