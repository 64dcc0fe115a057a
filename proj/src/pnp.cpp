#include "mtlpose/pnp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "mtlpose/errors.hpp"
#include "mtlpose/scene.hpp"

namespace mtlpose {

namespace {

using Mat34 = Eigen::Matrix<double, 3, 4>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

Mat3 skew(const Vec3& v) {
    Mat3 s;
    s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return s;
}

Mat3 so3_exp(const Vec3& w) {
    const double theta = w.norm();
    const Mat3 k = skew(w);
    if (theta < 1e-12) return Mat3::Identity() + k;
    return Mat3::Identity() + std::sin(theta) / theta * k + (1.0 - std::cos(theta)) / (theta * theta) * k * k;
}

Mat3 nearest_rotation(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
}

double cost_of(std::span<const Correspondence> corrs, const CameraModel& cam, const Mat3& r, const Vec3& t) {
    double cost = 0.0;
    for (const auto& c : corrs) {
        const Vec3 p = r * c.p3 + t;
        if (!(p.z() > 1e-9)) return std::numeric_limits<double>::infinity();
        const Vec2 e(cam.f_px * p.x() / p.z() + cam.cx - c.p2.x(), cam.f_px * p.y() / p.z() + cam.cy - c.p2.y());
        cost += c.weight * e.squaredNorm();
    }
    return cost;
}

void check_non_coplanar(std::span<const Correspondence> corrs) {
    Vec3 mean = Vec3::Zero();
    for (const auto& c : corrs) mean += c.p3;
    mean /= static_cast<double>(corrs.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& c : corrs) cov += (c.p3 - mean) * (c.p3 - mean).transpose();
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 ev = eig.eigenvalues();  // ascending
    if (!(ev(2) > 0.0) || ev(0) <= 1e-10 * ev(2))
        throw DegenerateGeometry("3D points are coplanar or collinear (covariance rank < 3)");
}

// Camera-frame [R|t] up to the positive-depth sign, from normalized image coordinates.
std::pair<Mat3, Vec3> dlt_initialize(std::span<const Correspondence> corrs, const CameraModel& cam) {
    const auto n = static_cast<Eigen::Index>(corrs.size());
    std::vector<Vec2> xn(corrs.size());
    for (std::size_t i = 0; i < corrs.size(); ++i)
        xn[i] = Vec2((corrs[i].p2.x() - cam.cx) / cam.f_px, (corrs[i].p2.y() - cam.cy) / cam.f_px);

    // Hartley conditioning: centroid to origin, RMS distance sqrt(2) in 2D and sqrt(3) in 3D.
    Vec2 c2 = Vec2::Zero();
    Vec3 c3 = Vec3::Zero();
    for (std::size_t i = 0; i < corrs.size(); ++i) {
        c2 += xn[i];
        c3 += corrs[i].p3;
    }
    c2 /= static_cast<double>(n);
    c3 /= static_cast<double>(n);
    double r2 = 0.0, r3 = 0.0;
    for (std::size_t i = 0; i < corrs.size(); ++i) {
        r2 += (xn[i] - c2).squaredNorm();
        r3 += (corrs[i].p3 - c3).squaredNorm();
    }
    const double s2 = std::sqrt(2.0) / std::sqrt(r2 / static_cast<double>(n));
    const double s3 = std::sqrt(3.0) / std::sqrt(r3 / static_cast<double>(n));
    if (!std::isfinite(s2) || !std::isfinite(s3)) throw DegenerateGeometry("correspondences collapse to a point");

    Eigen::Matrix3d t2 = Eigen::Matrix3d::Identity();
    t2(0, 0) = t2(1, 1) = s2;
    t2(0, 2) = -s2 * c2.x();
    t2(1, 2) = -s2 * c2.y();
    Eigen::Matrix4d t3 = Eigen::Matrix4d::Identity();
    t3.topLeftCorner<3, 3>() *= s3;
    t3.topRightCorner<3, 1>() = -s3 * c3;

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 12);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& c = corrs[static_cast<std::size_t>(i)];
        const double sw = std::sqrt(c.weight);
        const Eigen::Vector4d xw(s3 * (c.p3.x() - c3.x()), s3 * (c.p3.y() - c3.y()), s3 * (c.p3.z() - c3.z()), 1.0);
        const double u = s2 * (xn[i].x() - c2.x());
        const double v = s2 * (xn[i].y() - c2.y());
        a.block<1, 4>(2 * i, 0) = sw * xw.transpose();
        a.block<1, 4>(2 * i, 8) = -sw * u * xw.transpose();
        a.block<1, 4>(2 * i + 1, 4) = sw * xw.transpose();
        a.block<1, 4>(2 * i + 1, 8) = -sw * v * xw.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd h = svd.matrixV().col(11);
    Mat34 p_norm;
    p_norm << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8), h(9), h(10), h(11);
    Mat34 p = t2.inverse() * p_norm * t3;

    Mat3 m = p.leftCols<3>();
    if (m.determinant() < 0.0) {
        p = -p;
        m = -m;
    }
    const Eigen::JacobiSVD<Mat3> msvd(m);
    const double scale = msvd.singularValues().mean();
    if (!(scale > 0.0) || !std::isfinite(scale)) throw DegenerateGeometry("DLT produced a rank-deficient projection");
    return {nearest_rotation(m), p.col(3) / scale};
}

}  // namespace

double reprojection_cost(std::span<const Correspondence> corrs, const CameraModel& camera, const Pose& pose) {
    return cost_of(corrs, camera, pose.rotation(), pose.t());
}

PnpResult solve_pnp(std::span<const Correspondence> corrs, const CameraModel& camera, const PnpOptions& options) {
    camera.validate();
    for (const auto& c : corrs) {
        if (!(c.weight > 0.0) || !std::isfinite(c.weight)) throw InvalidInput("PnP correspondence weight must be positive");
        if (!c.p3.allFinite() || !c.p2.allFinite()) throw InvalidInput("PnP correspondence is not finite");
    }
    if (corrs.size() < kMinPnpPoints)
        throw InsufficientPoints("PnP needs at least 6 correspondences, got " + std::to_string(corrs.size()));
    check_non_coplanar(corrs);

    auto [r, t] = dlt_initialize(corrs, camera);
    double cost = cost_of(corrs, camera, r, t);

    // A DLT solution that leaves points behind the camera starts LM from the centroid ray instead.
    if (!std::isfinite(cost)) {
        Vec3 c3 = Vec3::Zero();
        Vec2 c2 = Vec2::Zero();
        for (const auto& c : corrs) {
            c3 += c.p3;
            c2 += c.p2;
        }
        c3 /= static_cast<double>(corrs.size());
        c2 /= static_cast<double>(corrs.size());
        const double depth = std::max(t.norm(), 1.0);
        t = Vec3((c2.x() - camera.cx) / camera.f_px * depth, (c2.y() - camera.cy) / camera.f_px * depth, depth) - r * c3;
        cost = cost_of(corrs, camera, r, t);
        if (!std::isfinite(cost)) throw SolverFailure("PnP initialization places points behind the camera");
    }

    PnpResult result;
    result.initial_cost = cost;
    double mu = 1e-3;
    int iter = 0;
    for (; iter < options.max_iterations && cost > 0.0; ++iter) {
        Mat6 jtj = Mat6::Zero();
        Vec6 jtr = Vec6::Zero();
        for (const auto& c : corrs) {
            const Vec3 rp = r * c.p3;
            const Vec3 p = rp + t;
            const double iz = 1.0 / p.z();
            Eigen::Matrix<double, 2, 3> dproj;
            dproj << camera.f_px * iz, 0, -camera.f_px * p.x() * iz * iz, 0, camera.f_px * iz,
                -camera.f_px * p.y() * iz * iz;
            Eigen::Matrix<double, 3, 6> dp;
            dp.leftCols<3>() = -skew(rp);
            dp.rightCols<3>() = Mat3::Identity();
            const Eigen::Matrix<double, 2, 6> j = dproj * dp;
            const Vec2 e(camera.f_px * p.x() * iz + camera.cx - c.p2.x(), camera.f_px * p.y() * iz + camera.cy - c.p2.y());
            jtj.noalias() += c.weight * j.transpose() * j;
            jtr.noalias() += c.weight * j.transpose() * e;
        }

        bool accepted = false;
        bool converged = false;
        while (!accepted) {
            Mat6 lhs = jtj;
            lhs.diagonal() += mu * jtj.diagonal().cwiseMax(1e-12);
            const Vec6 step = lhs.ldlt().solve(-jtr);
            if (!step.allFinite()) throw SolverFailure("PnP normal equations produced a non-finite step");
            const Mat3 r_new = nearest_rotation(so3_exp(step.head<3>()) * r);
            const Vec3 t_new = t + step.tail<3>();
            const double cost_new = cost_of(corrs, camera, r_new, t_new);
            if (std::isnan(cost_new)) throw SolverFailure("PnP cost became NaN");
            if (cost_new < cost) {
                const double rel = (cost - cost_new) / cost;
                r = r_new;
                t = t_new;
                cost = cost_new;
                mu = std::max(mu * 0.1, 1e-12);
                accepted = true;
                converged = step.lpNorm<Eigen::Infinity>() < options.step_tolerance ||
                            rel < options.relative_cost_tolerance;
            } else {
                mu *= 10.0;
                if (mu > 1e16 || step.lpNorm<Eigen::Infinity>() < options.step_tolerance) {
                    converged = true;
                    break;
                }
            }
        }
        if (!std::isfinite(cost)) throw SolverFailure("PnP cost diverged");
        if (converged) {
            ++iter;
            break;
        }
    }

    Vec3 centroid = Vec3::Zero();
    for (const auto& c : corrs) centroid += c.p3;
    centroid /= static_cast<double>(corrs.size());
    if (!((r * centroid + t).z() > 0.0)) throw SolverFailure("PnP solution places the target behind the camera");

    result.pose = Pose(matrix_to_quat(r), t);
    result.final_cost = cost;
    result.iterations = iter;
    double se = 0.0;
    const Mat3 rr = result.pose.rotation();
    for (const auto& c : corrs) {
        const Vec3 p = rr * c.p3 + result.pose.t();
        se += Vec2(camera.f_px * p.x() / p.z() + camera.cx - c.p2.x(), camera.f_px * p.y() / p.z() + camera.cy - c.p2.y())
                  .squaredNorm();
    }
    result.rms_px = std::sqrt(se / static_cast<double>(corrs.size()));
    return result;
}

PnpResult indirect_pose(const HeatmapStack& stack, const TargetModel& model, const CameraModel& camera, double tau) {
    if (static_cast<std::size_t>(stack.channels) != model.keypoints.size())
        throw InvalidInput("heatmap stack has " + std::to_string(stack.channels) + " channels for " +
                           std::to_string(model.keypoints.size()) + " keypoints");
    const auto decoded = decode_heatmaps(stack, tau);
    std::vector<Correspondence> corrs;
    for (std::size_t k = 0; k < decoded.size(); ++k) {
        if (!decoded[k].valid) continue;
        corrs.push_back({model.keypoints[k], decoded[k].uv, decoded[k].confidence});
    }
    if (corrs.size() < kMinPnpPoints)
        throw InsufficientPoints("only " + std::to_string(corrs.size()) + " keypoints above confidence " +
                                 std::to_string(tau));
    return solve_pnp(corrs, camera);
}

}  // namespace mtlpose
