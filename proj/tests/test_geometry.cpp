#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "mtlpose/errors.hpp"
#include "mtlpose/geometry.hpp"
#include "mtlpose/scene.hpp"
#include "oracles.hpp"

using namespace mtlpose;
using std::numbers::pi;

namespace {

Quaternion random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

}  // namespace

TEST_CASE("quat_to_matrix special cases") {
    CHECK(quat_to_matrix(Quaternion::identity()).isApprox(Mat3::Identity(), 0.0));
    const Mat3 half = quat_to_matrix({0, 0, 0, 1});
    CHECK((half - Eigen::Vector3d(-1, -1, 1).asDiagonal().toDenseMatrix()).norm() == 0.0);
}

TEST_CASE("quat_to_matrix returns a rotation") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const Mat3 m = quat_to_matrix(random_unit(rng));
        CHECK((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(m.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("quat_to_matrix rejects non-unit input") {
    CHECK_THROWS_AS(quat_to_matrix({1.1, 0, 0, 0}), InvalidInput);
    CHECK_NOTHROW(quat_to_matrix({1.0 + 5e-7, 0, 0, 0}));
}

TEST_CASE("matrix_to_quat inverts quat_to_matrix up to sign") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 500; ++i) {
        const Quaternion q = random_unit(rng);
        const Quaternion r = matrix_to_quat(quat_to_matrix(q));
        const double s = q.dot(r) < 0 ? -1.0 : 1.0;
        CHECK(std::abs(q.w - s * r.w) < 1e-9);
        CHECK(std::abs(q.x - s * r.x) < 1e-9);
        CHECK(std::abs(q.y - s * r.y) < 1e-9);
        CHECK(std::abs(q.z - s * r.z) < 1e-9);
    }
}

TEST_CASE("Hamilton product composes rotations") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 50; ++i) {
        const Quaternion a = random_unit(rng), b = random_unit(rng);
        const Mat3 ab = quat_to_matrix((a * b).normalized());
        CHECK((ab - quat_to_matrix(a) * quat_to_matrix(b)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("Pose keeps a unit quaternion") {
    const Pose p({2, 0, 0, 0}, {0, 0, 1});
    CHECK(p.q().norm() == doctest::Approx(1.0).epsilon(1e-12));
    std::mt19937_64 rng(1);
    const Quaternion q = random_unit(rng);
    const Pose exact(q, {1, 2, 3});
    CHECK(exact.q().w == q.w);
    CHECK(exact.q().z == q.z);
    CHECK_THROWS_AS(Pose({0, 0, 0, 0}, {0, 0, 1}), InvalidInput);
    CHECK_THROWS_AS(Pose(Quaternion::identity(), {0, 0, NAN}), InvalidInput);
}

TEST_CASE("CameraModel from field of view") {
    const CameraModel c = CameraModel::from_fov(1024, 1024, 35.0);
    CHECK(c.f_px == doctest::Approx(1024.0 / (2.0 * std::tan(17.5 * pi / 180.0))));
    CHECK(c.cx == 512.0);
    CHECK(c.cy == 512.0);
    CameraModel bad = c;
    bad.cx = 1024.0;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = c;
    bad.f_px = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("project examples") {
    CameraModel cam{512, 512, 800.0, 256.0, 256.0};
    const Pose p(Quaternion::identity(), {0, 0, 10});
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}};
    const auto uv = project(cam, p, pts);
    CHECK(uv[0].x() == 256.0);
    CHECK(uv[0].y() == 256.0);
    CHECK(uv[1].x() == 336.0);
    CHECK(uv[1].y() == 256.0);
}

TEST_CASE("project reports the point behind the camera") {
    CameraModel cam{64, 64, 100.0, 32.0, 32.0};
    const Pose p(Quaternion::identity(), {0, 0, 1});
    const std::vector<Vec3> pts{{0, 0, 0}, {0, 0, -2}, {0, 0, 0}};
    try {
        project(cam, p, pts);
        FAIL("expected BehindCamera");
    } catch (const BehindCamera& e) {
        CHECK(e.index() == 1);
    }
}

TEST_CASE("project matches a homogeneous 4x4 pipeline") {
    const TargetModel model = build_target_model();
    const CameraModel cam = CameraModel::from_fov(64, 64, 35.0);
    std::mt19937_64 rng(11);
    for (int i = 0; i < 100; ++i) {
        const Pose pose = sample_pose(rng, 1.0, 25.0, cam);
        Eigen::Matrix4d ext = Eigen::Matrix4d::Identity();
        ext.topLeftCorner<3, 3>() = quat_to_matrix(pose.q());
        ext.topRightCorner<3, 1>() = pose.t();
        Eigen::Matrix<double, 3, 4> k = Eigen::Matrix<double, 3, 4>::Zero();
        k(0, 0) = cam.f_px;
        k(1, 1) = cam.f_px;
        k(0, 2) = cam.cx;
        k(1, 2) = cam.cy;
        k(2, 2) = 1.0;
        const auto uv = project(cam, pose, model.keypoints);
        for (std::size_t j = 0; j < model.keypoints.size(); ++j) {
            const Eigen::Vector3d h = k * ext * model.keypoints[j].homogeneous();
            CHECK(std::abs(uv[j].x() - h.x() / h.z()) < 1e-9);
            CHECK(std::abs(uv[j].y() - h.y() / h.z()) < 1e-9);
        }
    }
}

TEST_CASE("project is equivariant to a shared translation") {
    const CameraModel cam = CameraModel::from_fov(64, 64, 35.0);
    std::mt19937_64 rng(2);
    const Pose pose = sample_pose(rng, 5.0, 10.0, cam);
    const Vec3 shift(0.3, -0.2, 0.1);
    const std::vector<Vec3> pts{{0.1, 0.2, 0.3}, {-0.4, 0.0, 0.2}};
    std::vector<Vec3> moved;
    for (const auto& p : pts) moved.push_back(p + shift);
    const Pose back(pose.q(), pose.t() - pose.rotation() * shift);
    const auto a = project(cam, pose, pts);
    const auto b = project(cam, back, moved);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i] - b[i]).norm() < 1e-9);
}

TEST_CASE("translation_error examples") {
    CHECK(translation_error({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(translation_error({0, 0, 4}, {0, 0, 1}) == 3.0);
    CHECK(translation_error({3, 4, 0}, {0, 0, 0}) == 5.0);
    CHECK(translation_error({1, 5, 2}, {0, 1, 7}) == translation_error({0, 1, 7}, {1, 5, 2}));
    CHECK_THROWS_AS(translation_error({NAN, 0, 0}, {0, 0, 0}), InvalidInput);
}

TEST_CASE("rotation_error examples") {
    const Quaternion id = Quaternion::identity();
    CHECK(rotation_error(id, id) == 0.0);
    CHECK(rotation_error(id, {0, 0, 0, 1}) == doctest::Approx(pi).epsilon(1e-15));
    CHECK(rotation_error(id, Quaternion::from_axis_angle({1, 0, 0}, pi / 2)) == doctest::Approx(pi / 2).epsilon(1e-15));
}

TEST_CASE("rotation_error properties") {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 200; ++i) {
        const Quaternion a = random_unit(rng), b = random_unit(rng);
        CHECK(rotation_error(a, -a) == 0.0);
        CHECK(std::abs(rotation_error(a, b) - rotation_error(b, a)) < 1e-12);
        const double e = rotation_error(a, b);
        CHECK(e >= 0.0);
        CHECK(e <= pi);
        CHECK(std::abs(e - oracles::trace_error(a, b)) < 1e-9);
    }
}

TEST_CASE("speed_score examples") {
    const Quaternion id = Quaternion::identity();
    const Pose gt(id, {0, 0, 10});
    CHECK(speed_score(gt, gt) == 0.0);
    CHECK(speed_score(Pose(id, {0, 0, 10.5}), gt) == doctest::Approx(0.05).epsilon(1e-15));
    const Quaternion rx = Quaternion::from_axis_angle({1, 0, 0}, pi / 2);
    CHECK(speed_score(Pose(rx, {0, 0, 5}), Pose(id, {0, 0, 5})) == doctest::Approx(pi / 2).epsilon(1e-15));
    CHECK_THROWS_AS(speed_score(gt, Pose(id, {0, 0, 0})), InvalidInput);
}

TEST_CASE("speed_score ignores quaternion sign") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 100; ++i) {
        const Quaternion a = random_unit(rng), b = random_unit(rng);
        const Vec3 t(0.1, 0.2, 8.0), u(0.0, -0.1, 7.5);
        const double s = speed_score(Pose(a, t), Pose(b, u));
        CHECK(s == speed_score(Pose(-a, t), Pose(-b, u)));
        CHECK(s == speed_score(Pose(-a, t), Pose(b, u)));
    }
}
