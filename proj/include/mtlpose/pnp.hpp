#pragma once

#include <span>
#include <vector>

#include "mtlpose/geometry.hpp"
#include "mtlpose/heatmap.hpp"

namespace mtlpose {

struct TargetModel;

struct Correspondence {
    Vec3 p3 = Vec3::Zero();  // body frame, m
    Vec2 p2 = Vec2::Zero();  // px
    double weight = 1.0;     // confidence, must be > 0
};

struct PnpOptions {
    int max_iterations = 100;
    double step_tolerance = 1e-10;           // infinity norm of the LM update
    double relative_cost_tolerance = 1e-12;
};

struct PnpResult {
    Pose pose;
    double rms_px = 0.0;        // unweighted RMS reprojection error
    double initial_cost = 0.0;  // weighted squared reprojection error after DLT
    double final_cost = 0.0;    // same, after Levenberg-Marquardt
    int iterations = 0;
};

inline constexpr std::size_t kMinPnpPoints = 6;

/// DLT on normalized coordinates, projected onto SO(3), then Levenberg-Marquardt on the
/// confidence-weighted squared reprojection error.
/// Throws InsufficientPoints (< 6), DegenerateGeometry (coplanar/collinear), SolverFailure.
PnpResult solve_pnp(std::span<const Correspondence> corrs, const CameraModel& camera, const PnpOptions& options = {});

/// Weighted sum of squared reprojection errors; points behind the camera cost +inf.
double reprojection_cost(std::span<const Correspondence> corrs, const CameraModel& camera, const Pose& pose);

/// decode -> gate by tau -> solve_pnp with confidences as weights.
PnpResult indirect_pose(const HeatmapStack& stack, const TargetModel& model, const CameraModel& camera,
                        double tau = kDefaultConfidenceTau);

}  // namespace mtlpose
