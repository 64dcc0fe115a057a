#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mtlpose/geometry.hpp"
#include "mtlpose/losses.hpp"

namespace oracles {

using mtlpose::BBox;
using mtlpose::Mat3;
using mtlpose::Quaternion;

// Rotation angle from the trace of the relative rotation matrix.
inline double trace_error(const Quaternion& a, const Quaternion& b) {
    const Mat3 m = mtlpose::quat_to_matrix(a) * mtlpose::quat_to_matrix(b).transpose();
    return std::acos(std::clamp((m.trace() - 1.0) / 2.0, -1.0, 1.0));
}

// Corner-arithmetic C-IoU with a caller-supplied alpha.
inline double ciou(const BBox& p, const BBox& g, double alpha) {
    constexpr double pi = std::numbers::pi;
    const double ax1 = p.cx - p.w / 2, ax2 = p.cx + p.w / 2, ay1 = p.cy - p.h / 2, ay2 = p.cy + p.h / 2;
    const double bx1 = g.cx - g.w / 2, bx2 = g.cx + g.w / 2, by1 = g.cy - g.h / 2, by2 = g.cy + g.h / 2;
    const double ix = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
    const double iy = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
    const double inter = ix * iy;
    const double iou = inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter);
    const double ex = std::max(ax2, bx2) - std::min(ax1, bx1);
    const double ey = std::max(ay2, by2) - std::min(ay1, by1);
    const double rho2 = std::pow(p.cx - g.cx, 2) + std::pow(p.cy - g.cy, 2);
    const double v = 4 / (pi * pi) * std::pow(std::atan(g.w / g.h) - std::atan(p.w / p.h), 2);
    return 1 - iou + rho2 / (ex * ex + ey * ey) + alpha * v;
}

}  // namespace oracles
