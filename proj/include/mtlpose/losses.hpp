#pragma once

#include <array>
#include <span>
#include <vector>

#include "mtlpose/geometry.hpp"
#include "mtlpose/tensor.hpp"

namespace mtlpose {

/// Center-size box in pixels.
struct BBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 1.0;
    double h = 1.0;

    std::array<double, 4> as_array() const { return {cx, cy, w, h}; }
    static BBox from_array(std::span<const double> v) { return {v[0], v[1], v[2], v[3]}; }
};

struct LossResult {
    double value = 0.0;
    std::vector<double> grad;  // d value / d pred, same layout as the prediction
};

/// Keeps arccos' argument away from 1 so the rotation gradient stays finite.
inline constexpr double kArccosClamp = 1.0 - 1e-7;

/// pred = (q_raw[4], t[3]). q_raw is normalized internally; throws InvalidInput if ||q_raw|| < 1e-8.
LossResult speed_loss(std::span<const double> pred, const Pose& gt);

/// Complete-IoU loss. The trade-off weight alpha is held constant in the gradient.
LossResult ciou_loss(const BBox& pred, const BBox& gt);
/// The alpha a ciou_loss evaluation would freeze for this pair.
double ciou_alpha(const BBox& pred, const BBox& gt);

LossResult pixel_mse(const Tensor& pred, const Tensor& gt);

}  // namespace mtlpose
