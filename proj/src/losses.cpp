#include "mtlpose/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mtlpose/errors.hpp"

namespace mtlpose {

LossResult speed_loss(std::span<const double> pred, const Pose& gt) {
    if (pred.size() != 7) throw InvalidInput("speed_loss expects 7 pose outputs");
    const double range = gt.t().norm();
    if (!(range > 0.0)) throw InvalidInput("speed_loss needs a non-zero ground-truth translation");
    for (double v : pred)
        if (!std::isfinite(v)) throw InvalidInput("speed_loss on non-finite prediction");

    const Eigen::Vector4d q_raw(pred[0], pred[1], pred[2], pred[3]);
    const double n = q_raw.norm();
    if (n < 1e-8) throw InvalidInput("degenerate quaternion: norm below 1e-8");
    const Eigen::Vector4d q_hat = q_raw / n;
    const Eigen::Vector4d q(gt.q().w, gt.q().x, gt.q().y, gt.q().z);
    const double d = q_hat.dot(q);
    const double sign = d < 0.0 ? -1.0 : 1.0;
    const double a = std::abs(d);
    const double a_clamped = std::min(a, kArccosClamp);

    LossResult out;
    out.grad.assign(7, 0.0);
    out.value = 2.0 * std::acos(std::min(a, 1.0));
    // The clamp only bounds the derivative's denominator, so a perfect prediction still scores 0.
    const double dloss_da = -2.0 / std::sqrt(1.0 - a_clamped * a_clamped);
    const Eigen::Vector4d gq = dloss_da * sign * (q - d * q_hat) / n;
    for (int i = 0; i < 4; ++i) out.grad[i] = gq[i];

    const Vec3 diff = Vec3(pred[4], pred[5], pred[6]) - gt.t();
    const double dist = diff.norm();
    out.value += dist / range;
    if (dist > 0.0) {
        const Vec3 g = diff / (dist * range);
        for (int i = 0; i < 3; ++i) out.grad[4 + i] = g[i];
    }
    return out;
}

namespace {

void check_box(const BBox& b, const char* which) {
    if (!(b.w > 0.0 && b.h > 0.0) || !std::isfinite(b.w) || !std::isfinite(b.h) || !std::isfinite(b.cx) ||
        !std::isfinite(b.cy))
        throw InvalidInput(std::string("invalid ") + which + " box: width and height must be positive and finite");
}

double aspect_penalty(const BBox& p, const BBox& g) {
    const double diff = std::atan(g.w / g.h) - std::atan(p.w / p.h);
    return 4.0 / (std::numbers::pi * std::numbers::pi) * diff * diff;
}

double alpha_of(double iou, double v) {
    const double denom = (1.0 - iou) + v;
    return denom > 0.0 ? v / denom : 0.0;
}

}  // namespace

double ciou_alpha(const BBox& pred, const BBox& gt) {
    check_box(pred, "predicted");
    check_box(gt, "ground-truth");
    const double px1 = pred.cx - 0.5 * pred.w, px2 = pred.cx + 0.5 * pred.w;
    const double py1 = pred.cy - 0.5 * pred.h, py2 = pred.cy + 0.5 * pred.h;
    const double gx1 = gt.cx - 0.5 * gt.w, gx2 = gt.cx + 0.5 * gt.w;
    const double gy1 = gt.cy - 0.5 * gt.h, gy2 = gt.cy + 0.5 * gt.h;
    const double iw = std::max(0.0, std::min(px2, gx2) - std::max(px1, gx1));
    const double ih = std::max(0.0, std::min(py2, gy2) - std::max(py1, gy1));
    const double inter = iw * ih;
    const double iou = inter / (pred.w * pred.h + gt.w * gt.h - inter);
    return alpha_of(iou, aspect_penalty(pred, gt));
}

LossResult ciou_loss(const BBox& pred, const BBox& gt) {
    check_box(pred, "predicted");
    check_box(gt, "ground-truth");

    // Edges of both boxes; derivatives of pred edges w.r.t. (cx, cy, w, h) are +-1 and +-1/2.
    const double px1 = pred.cx - 0.5 * pred.w, px2 = pred.cx + 0.5 * pred.w;
    const double py1 = pred.cy - 0.5 * pred.h, py2 = pred.cy + 0.5 * pred.h;
    const double gx1 = gt.cx - 0.5 * gt.w, gx2 = gt.cx + 0.5 * gt.w;
    const double gy1 = gt.cy - 0.5 * gt.h, gy2 = gt.cy + 0.5 * gt.h;

    // d(edge)/d(cx, cy, w, h)
    using G = std::array<double, 4>;
    const G d_px1{1, 0, -0.5, 0}, d_px2{1, 0, 0.5, 0};
    const G d_py1{0, 1, 0, -0.5}, d_py2{0, 1, 0, 0.5};
    const G zero{0, 0, 0, 0};

    const double iw_raw = std::min(px2, gx2) - std::max(px1, gx1);
    const double ih_raw = std::min(py2, gy2) - std::max(py1, gy1);
    const double iw = std::max(0.0, iw_raw);
    const double ih = std::max(0.0, ih_raw);
    G d_iw = zero, d_ih = zero;
    for (int k = 0; k < 4; ++k) {
        if (iw_raw > 0.0) d_iw[k] = (px2 < gx2 ? d_px2[k] : 0.0) - (px1 > gx1 ? d_px1[k] : 0.0);
        if (ih_raw > 0.0) d_ih[k] = (py2 < gy2 ? d_py2[k] : 0.0) - (py1 > gy1 ? d_py1[k] : 0.0);
    }
    const double inter = iw * ih;
    const double uni = pred.w * pred.h + gt.w * gt.h - inter;
    const double iou = inter / uni;

    const double dx = pred.cx - gt.cx, dy = pred.cy - gt.cy;
    const double rho2 = dx * dx + dy * dy;
    const double cw = std::max(px2, gx2) - std::min(px1, gx1);
    const double ch = std::max(py2, gy2) - std::min(py1, gy1);
    const double c2 = cw * cw + ch * ch;

    const double v = aspect_penalty(pred, gt);
    const double alpha = alpha_of(iou, v);

    LossResult out;
    out.value = 1.0 - iou + rho2 / c2 + alpha * v;
    out.grad.assign(4, 0.0);

    const double atan_diff = std::atan(gt.w / gt.h) - std::atan(pred.w / pred.h);
    const double wh2 = pred.w * pred.w + pred.h * pred.h;
    const double k_v = 8.0 / (std::numbers::pi * std::numbers::pi) * atan_diff;
    const G d_v{0, 0, -k_v * pred.h / wh2, k_v * pred.w / wh2};
    const G d_area{0, 0, pred.h, pred.w};
    const G d_rho2{2 * dx, 2 * dy, 0, 0};

    for (int k = 0; k < 4; ++k) {
        const double d_inter = ih * d_iw[k] + iw * d_ih[k];
        const double d_uni = d_area[k] - d_inter;
        const double d_iou = (d_inter * uni - inter * d_uni) / (uni * uni);
        const double d_cw = (px2 > gx2 ? d_px2[k] : 0.0) - (px1 < gx1 ? d_px1[k] : 0.0);
        const double d_ch = (py2 > gy2 ? d_py2[k] : 0.0) - (py1 < gy1 ? d_py1[k] : 0.0);
        const double d_c2 = 2 * cw * d_cw + 2 * ch * d_ch;
        const double d_dist = d_rho2[k] / c2 - rho2 * d_c2 / (c2 * c2);
        out.grad[k] = -d_iou + d_dist + alpha * d_v[k];
    }
    return out;
}

LossResult pixel_mse(const Tensor& pred, const Tensor& gt) {
    if (pred.shape != gt.shape)
        throw InvalidInput("pixel_mse: shape mismatch " + shape_str(pred.shape) + " vs " + shape_str(gt.shape));
    LossResult out;
    const std::size_t n = pred.size();
    if (n == 0) throw InvalidInput("pixel_mse on empty tensors");
    out.grad.resize(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred.data[i] - gt.data[i];
        sum += d * d;
        out.grad[i] = 2.0 * d / static_cast<double>(n);
    }
    out.value = sum / static_cast<double>(n);
    return out;
}

}  // namespace mtlpose
