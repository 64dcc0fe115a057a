#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtlpose/geometry.hpp"

namespace mtlpose {

inline constexpr double kDefaultHeatmapSigma = 1.5;   // px at 64x64
inline constexpr double kDefaultConfidenceTau = 0.2;

/// Channel-major stack of per-keypoint maps, values in [0, 1].
struct HeatmapStack {
    int channels = 0;
    int height = 0;
    int width = 0;
    double sigma_px = kDefaultHeatmapSigma;
    std::vector<double> data;

    HeatmapStack() = default;
    HeatmapStack(int channels, int height, int width, double sigma_px);

    std::span<double> channel(int k);
    std::span<const double> channel(int k) const;
    double at(int k, int row, int col) const { return data[(static_cast<std::size_t>(k) * height + row) * width + col]; }
};

struct DecodedKeypoint {
    Vec2 uv = Vec2::Zero();
    double confidence = 0.0;
    bool valid = false;
};

/// Sigma scaled linearly with image width from the 64 px reference.
double heatmap_sigma_for(int image_width_px);

/// Gaussian maps sampled at pixel centers; keypoints whose nearest pixel is outside the image give a zero channel.
HeatmapStack encode_heatmaps(std::span<const Vec2> keypoints_px, int height, int width, double sigma_px);

/// Argmax peak (ties: smallest row, then column) refined by a 3-point parabola per axis.
std::vector<DecodedKeypoint> decode_heatmaps(const HeatmapStack& stack, double tau = kDefaultConfidenceTau);

}  // namespace mtlpose
