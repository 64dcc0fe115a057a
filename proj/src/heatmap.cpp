#include "mtlpose/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "mtlpose/errors.hpp"

namespace mtlpose {

namespace {

bool nearest_pixel_inside(const Vec2& p, int height, int width) {
    return p.x() >= -0.5 && p.x() < width - 0.5 && p.y() >= -0.5 && p.y() < height - 0.5;
}

// Vertex of the parabola through (-1, lo), (0, mid), (1, hi), clamped to half a pixel.
double parabola_offset(double lo, double mid, double hi) {
    const double curvature = lo - 2.0 * mid + hi;
    if (!(curvature < 0.0)) return 0.0;
    return std::clamp(0.5 * (lo - hi) / curvature, -0.5, 0.5);
}

}  // namespace

HeatmapStack::HeatmapStack(int channels_, int height_, int width_, double sigma)
    : channels(channels_), height(height_), width(width_), sigma_px(sigma),
      data(static_cast<std::size_t>(channels_) * height_ * width_, 0.0) {}

std::span<double> HeatmapStack::channel(int k) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    return {data.data() + k * plane, plane};
}

std::span<const double> HeatmapStack::channel(int k) const {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    return {data.data() + k * plane, plane};
}

double heatmap_sigma_for(int image_width_px) { return kDefaultHeatmapSigma * image_width_px / 64.0; }

HeatmapStack encode_heatmaps(std::span<const Vec2> keypoints_px, int height, int width, double sigma_px) {
    if (!(sigma_px > 0.0)) throw InvalidInput("heatmap sigma must be positive");
    if (height <= 0 || width <= 0) throw InvalidInput("heatmap size must be positive");
    HeatmapStack stack(static_cast<int>(keypoints_px.size()), height, width, sigma_px);
    const double inv_two_var = 1.0 / (2.0 * sigma_px * sigma_px);
    for (int k = 0; k < stack.channels; ++k) {
        const Vec2& p = keypoints_px[k];
        if (!nearest_pixel_inside(p, height, width)) continue;
        auto ch = stack.channel(k);
        for (int r = 0; r < height; ++r) {
            const double dv = r - p.y();
            for (int c = 0; c < width; ++c) {
                const double du = c - p.x();
                ch[static_cast<std::size_t>(r) * width + c] = std::exp(-(du * du + dv * dv) * inv_two_var);
            }
        }
    }
    return stack;
}

std::vector<DecodedKeypoint> decode_heatmaps(const HeatmapStack& stack, double tau) {
    std::vector<DecodedKeypoint> out(stack.channels);
    const int h = stack.height;
    const int w = stack.width;
    for (int k = 0; k < stack.channels; ++k) {
        auto ch = stack.channel(k);
        // Strict '>' keeps the first maximum in row-major order.
        std::size_t best = 0;
        for (std::size_t i = 1; i < ch.size(); ++i)
            if (ch[i] > ch[best]) best = i;
        const double peak = ch.empty() ? 0.0 : ch[best];
        DecodedKeypoint& kp = out[k];
        if (!(peak > 0.0)) continue;
        const int r = static_cast<int>(best / w);
        const int c = static_cast<int>(best % w);
        double du = 0.0;
        double dv = 0.0;
        if (c > 0 && c + 1 < w) du = parabola_offset(stack.at(k, r, c - 1), peak, stack.at(k, r, c + 1));
        if (r > 0 && r + 1 < h) dv = parabola_offset(stack.at(k, r - 1, c), peak, stack.at(k, r + 1, c));
        kp.uv = Vec2(c + du, r + dv);
        kp.confidence = peak;
        kp.valid = peak >= tau;
    }
    return out;
}

}  // namespace mtlpose
