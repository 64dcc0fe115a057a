#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mtlpose/errors.hpp"
#include "mtlpose/heatmap.hpp"

using namespace mtlpose;

TEST_CASE("peak is 1 at a pixel center") {
    const std::vector<Vec2> kp{{20, 31}};
    const HeatmapStack s = encode_heatmaps(kp, 64, 64, 1.5);
    CHECK(s.at(0, 31, 20) == 1.0);
    for (double v : s.data) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("out-of-frame keypoint gives a zero channel") {
    const std::vector<Vec2> kp{{-5, -5}, {63.6, 10}, {10, 10}};
    const HeatmapStack s = encode_heatmaps(kp, 64, 64, 1.5);
    for (double v : s.channel(0)) CHECK(v == 0.0);
    for (double v : s.channel(1)) CHECK(v == 0.0);
    CHECK(s.at(2, 10, 10) == 1.0);
}

TEST_CASE("channel sum matches the Gaussian integral") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(10.0, 54.0);
    for (int i = 0; i < 20; ++i) {
        const std::vector<Vec2> kp{{u(rng), u(rng)}};
        const HeatmapStack s = encode_heatmaps(kp, 64, 64, 1.5);
        double sum = 0.0;
        for (double v : s.data) sum += v;
        const double expected = 2.0 * std::numbers::pi * 1.5 * 1.5;
        CHECK(std::abs(sum - expected) / expected < 0.02);
    }
}

TEST_CASE("maximum sits at the nearest pixel") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 63.0);
    for (int i = 0; i < 100; ++i) {
        const Vec2 p(u(rng), u(rng));
        const HeatmapStack s = encode_heatmaps(std::vector<Vec2>{p}, 64, 64, 1.5);
        const auto ch = s.channel(0);
        const auto best = static_cast<std::size_t>(std::max_element(ch.begin(), ch.end()) - ch.begin());
        CHECK(static_cast<int>(best % 64) == static_cast<int>(std::floor(p.x() + 0.5)));
        CHECK(static_cast<int>(best / 64) == static_cast<int>(std::floor(p.y() + 0.5)));
    }
}

TEST_CASE("round trip at a grid point is exact") {
    const std::vector<Vec2> kp{{12, 40}};
    const auto d = decode_heatmaps(encode_heatmaps(kp, 64, 64, 1.5));
    CHECK(d[0].uv.x() == 12.0);
    CHECK(d[0].uv.y() == 40.0);
    CHECK(d[0].confidence == 1.0);
    CHECK(d[0].valid);
}

TEST_CASE("subpixel round trip within 0.1 px") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(3.0, 60.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Vec2 p(u(rng), u(rng));
        const auto d = decode_heatmaps(encode_heatmaps(std::vector<Vec2>{p}, 64, 64, 1.5));
        worst = std::max(worst, (d[0].uv - p).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 0.1);
}

TEST_CASE("zero channel decodes invalid") {
    HeatmapStack s(2, 8, 8, 1.5);
    const auto d = decode_heatmaps(s);
    CHECK_FALSE(d[0].valid);
    CHECK(d[0].confidence == 0.0);
}

TEST_CASE("tau gates by peak value") {
    HeatmapStack s(1, 8, 8, 1.5);
    s.channel(0)[3 * 8 + 4] = 0.2;
    CHECK(decode_heatmaps(s, 0.2)[0].valid);
    CHECK_FALSE(decode_heatmaps(s, 0.21)[0].valid);
}

TEST_CASE("ties resolve to the first pixel in row-major order") {
    HeatmapStack s(1, 8, 8, 1.5);
    s.channel(0)[2 * 8 + 6] = 0.7;
    s.channel(0)[5 * 8 + 1] = 0.7;
    const auto d = decode_heatmaps(s);
    CHECK(d[0].uv.x() == 6.0);
    CHECK(d[0].uv.y() == 2.0);
}

TEST_CASE("decode is scale invariant") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(5.0, 58.0), c(0.05, 1.0);
    for (int i = 0; i < 50; ++i) {
        HeatmapStack s = encode_heatmaps(std::vector<Vec2>{{u(rng), u(rng)}}, 64, 64, 1.5);
        const auto a = decode_heatmaps(s);
        const double k = c(rng);
        for (double& v : s.data) v *= k;
        const auto b = decode_heatmaps(s);
        CHECK((a[0].uv - b[0].uv).norm() < 1e-12);
        CHECK(b[0].confidence == doctest::Approx(k * a[0].confidence).epsilon(1e-12));
    }
}

TEST_CASE("encode is translation equivariant") {
    const Vec2 p(20.3, 18.7);
    const HeatmapStack a = encode_heatmaps(std::vector<Vec2>{p}, 64, 64, 1.5);
    const HeatmapStack b = encode_heatmaps(std::vector<Vec2>{p + Vec2(5, -3)}, 64, 64, 1.5);
    for (int r = 3; r < 61; ++r)
        for (int c = 0; c < 59; ++c) CHECK(std::abs(a.at(0, r, c) - b.at(0, r - 3, c + 5)) < 1e-15);
}

TEST_CASE("sigma scales with width") {
    CHECK(heatmap_sigma_for(64) == 1.5);
    CHECK(heatmap_sigma_for(128) == 3.0);
    CHECK_THROWS_AS(encode_heatmaps(std::vector<Vec2>{{1, 1}}, 8, 8, 0.0), InvalidInput);
}
