#include "mtlpose/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mtlpose/errors.hpp"

namespace mtlpose {

namespace {

constexpr int kMaxPoseDraws = 10000;
constexpr double kCentralFraction = 0.8;
constexpr double kBackgroundNoise = 0.08;
constexpr int kStars = 20;
constexpr double kAmbient = 0.1;

void add_quad(TargetModel& m, int a, int b, int c, int d, double albedo) {
    m.triangles.push_back({a, b, c});
    m.triangles.push_back({a, c, d});
    m.albedo.push_back(albedo);
    m.albedo.push_back(albedo);
}

int add_vertex(TargetModel& m, const Vec3& v) {
    m.vertices.push_back(v);
    return static_cast<int>(m.vertices.size()) - 1;
}

}  // namespace

void TargetModel::validate() const {
    if (keypoints.size() != kNumKeypoints)
        throw InvalidInput("target model must have exactly 18 keypoints, has " + std::to_string(keypoints.size()));
    if (keypoint_names.size() != keypoints.size()) throw InvalidInput("keypoint names do not match keypoints");
    if (albedo.size() != triangles.size()) throw InvalidInput("albedo count does not match triangle count");
    for (const auto& tri : triangles)
        for (int idx : tri)
            if (idx < 0 || static_cast<std::size_t>(idx) >= vertices.size())
                throw InvalidInput("triangle index out of range");
    if (bounding_radius() > 1.0) throw InvalidInput("target model exceeds the 1 m bounding sphere");
}

double TargetModel::bounding_radius() const {
    double r = 0.0;
    for (const auto& v : vertices) r = std::max(r, v.norm());
    for (const auto& k : keypoints) r = std::max(r, k.norm());
    return r;
}

TargetModel build_target_model() {
    TargetModel m;
    constexpr double bx = 0.40, by = 0.375, bz = 0.16;

    // Bus: corners indexed by sign bits (x, y, z).
    std::array<int, 8> bus{};
    for (int i = 0; i < 8; ++i) {
        const Vec3 v((i & 1) ? bx : -bx, (i & 2) ? by : -by, (i & 4) ? bz : -bz);
        bus[i] = add_vertex(m, v);
        m.keypoints.push_back(v);
        m.keypoint_names.push_back("bus_" + std::string((i & 1) ? "px" : "nx") + ((i & 2) ? "py" : "ny") +
                                   ((i & 4) ? "pz" : "nz"));
    }
    constexpr double bus_albedo = 0.85;
    add_quad(m, bus[0], bus[1], bus[3], bus[2], bus_albedo);  // -z
    add_quad(m, bus[4], bus[6], bus[7], bus[5], bus_albedo);  // +z
    add_quad(m, bus[0], bus[4], bus[5], bus[1], bus_albedo);  // -y
    add_quad(m, bus[2], bus[3], bus[7], bus[6], bus_albedo);  // +y
    add_quad(m, bus[0], bus[2], bus[6], bus[4], bus_albedo);  // -x
    add_quad(m, bus[1], bus[5], bus[7], bus[3], bus_albedo);  // +x

    // Solar panels in the z = 0 plane; unequal spans break the 180-degree symmetry.
    constexpr double panel_albedo = 0.45;
    const auto panel = [&](double x_in, double x_out, double y_lo, double y_hi, const std::string& tag) {
        const std::array<Vec3, 4> c{Vec3(x_in, y_lo, 0.0), Vec3(x_out, y_lo, 0.0), Vec3(x_out, y_hi, 0.0),
                                    Vec3(x_in, y_hi, 0.0)};
        std::array<int, 4> id{};
        for (int i = 0; i < 4; ++i) {
            id[i] = add_vertex(m, c[i]);
            m.keypoints.push_back(c[i]);
            m.keypoint_names.push_back("panel_" + tag + "_" + std::to_string(i));
        }
        add_quad(m, id[0], id[1], id[2], id[3], panel_albedo);
    };
    panel(bx, 0.75, -0.25, 0.25, "px");
    panel(-bx, -0.68, -0.22, 0.28, "nx");

    // Antennas: thin spikes from the -z face; the tip is a mesh vertex.
    constexpr double antenna_albedo = 1.0;
    const auto antenna = [&](const Vec3& base, const Vec3& tip, const std::string& tag) {
        const int a = add_vertex(m, base - Vec3(0.015, 0.0, 0.0));
        const int b = add_vertex(m, base + Vec3(0.015, 0.0, 0.0));
        const int t = add_vertex(m, tip);
        m.triangles.push_back({a, b, t});
        m.albedo.push_back(antenna_albedo);
        m.keypoints.push_back(tip);
        m.keypoint_names.push_back("antenna_" + tag);
    };
    antenna(Vec3(0.20, 0.25, -bz), Vec3(0.26, 0.33, -0.60), "a");
    antenna(Vec3(-0.15, -0.20, -bz), Vec3(-0.22, -0.27, -0.50), "b");

    m.validate();
    return m;
}

Pose sample_pose(Rng& rng, double d_min, double d_max, const CameraModel& camera) {
    if (!(d_min > 0.0 && d_min < d_max)) throw InvalidInput("sample_pose needs 0 < d_min < d_max");
    camera.validate();
    std::uniform_real_distribution<double> range(d_min, d_max);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double half_u = 0.5 * kCentralFraction * camera.width_px;
    const double half_v = 0.5 * kCentralFraction * camera.height_px;

    const double d = range(rng);
    for (int draw = 0; draw < kMaxPoseDraws; ++draw) {
        Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
        const double n = dir.norm();
        if (!(n > 1e-12) || dir.z() <= 0.0) continue;
        dir /= n;
        const double u = camera.f_px * dir.x() / dir.z() + camera.cx;
        const double v = camera.f_px * dir.y() / dir.z() + camera.cy;
        if (std::abs(u - camera.cx) > half_u || std::abs(v - camera.cy) > half_v) continue;

        Quaternion q;
        double qn = 0.0;
        do {
            q = {gauss(rng), gauss(rng), gauss(rng), gauss(rng)};
            qn = q.norm();
        } while (!(qn > 1e-9));
        return Pose(q, d * dir);
    }
    throw GenerationError("sample_pose: no direction inside the central image region after 10000 draws");
}

BBox PixelBox::center_size() const {
    return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max), static_cast<double>(x_max - x_min + 1),
            static_cast<double>(y_max - y_min + 1)};
}

std::size_t SampleRecord::mask_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void validate_sample(const SampleRecord& s, const CameraModel& camera, const std::string& what) {
    const auto fail = [&](const std::string& msg) { throw CorruptDataset(what + ": " + msg); };
    const std::size_t n = static_cast<std::size_t>(s.height) * s.width;
    if (s.height != camera.height_px || s.width != camera.width_px) fail("image size differs from the camera");
    if (s.image.size() != n || s.mask.size() != n) fail("image or mask has the wrong number of pixels");
    if (s.keypoints_px.size() != kNumKeypoints || s.visibility.size() != kNumKeypoints) fail("expected 18 keypoints");
    for (double v : s.image)
        if (!(v >= 0.0 && v <= 1.0)) fail("image intensity outside [0, 1]");
    int x0 = s.width, y0 = s.height, x1 = -1, y1 = -1;
    for (int r = 0; r < s.height; ++r) {
        for (int c = 0; c < s.width; ++c) {
            const auto m = s.mask[static_cast<std::size_t>(r) * s.width + c];
            if (m > 1) fail("mask is not binary");
            if (m) {
                x0 = std::min(x0, c);
                y0 = std::min(y0, r);
                x1 = std::max(x1, c);
                y1 = std::max(y1, r);
            }
        }
    }
    if (x1 < 0) fail("mask is empty");
    if (!(s.box == PixelBox{x0, y0, x1, y1})) fail("bounding box is not tight on the mask");
    const Mat3 r = s.pose.rotation();
    const TargetModel model = build_target_model();
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        if (s.visibility[k] > 1) fail("visibility flag is not boolean");
        if (!s.visibility[k]) continue;
        if (!camera.in_frame(s.keypoints_px[k])) fail("visible keypoint " + std::to_string(k) + " is out of frame");
        if (!((r * model.keypoints[k] + s.pose.t()).z() > 0.0))
            fail("visible keypoint " + std::to_string(k) + " is behind the camera");
    }
}

RenderOutput rasterize(const CameraModel& camera, const Pose& pose, const TargetModel& model) {
    const int w = camera.width_px;
    const int h = camera.height_px;
    RenderOutput out{std::vector<double>(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity()),
                     std::vector<int>(static_cast<std::size_t>(w) * h, -1)};
    const Mat3 r = pose.rotation();
    std::vector<Vec3> cam_pts(model.vertices.size());
    std::vector<Vec2> px(model.vertices.size());
    for (std::size_t i = 0; i < model.vertices.size(); ++i) {
        cam_pts[i] = r * model.vertices[i] + pose.t();
        if (!(cam_pts[i].z() > 1e-6)) throw DegenerateSample("model vertex " + std::to_string(i) + " is behind the camera");
        px[i] = Vec2(camera.f_px * cam_pts[i].x() / cam_pts[i].z() + camera.cx,
                     camera.f_px * cam_pts[i].y() / cam_pts[i].z() + camera.cy);
    }

    for (std::size_t ti = 0; ti < model.triangles.size(); ++ti) {
        const auto& tri = model.triangles[ti];
        const Vec2& a = px[tri[0]];
        const Vec2& b = px[tri[1]];
        const Vec2& c = px[tri[2]];
        const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
        if (area == 0.0) continue;
        const int c0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x(), b.x(), c.x()}))));
        const int c1 = std::min(w - 1, static_cast<int>(std::floor(std::max({a.x(), b.x(), c.x()}))));
        const int r0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}))));
        const int r1 = std::min(h - 1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}))));
        const double iz0 = 1.0 / cam_pts[tri[0]].z();
        const double iz1 = 1.0 / cam_pts[tri[1]].z();
        const double iz2 = 1.0 / cam_pts[tri[2]].z();
        for (int row = r0; row <= r1; ++row) {
            for (int col = c0; col <= c1; ++col) {
                const double x = col, y = row;
                // Edge functions opposite each vertex; all share the sign of the area when inside.
                const double e0 = (c.x() - b.x()) * (y - b.y()) - (c.y() - b.y()) * (x - b.x());
                const double e1 = (a.x() - c.x()) * (y - c.y()) - (a.y() - c.y()) * (x - c.x());
                const double e2 = (b.x() - a.x()) * (y - a.y()) - (b.y() - a.y()) * (x - a.x());
                const bool inside = area > 0.0 ? (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0)
                                               : (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);
                if (!inside) continue;
                // 1/z is affine in screen space.
                const double inv_z = (e0 * iz0 + e1 * iz1 + e2 * iz2) / area;
                const double z = 1.0 / inv_z;
                const std::size_t idx = static_cast<std::size_t>(row) * w + col;
                if (z < out.depth[idx]) {
                    out.depth[idx] = z;
                    out.triangle[idx] = static_cast<int>(ti);
                }
            }
        }
    }
    return out;
}

SampleRecord render(const CameraModel& camera, const Pose& pose, const TargetModel& model, Rng& rng) {
    const int w = camera.width_px;
    const int h = camera.height_px;
    const RenderOutput raster = rasterize(camera, pose, model);

    SampleRecord s;
    s.height = h;
    s.width = w;
    s.pose = pose;
    s.mask.assign(raster.depth.size(), 0);
    for (std::size_t i = 0; i < raster.depth.size(); ++i) s.mask[i] = std::isfinite(raster.depth[i]) ? 1 : 0;
    if (s.mask_count() == 0) throw DegenerateSample("target silhouette is empty");

    // Lighting: direction of travel uniform on the sphere, intensity in [0.4, 1].
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> intensity_dist(0.4, 1.0);
    std::uniform_real_distribution<double> noise(0.0, kBackgroundNoise);
    std::uniform_real_distribution<double> star_value(0.5, 1.0);
    std::uniform_int_distribution<int> star_pixel(0, w * h - 1);
    Vec3 light(gauss(rng), gauss(rng), gauss(rng));
    light.normalize();
    const double intensity = intensity_dist(rng);

    const Mat3 r = pose.rotation();
    std::vector<double> shade(model.triangles.size());
    for (std::size_t ti = 0; ti < model.triangles.size(); ++ti) {
        const auto& tri = model.triangles[ti];
        const Vec3 p0 = r * model.vertices[tri[0]] + pose.t();
        const Vec3 p1 = r * model.vertices[tri[1]] + pose.t();
        const Vec3 p2 = r * model.vertices[tri[2]] + pose.t();
        Vec3 n = (p1 - p0).cross(p2 - p0);
        if (n.norm() > 0.0) n.normalize();
        if (n.dot(-p0) < 0.0) n = -n;  // face the camera
        const double lambert = std::max(0.0, -n.dot(light));
        shade[ti] = std::clamp(model.albedo[ti] * (kAmbient + intensity * lambert), 0.0, 1.0);
    }

    s.image.resize(raster.depth.size());
    for (auto& v : s.image) v = noise(rng);
    for (int i = 0; i < kStars; ++i) s.image[static_cast<std::size_t>(star_pixel(rng))] = star_value(rng);
    for (std::size_t i = 0; i < s.image.size(); ++i)
        if (raster.triangle[i] >= 0) s.image[i] = shade[static_cast<std::size_t>(raster.triangle[i])];

    s.box = {w, h, -1, -1};
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            if (!s.mask[static_cast<std::size_t>(row) * w + col]) continue;
            s.box.x_min = std::min(s.box.x_min, col);
            s.box.y_min = std::min(s.box.y_min, row);
            s.box.x_max = std::max(s.box.x_max, col);
            s.box.y_max = std::max(s.box.y_max, row);
        }
    }

    s.keypoints_px = project(camera, pose, model.keypoints);
    s.visibility.assign(kNumKeypoints, 0);
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        const Vec2& uv = s.keypoints_px[k];
        if (!camera.in_frame(uv)) continue;
        const double depth = (r * model.keypoints[k] + pose.t()).z();
        const auto col = static_cast<int>(std::floor(uv.x() + 0.5));
        const auto row = static_cast<int>(std::floor(uv.y() + 0.5));
        const double front = raster.depth[static_cast<std::size_t>(row) * w + col];
        const double tolerance = std::max(0.02, 0.01 * depth);
        s.visibility[k] = depth <= front + tolerance ? 1 : 0;
    }
    return s;
}

}  // namespace mtlpose
