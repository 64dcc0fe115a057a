#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtlpose/geometry.hpp"
#include "mtlpose/losses.hpp"

namespace mtlpose {

inline constexpr std::size_t kNumKeypoints = 18;
inline constexpr const char* kTargetModelName = "desk-sat";
inline constexpr int kTargetModelVersion = 1;

/// Stand-in satellite: cuboid bus, two solar-panel quads and two antenna spikes.
struct TargetModel {
    std::string name = kTargetModelName;
    int version = kTargetModelVersion;
    std::vector<Vec3> vertices;                // body frame, m
    std::vector<std::array<int, 3>> triangles;
    std::vector<double> albedo;                // one per triangle
    std::vector<Vec3> keypoints;               // exactly 18
    std::vector<std::string> keypoint_names;

    /// Throws InvalidInput when a type invariant does not hold.
    void validate() const;
    double bounding_radius() const;
};

TargetModel build_target_model();

using Rng = std::mt19937_64;

/// Range uniform in [d_min, d_max], attitude uniform on SO(3), target center inside the
/// central 80% of the image. Throws GenerationError after 10,000 rejected draws.
Pose sample_pose(Rng& rng, double d_min, double d_max, const CameraModel& camera);

/// Inclusive pixel extents of the mask's on-pixels.
struct PixelBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    /// Tight box around the covered pixel squares, in center-size form.
    BBox center_size() const;
    friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

struct SampleRecord {
    int height = 0;
    int width = 0;
    std::vector<double> image;         // row-major, [0, 1]
    std::vector<std::uint8_t> mask;    // row-major, 0/1
    Pose pose;
    std::vector<Vec2> keypoints_px;    // may lie outside the image
    std::vector<std::uint8_t> visibility;
    PixelBox box;

    BBox bbox() const { return box.center_size(); }
    std::size_t mask_count() const;
};

/// Throws CorruptDataset (prefixed with `what`) if any record invariant fails.
void validate_sample(const SampleRecord& s, const CameraModel& camera, const std::string& what);

struct RenderOutput {
    std::vector<double> depth;   // +inf where the target is absent
    std::vector<int> triangle;   // -1 where absent
};

/// Z-buffered silhouette of the model; pixel centers are sampled.
RenderOutput rasterize(const CameraModel& camera, const Pose& pose, const TargetModel& model);

/// Shaded target over a noisy star field, plus mask, box, keypoints and visibility.
/// Throws DegenerateSample when the silhouette is empty or a vertex is behind the camera.
SampleRecord render(const CameraModel& camera, const Pose& pose, const TargetModel& model, Rng& rng);

}  // namespace mtlpose
