#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtlpose/geometry.hpp"
#include "mtlpose/scene.hpp"

namespace mtlpose {

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr double kPaperFovDeg = 35.0;
inline constexpr double kPaperFocalLengthMm = 39.47;
inline constexpr double kPaperPixelPitchUm = 5.86;

enum class Split { Train, Val, Test };
const char* split_name(Split s);

struct SplitCounts {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;

    std::size_t total() const { return train + val + test; }
    friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

/// 70/20/10 with floor for val and test; train takes the remainder.
SplitCounts split_counts(std::size_t n);

struct DatasetConfig {
    std::filesystem::path out;
    std::size_t n = 2000;
    std::uint64_t seed = 1;
    int image_size = 64;
    double d_min = 1.0;
    double d_max = 25.0;
    double fov_deg = kPaperFovDeg;
    unsigned threads = 0;  // 0: hardware concurrency
};

struct SampleEntry {
    std::size_t index = 0;
    std::string image;  // paths relative to the dataset root
    std::string mask;
    std::string meta;
    std::uint32_t image_crc = 0;
    std::uint32_t mask_crc = 0;
    std::uint32_t meta_crc = 0;
};

struct DatasetManifest {
    int version = kDatasetFormatVersion;
    std::uint64_t seed = 0;
    CameraModel camera;
    double fov_deg = kPaperFovDeg;
    int image_size = 64;
    double d_min = 1.0;
    double d_max = 25.0;
    double heatmap_sigma_px = 1.5;
    std::string model_name;
    int model_version = 0;
    std::size_t model_keypoints = 0;
    SplitCounts counts;
    std::vector<SampleEntry> train, val, test;

    const std::vector<SampleEntry>& entries(Split s) const;
};

struct Dataset {
    DatasetManifest manifest;
    TargetModel model;
    std::vector<SampleRecord> train, val, test;

    const std::vector<SampleRecord>& split(Split s) const;
};

CameraModel dataset_camera(int image_size, double fov_deg);

/// Deterministic sample for a dataset index: its generator is seeded with seed ^ index.
SampleRecord generate_sample(std::uint64_t seed, std::size_t index, const CameraModel& camera, const TargetModel& model,
                             double d_min, double d_max);

/// Writes manifest.json plus per-sample tensors and metadata under config.out.
/// Output is staged in a sibling directory and only moved into place on success.
DatasetManifest generate_dataset(const DatasetConfig& config);

/// Accepts the dataset directory or its manifest.json. Verifies checksums, shapes and
/// record invariants; throws CorruptDataset naming the offending sample.
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace mtlpose
