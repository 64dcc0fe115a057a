#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtlpose/autodiff.hpp"

namespace mtlpose {

enum class Task { Pose, Heatmap, BBox, Segmentation };
inline constexpr std::array<Task, 4> kAllTasks{Task::Pose, Task::Heatmap, Task::BBox, Task::Segmentation};
char task_letter(Task t);

/// Which heads are active. Canonical spelling orders letters P, H, B, S.
struct TaskSet {
    bool pose = false;
    bool heatmap = false;
    bool bbox = false;
    bool segmentation = false;

    /// Letters in any order ("HSB" == "HBS"); throws InvalidConfig on unknown or repeated letters.
    static TaskSet parse(std::string_view letters);
    std::string str() const;
    bool has(Task t) const;
    std::vector<Task> active() const;
    int count() const { return static_cast<int>(active().size()); }
    /// Throws InvalidConfig unless P or H is active.
    void validate() const;

    friend bool operator==(const TaskSet&, const TaskSet&) = default;
};

struct NetworkConfig {
    int input_size = 64;
    std::array<int, 4> trunk_widths{8, 16, 32, 64};
    int keypoints = 18;
    int head_width = 16;
    std::uint64_t seed = 1;
    // Output scaling so a freshly initialized net starts in the right units.
    double xy_scale = 2.0;        // m per unit of raw t_x, t_y
    double depth_scale = 10.0;    // t_z = depth_scale * softplus(raw + depth_shift)
    double depth_shift = 1.0;
    double heatmap_bias_init = -4.0;
    double mask_bias_init = -2.0;
    double min_box_px = 1e-3;

    /// Throws InvalidConfig when the input size is not divisible by 16 or a width is non-positive.
    void validate() const;
    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Per-task output nodes on the tape; absent heads stay empty.
struct NetworkOutputs {
    std::optional<Var> pose;      // [N, 7]: q_raw (4), t (3, m)
    std::optional<Var> heatmaps;  // [N, K, S, S] in (0, 1)
    std::optional<Var> bbox;      // [N, 4]: cx, cy, w, h (px)
    std::optional<Var> mask;      // [N, 1, S, S] in (0, 1)
    Var trunk;                    // [N, C4, S/16, S/16]

    std::optional<Var> output(Task t) const;
};

/// Shared four-stage stride-2 trunk plus independently switchable P/H/B/S heads.
class Network {
public:
    static constexpr const char* kSharedLayer = "trunk.conv4.weight";

    Network(const NetworkConfig& config, const TaskSet& tasks);

    /// images: [N, 1, S, S].
    NetworkOutputs forward(Tape& tape, const Tensor& images);

    const NetworkConfig& config() const { return config_; }
    const TaskSet& tasks() const { return tasks_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    Parameter& parameter(std::string_view name);
    const Parameter& parameter(std::string_view name) const;
    bool has_parameter(std::string_view name) const;
    /// Parameter-name prefixes of the instantiated blocks, e.g. "trunk", "head.P".
    std::vector<std::string> blocks() const;
    void zero_grad();

private:
    void add_conv(std::string_view prefix, int in, int out, std::uint64_t seed, double bias_init = 0.0);
    void add_affine(std::string_view prefix, int in, int out, std::uint64_t seed);
    Var conv(Tape& tape, std::string_view prefix, Var x, int stride);
    Var affine(Tape& tape, std::string_view prefix, Var x);
    Var dense_head(Tape& tape, std::string_view prefix, Var trunk, Var skip, Var image);

    NetworkConfig config_;
    TaskSet tasks_;
    std::vector<Parameter> params_;
};

/// Validates both arguments (TaskSet must contain P or H) and initializes every block
/// from its own seed: trunk parameters do not depend on which heads are active.
Network build_network(const NetworkConfig& config, const TaskSet& tasks);

/// Seed of a named block derived from the network seed (FNV-1a over the label).
std::uint64_t block_seed(std::uint64_t seed, std::string_view label);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update from each parameter's grad buffer.
/// Throws TrainingDiverged naming the first parameter with a non-finite gradient.
void adam_step(std::vector<Parameter>& params, AdamState& state, double lr);

// Checkpoint layout (little-endian):
//   8 bytes "MTLCKPT1", uint32 header length, UTF-8 JSON header
//   {version, config, tasks, step, parameters: [names]}, then per parameter
//   uint32 name length, name, uint64 tensor length, tensor bytes (tensor_io format).
inline constexpr int kCheckpointVersion = 1;

std::string encode_checkpoint(const Network& net, std::int64_t step);
Network decode_checkpoint(std::string_view bytes, std::int64_t* step = nullptr);
void save_checkpoint(const std::filesystem::path& path, const Network& net, std::int64_t step);
Network load_checkpoint(const std::filesystem::path& path, std::int64_t* step = nullptr);

}  // namespace mtlpose
