#include "mtlpose/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include <json.hpp>

#include "mtlpose/errors.hpp"
#include "mtlpose/tensor_io.hpp"

namespace mtlpose {

using nlohmann::json;

char task_letter(Task t) {
    switch (t) {
        case Task::Pose: return 'P';
        case Task::Heatmap: return 'H';
        case Task::BBox: return 'B';
        case Task::Segmentation: return 'S';
    }
    return '?';
}

TaskSet TaskSet::parse(std::string_view letters) {
    TaskSet ts;
    for (char ch : letters) {
        bool* flag = nullptr;
        switch (ch) {
            case 'P': case 'p': flag = &ts.pose; break;
            case 'H': case 'h': flag = &ts.heatmap; break;
            case 'B': case 'b': flag = &ts.bbox; break;
            case 'S': case 's': flag = &ts.segmentation; break;
            default: throw InvalidConfig("unknown task letter '" + std::string(1, ch) + "' in " + std::string(letters));
        }
        if (*flag) throw InvalidConfig("task letter repeated in " + std::string(letters));
        *flag = true;
    }
    return ts;
}

bool TaskSet::has(Task t) const {
    switch (t) {
        case Task::Pose: return pose;
        case Task::Heatmap: return heatmap;
        case Task::BBox: return bbox;
        case Task::Segmentation: return segmentation;
    }
    return false;
}

std::vector<Task> TaskSet::active() const {
    std::vector<Task> out;
    for (Task t : kAllTasks)
        if (has(t)) out.push_back(t);
    return out;
}

std::string TaskSet::str() const {
    std::string s;
    for (Task t : active()) s.push_back(task_letter(t));
    return s;
}

void TaskSet::validate() const {
    if (!pose && !heatmap)
        throw InvalidConfig("task set '" + str() + "' must include pose (P) or heatmap (H) estimation");
}

void NetworkConfig::validate() const {
    if (input_size < 16 || input_size % 16 != 0) throw InvalidConfig("input size must be a positive multiple of 16");
    for (int w : trunk_widths)
        if (w <= 0) throw InvalidConfig("trunk widths must be positive");
    if (keypoints <= 0 || head_width <= 0) throw InvalidConfig("keypoints and head width must be positive");
    if (!(depth_scale > 0.0) || !(xy_scale > 0.0) || !(min_box_px > 0.0)) throw InvalidConfig("output scales must be positive");
}

std::optional<Var> NetworkOutputs::output(Task t) const {
    switch (t) {
        case Task::Pose: return pose;
        case Task::Heatmap: return heatmaps;
        case Task::BBox: return bbox;
        case Task::Segmentation: return mask;
    }
    return std::nullopt;
}

std::uint64_t block_seed(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h ^ (seed * 0x9E3779B97F4A7C15ull);
}

Network::Network(const NetworkConfig& config, const TaskSet& tasks) : config_(config), tasks_(tasks) {
    config_.validate();
    tasks_.validate();
    const auto& c = config_.trunk_widths;
    // Reserve so Parameter addresses stay stable for the tape.
    params_.reserve(64);
    add_conv("trunk.conv1", 1, c[0], block_seed(config_.seed, "trunk.conv1"));
    add_conv("trunk.conv2", c[0], c[1], block_seed(config_.seed, "trunk.conv2"));
    add_conv("trunk.conv3", c[1], c[2], block_seed(config_.seed, "trunk.conv3"));
    add_conv("trunk.conv4", c[2], c[3], block_seed(config_.seed, "trunk.conv4"));

    if (tasks_.pose) {
        add_affine("head.P.q", c[3], 4, block_seed(config_.seed, "head.P.q"));
        add_affine("head.P.xy", c[3], 2, block_seed(config_.seed, "head.P.xy"));
        add_affine("head.P.z", c[3], 1, block_seed(config_.seed, "head.P.z"));
    }
    const auto add_dense = [&](const std::string& prefix, int out, double bias) {
        add_conv(prefix + ".conv1", c[3] + c[1], config_.head_width, block_seed(config_.seed, prefix + ".conv1"));
        add_conv(prefix + ".conv2", config_.head_width + 1, out, block_seed(config_.seed, prefix + ".conv2"), bias);
    };
    if (tasks_.heatmap) add_dense("head.H", config_.keypoints, config_.heatmap_bias_init);
    if (tasks_.bbox) {
        add_affine("head.B.center", c[3], 2, block_seed(config_.seed, "head.B.center"));
        add_affine("head.B.size", c[3], 2, block_seed(config_.seed, "head.B.size"));
    }
    if (tasks_.segmentation) add_dense("head.S", 1, config_.mask_bias_init);
}

void Network::add_conv(std::string_view prefix, int in, int out, std::uint64_t seed, double bias_init) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in * 9.0)));
    Tensor w({out, in, 3, 3});
    for (auto& v : w.data) v = dist(rng);
    params_.emplace_back(std::string(prefix) + ".weight", std::move(w));
    params_.emplace_back(std::string(prefix) + ".bias", Tensor({out}, bias_init));
}

void Network::add_affine(std::string_view prefix, int in, int out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / in));
    Tensor w({in, out});
    for (auto& v : w.data) v = dist(rng);
    params_.emplace_back(std::string(prefix) + ".weight", std::move(w));
    params_.emplace_back(std::string(prefix) + ".bias", Tensor({out}, 0.0));
}

Parameter& Network::parameter(std::string_view name) {
    for (auto& p : params_)
        if (p.name == name) return p;
    throw InvalidRequest("no parameter named " + std::string(name));
}

const Parameter& Network::parameter(std::string_view name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    throw InvalidRequest("no parameter named " + std::string(name));
}

bool Network::has_parameter(std::string_view name) const {
    return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

std::vector<std::string> Network::blocks() const {
    std::vector<std::string> out;
    for (const auto& p : params_) {
        const auto first = p.name.find('.');
        std::string block = p.name.substr(0, first);
        if (block == "head") block = p.name.substr(0, p.name.find('.', first + 1));
        if (std::find(out.begin(), out.end(), block) == out.end()) out.push_back(block);
    }
    return out;
}

void Network::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Var Network::conv(Tape& tape, std::string_view prefix, Var x, int stride) {
    const std::string p(prefix);
    return tape.conv2d(x, tape.parameter(parameter(p + ".weight")), tape.parameter(parameter(p + ".bias")), stride);
}

Var Network::affine(Tape& tape, std::string_view prefix, Var x) {
    const std::string p(prefix);
    return tape.add(tape.matmul(x, tape.parameter(parameter(p + ".weight"))), tape.parameter(parameter(p + ".bias")));
}

Var Network::dense_head(Tape& tape, std::string_view prefix, Var trunk, Var skip, Var image) {
    const std::string p(prefix);
    const Var up = tape.upsample2x(tape.upsample2x(trunk));
    const std::array<Var, 2> mid{up, skip};
    const Var h1 = tape.relu(conv(tape, p + ".conv1", tape.concat(mid, 1), 1));
    const Var up2 = tape.upsample2x(tape.upsample2x(h1));
    const std::array<Var, 2> full{up2, image};
    return conv(tape, p + ".conv2", tape.concat(full, 1), 1);
}

NetworkOutputs Network::forward(Tape& tape, const Tensor& images) {
    const int s = config_.input_size;
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != s || images.dim(3) != s)
        throw ShapeError("network input must be [N, 1, " + std::to_string(s) + ", " + std::to_string(s) + "], got " +
                         shape_str(images.shape));
    const Var x0 = tape.constant(images);
    const Var c1 = tape.relu(conv(tape, "trunk.conv1", x0, 2));
    const Var c2 = tape.relu(conv(tape, "trunk.conv2", c1, 2));
    const Var c3 = tape.relu(conv(tape, "trunk.conv3", c2, 2));
    const Var c4 = tape.relu(conv(tape, "trunk.conv4", c3, 2));

    NetworkOutputs out;
    out.trunk = c4;
    const Var pooled = tape.reduce_mean(c4, 2);  // [N, C4]

    if (tasks_.pose) {
        const Var q = affine(tape, "head.P.q", pooled);
        const Var xy = tape.scale(affine(tape, "head.P.xy", pooled), config_.xy_scale);
        const Var z = tape.scale(tape.softplus(tape.offset(affine(tape, "head.P.z", pooled), config_.depth_shift)),
                                 config_.depth_scale);
        const std::array<Var, 3> parts{q, xy, z};
        out.pose = tape.concat(parts, 1);
    }
    if (tasks_.heatmap) out.heatmaps = tape.sigmoid(dense_head(tape, "head.H", c4, c2, x0));
    if (tasks_.bbox) {
        const double half = 0.5 * s;
        const double quarter = 0.25 * s;
        const Var center = tape.offset(tape.scale(affine(tape, "head.B.center", pooled), quarter), half);
        const Var size = tape.offset(tape.scale(tape.softplus(affine(tape, "head.B.size", pooled)), quarter),
                                     config_.min_box_px);
        const std::array<Var, 2> parts{center, size};
        out.bbox = tape.concat(parts, 1);
    }
    if (tasks_.segmentation) out.mask = tape.sigmoid(dense_head(tape, "head.S", c4, c2, x0));
    return out;
}

Network build_network(const NetworkConfig& config, const TaskSet& tasks) { return Network(config, tasks); }

void adam_step(std::vector<Parameter>& params, AdamState& state, double lr) {
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (const auto& p : params) {
            state.m.emplace_back(p.value.size(), 0.0);
            state.v.emplace_back(p.value.size(), 0.0);
        }
    }
    for (const auto& p : params)
        for (double g : p.grad)
            if (!std::isfinite(g)) throw TrainingDiverged("non-finite gradient in parameter " + p.name);

    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.value.size()) throw ShapeError("Adam state does not match parameter " + p.name);
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p.value.data[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

namespace {

json config_json(const NetworkConfig& c) {
    return {{"input_size", c.input_size},   {"trunk_widths", c.trunk_widths},
            {"keypoints", c.keypoints},     {"head_width", c.head_width},
            {"seed", c.seed},               {"xy_scale", c.xy_scale},
            {"depth_scale", c.depth_scale}, {"depth_shift", c.depth_shift},
            {"heatmap_bias_init", c.heatmap_bias_init}, {"mask_bias_init", c.mask_bias_init},
            {"min_box_px", c.min_box_px}};
}

NetworkConfig config_from_json(const json& j) {
    NetworkConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.trunk_widths = j.at("trunk_widths").get<std::array<int, 4>>();
    c.keypoints = j.at("keypoints").get<int>();
    c.head_width = j.at("head_width").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.xy_scale = j.at("xy_scale").get<double>();
    c.depth_scale = j.at("depth_scale").get<double>();
    c.depth_shift = j.at("depth_shift").get<double>();
    c.heatmap_bias_init = j.at("heatmap_bias_init").get<double>();
    c.mask_bias_init = j.at("mask_bias_init").get<double>();
    c.min_box_px = j.at("min_box_px").get<double>();
    return c;
}

template <typename T>
void put(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
    if (pos + sizeof(T) > bytes.size()) throw InvalidInput("checkpoint is truncated");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof v);
    pos += sizeof v;
    return v;
}

std::string_view take_bytes(std::string_view bytes, std::size_t& pos, std::size_t n) {
    if (pos + n > bytes.size()) throw InvalidInput("checkpoint is truncated");
    const auto out = bytes.substr(pos, n);
    pos += n;
    return out;
}

}  // namespace

std::string encode_checkpoint(const Network& net, std::int64_t step) {
    json names = json::array();
    for (const auto& p : net.parameters()) names.push_back(p.name);
    const json header{{"version", kCheckpointVersion},
                      {"config", config_json(net.config())},
                      {"tasks", net.tasks().str()},
                      {"step", step},
                      {"parameters", names}};
    const std::string h = header.dump();
    std::string out = "MTLCKPT1";
    put(out, static_cast<std::uint32_t>(h.size()));
    out += h;
    for (const auto& p : net.parameters()) {
        put(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        const std::string t = encode_tensor(p.value);
        put(out, static_cast<std::uint64_t>(t.size()));
        out += t;
    }
    return out;
}

Network decode_checkpoint(std::string_view bytes, std::int64_t* step) {
    if (bytes.substr(0, 8) != "MTLCKPT1") throw InvalidInput("not a checkpoint (bad magic)");
    std::size_t pos = 8;
    const auto hlen = take<std::uint32_t>(bytes, pos);
    json header;
    try {
        header = json::parse(take_bytes(bytes, pos, hlen));
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("checkpoint header: ") + e.what());
    }
    if (header.at("version").get<int>() != kCheckpointVersion) throw InvalidInput("unsupported checkpoint version");
    Network net(config_from_json(header.at("config")), TaskSet::parse(header.at("tasks").get<std::string>()));
    if (step) *step = header.at("step").get<std::int64_t>();
    const auto names = header.at("parameters").get<std::vector<std::string>>();
    if (names.size() != net.parameters().size()) throw InvalidInput("checkpoint parameter count does not match its tasks");
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto nlen = take<std::uint32_t>(bytes, pos);
        const std::string name(take_bytes(bytes, pos, nlen));
        const auto tlen = take<std::uint64_t>(bytes, pos);
        Tensor t;
        try {
            t = decode_f64_tensor(take_bytes(bytes, pos, tlen));
        } catch (const CorruptDataset& e) {
            throw InvalidInput("checkpoint parameter " + name + ": " + e.what());
        }
        Parameter& p = net.parameter(name);
        if (t.shape != p.value.shape)
            throw InvalidInput("checkpoint parameter " + name + " has shape " + shape_str(t.shape) + ", expected " +
                               shape_str(p.value.shape));
        p.value = std::move(t);
    }
    if (pos != bytes.size()) throw InvalidInput("checkpoint has trailing bytes");
    return net;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, std::int64_t step) {
    write_file(path, encode_checkpoint(net, step));
}

Network load_checkpoint(const std::filesystem::path& path, std::int64_t* step) {
    return decode_checkpoint(read_file(path), step);
}

}  // namespace mtlpose
