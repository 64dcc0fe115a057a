#include "mtlpose/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mtlpose/errors.hpp"
#include "mtlpose/heatmap.hpp"
#include "mtlpose/tensor_io.hpp"

namespace mtlpose {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaxRenderAttempts = 100;

std::string sample_stem(std::size_t index) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << index;
    return os.str();
}

json pose_to_json(const Pose& p) {
    return {{"q", {p.q().w, p.q().x, p.q().y, p.q().z}}, {"t", {p.t().x(), p.t().y(), p.t().z()}}};
}

Pose pose_from_json(const json& j) {
    const auto& q = j.at("q");
    const auto& t = j.at("t");
    return Pose({q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>()},
                Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()));
}

json sample_meta(const SampleRecord& s, std::size_t index) {
    json kps = json::array();
    for (const auto& k : s.keypoints_px) kps.push_back({k.x(), k.y()});
    json vis = json::array();
    for (auto v : s.visibility) vis.push_back(v != 0);
    const BBox b = s.bbox();
    return {{"index", index},
            {"pose", pose_to_json(s.pose)},
            {"keypoints_px", kps},
            {"visibility", vis},
            {"bbox", {{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}}},
            {"bbox_px", {{"x_min", s.box.x_min}, {"y_min", s.box.y_min}, {"x_max", s.box.x_max}, {"y_max", s.box.y_max}}}};
}

json camera_json(const DatasetManifest& m) {
    return {{"width_px", m.camera.width_px},
            {"height_px", m.camera.height_px},
            {"f_px", m.camera.f_px},
            {"cx", m.camera.cx},
            {"cy", m.camera.cy},
            {"fov_deg", m.fov_deg},
            {"focal_length_source", "fov"},
            {"principal_point", "W/2, H/2"},
            {"pixel_center_convention", "pixel (row r, col c) is centered at (u, v) = (c, r)"},
            {"reference_focal_length_mm", kPaperFocalLengthMm},
            {"reference_pixel_pitch_um", kPaperPixelPitchUm}};
}

json entries_json(const std::vector<SampleEntry>& entries) {
    json arr = json::array();
    for (const auto& e : entries)
        arr.push_back({{"index", e.index},
                       {"image", e.image},
                       {"mask", e.mask},
                       {"meta", e.meta},
                       {"image_crc32", e.image_crc},
                       {"mask_crc32", e.mask_crc},
                       {"meta_crc32", e.meta_crc}});
    return arr;
}

json manifest_json(const DatasetManifest& m) {
    return {{"format", "mtlpose-dataset"},
            {"version", m.version},
            {"seed", m.seed},
            {"sample_seed_rule", "seed xor index"},
            {"image_size", m.image_size},
            {"image_channels", 1},
            {"distance_range_m", {m.d_min, m.d_max}},
            {"heatmap_sigma_px", m.heatmap_sigma_px},
            {"camera", camera_json(m)},
            {"model", {{"name", m.model_name}, {"version", m.model_version}, {"keypoints", m.model_keypoints}}},
            {"counts", {{"train", m.counts.train}, {"val", m.counts.val}, {"test", m.counts.test}}},
            {"splits", {{"train", entries_json(m.train)}, {"val", entries_json(m.val)}, {"test", entries_json(m.test)}}}};
}

std::vector<SampleEntry> entries_from_json(const json& arr) {
    std::vector<SampleEntry> out;
    for (const auto& e : arr)
        out.push_back({e.at("index").get<std::size_t>(), e.at("image").get<std::string>(), e.at("mask").get<std::string>(),
                       e.at("meta").get<std::string>(), e.at("image_crc32").get<std::uint32_t>(),
                       e.at("mask_crc32").get<std::uint32_t>(), e.at("meta_crc32").get<std::uint32_t>()});
    return out;
}

DatasetManifest manifest_from_json(const json& j) {
    if (j.value("format", "") != "mtlpose-dataset") throw CorruptDataset("manifest: not an mtlpose dataset");
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kDatasetFormatVersion)
        throw CorruptDataset("manifest: unsupported version " + std::to_string(m.version));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.image_size = j.at("image_size").get<int>();
    m.d_min = j.at("distance_range_m").at(0).get<double>();
    m.d_max = j.at("distance_range_m").at(1).get<double>();
    m.heatmap_sigma_px = j.at("heatmap_sigma_px").get<double>();
    const auto& cam = j.at("camera");
    m.camera.width_px = cam.at("width_px").get<int>();
    m.camera.height_px = cam.at("height_px").get<int>();
    m.camera.f_px = cam.at("f_px").get<double>();
    m.camera.cx = cam.at("cx").get<double>();
    m.camera.cy = cam.at("cy").get<double>();
    m.fov_deg = cam.at("fov_deg").get<double>();
    m.camera.validate();
    const auto& model = j.at("model");
    m.model_name = model.at("name").get<std::string>();
    m.model_version = model.at("version").get<int>();
    m.model_keypoints = model.at("keypoints").get<std::size_t>();
    const auto& counts = j.at("counts");
    m.counts = {counts.at("train").get<std::size_t>(), counts.at("val").get<std::size_t>(),
                counts.at("test").get<std::size_t>()};
    const auto& splits = j.at("splits");
    m.train = entries_from_json(splits.at("train"));
    m.val = entries_from_json(splits.at("val"));
    m.test = entries_from_json(splits.at("test"));
    return m;
}

struct SampleFiles {
    std::string image, mask, meta;
};

SampleFiles encode_sample(const SampleRecord& s, std::size_t index) {
    const Shape shape{s.height, s.width};
    return {encode_tensor(Tensor(shape, s.image)), encode_tensor(ByteTensor{shape, s.mask}),
            sample_meta(s, index).dump(1) + "\n"};
}

SampleRecord decode_sample(const SampleFiles& files, const std::string& what) {
    SampleRecord s;
    try {
        const Tensor image = decode_f64_tensor(files.image);
        const ByteTensor mask = decode_u8_tensor(files.mask);
        if (image.rank() != 2 || mask.shape != image.shape) throw CorruptDataset("image/mask shape mismatch");
        s.height = static_cast<int>(image.dim(0));
        s.width = static_cast<int>(image.dim(1));
        s.image = image.data;
        s.mask = mask.data;
        const json meta = json::parse(files.meta);
        s.pose = pose_from_json(meta.at("pose"));
        for (const auto& k : meta.at("keypoints_px")) s.keypoints_px.emplace_back(k.at(0).get<double>(), k.at(1).get<double>());
        for (const auto& v : meta.at("visibility")) s.visibility.push_back(v.get<bool>() ? 1 : 0);
        const auto& b = meta.at("bbox_px");
        s.box = {b.at("x_min").get<int>(), b.at("y_min").get<int>(), b.at("x_max").get<int>(), b.at("y_max").get<int>()};
    } catch (const CorruptDataset& e) {
        throw CorruptDataset(what + ": " + e.what());
    } catch (const json::exception& e) {
        throw CorruptDataset(what + ": bad metadata: " + e.what());
    } catch (const InvalidInput& e) {
        throw CorruptDataset(what + ": " + e.what());
    }
    return s;
}

}  // namespace

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

SplitCounts split_counts(std::size_t n) {
    SplitCounts c;
    c.val = n * 20 / 100;
    c.test = n * 10 / 100;
    c.train = n - c.val - c.test;
    return c;
}

const std::vector<SampleEntry>& DatasetManifest::entries(Split s) const {
    return s == Split::Train ? train : s == Split::Val ? val : test;
}

const std::vector<SampleRecord>& Dataset::split(Split s) const {
    return s == Split::Train ? train : s == Split::Val ? val : test;
}

CameraModel dataset_camera(int image_size, double fov_deg) { return CameraModel::from_fov(image_size, image_size, fov_deg); }

SampleRecord generate_sample(std::uint64_t seed, std::size_t index, const CameraModel& camera, const TargetModel& model,
                             double d_min, double d_max) {
    Rng rng(seed ^ static_cast<std::uint64_t>(index));
    for (int attempt = 0; attempt < kMaxRenderAttempts; ++attempt) {
        const Pose pose = sample_pose(rng, d_min, d_max, camera);
        try {
            return render(camera, pose, model, rng);
        } catch (const DegenerateSample&) {
            // resample
        }
    }
    throw GenerationError("sample " + std::to_string(index) + ": no renderable pose after 100 attempts");
}

DatasetManifest generate_dataset(const DatasetConfig& config) {
    if (config.n == 0) throw InvalidConfig("dataset size must be positive");
    if (config.image_size < 8) throw InvalidConfig("image size must be at least 8 px");
    if (!(config.d_min > 0.0 && config.d_min < config.d_max)) throw InvalidConfig("distance range must satisfy 0 < min < max");
    if (config.out.empty()) throw InvalidConfig("output directory is required");

    const fs::path out = config.out;
    if (fs::exists(out) && !(fs::is_directory(out) && fs::is_empty(out)))
        throw IoError("output directory is not empty: " + out.string());
    fs::path staging = out;
    staging += ".partial";
    std::error_code ec;
    fs::remove_all(staging, ec);

    const TargetModel model = build_target_model();
    DatasetManifest m;
    m.seed = config.seed;
    m.camera = dataset_camera(config.image_size, config.fov_deg);
    m.fov_deg = config.fov_deg;
    m.image_size = config.image_size;
    m.d_min = config.d_min;
    m.d_max = config.d_max;
    m.heatmap_sigma_px = heatmap_sigma_for(config.image_size);
    m.model_name = model.name;
    m.model_version = model.version;
    m.model_keypoints = model.keypoints.size();
    m.counts = split_counts(config.n);

    try {
        for (Split s : {Split::Train, Split::Val, Split::Test}) fs::create_directories(staging / split_name(s));

        std::vector<SampleEntry> entries(config.n);
        const auto split_of = [&](std::size_t i) {
            return i < m.counts.train ? Split::Train : i < m.counts.train + m.counts.val ? Split::Val : Split::Test;
        };
        const auto produce = [&](std::size_t i) {
            const SampleRecord s = generate_sample(config.seed, i, m.camera, model, config.d_min, config.d_max);
            const SampleFiles files = encode_sample(s, i);
            const std::string dir = split_name(split_of(i));
            SampleEntry& e = entries[i];
            e.index = i;
            e.image = dir + "/" + sample_stem(i) + ".image.bin";
            e.mask = dir + "/" + sample_stem(i) + ".mask.bin";
            e.meta = dir + "/" + sample_stem(i) + ".json";
            e.image_crc = crc32_of(files.image);
            e.mask_crc = crc32_of(files.mask);
            e.meta_crc = crc32_of(files.meta);
            write_file(staging / e.image, files.image);
            write_file(staging / e.mask, files.mask);
            write_file(staging / e.meta, files.meta);
        };

        unsigned threads = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
        threads = static_cast<unsigned>(std::min<std::size_t>(threads, config.n));
        if (threads <= 1) {
            for (std::size_t i = 0; i < config.n; ++i) produce(i);
        } else {
            std::exception_ptr failure;
            std::mutex failure_mutex;
            {
                std::vector<std::jthread> pool;
                for (unsigned t = 0; t < threads; ++t) {
                    pool.emplace_back([&, t] {
                        try {
                            for (std::size_t i = t; i < config.n; i += threads) produce(i);
                        } catch (...) {
                            std::lock_guard lock(failure_mutex);
                            if (!failure) failure = std::current_exception();
                        }
                    });
                }
            }
            if (failure) std::rethrow_exception(failure);
        }

        for (std::size_t i = 0; i < config.n; ++i) {
            switch (split_of(i)) {
                case Split::Train: m.train.push_back(entries[i]); break;
                case Split::Val: m.val.push_back(entries[i]); break;
                case Split::Test: m.test.push_back(entries[i]); break;
            }
        }
        write_file(staging / "manifest.json", manifest_json(m).dump(1) + "\n");

        if (fs::exists(out)) fs::remove(out);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        fs::rename(staging, out);
    } catch (const fs::filesystem_error& e) {
        fs::remove_all(staging, ec);
        throw IoError(std::string("dataset generation failed at ") + e.path1().string() + ": " + e.what());
    } catch (...) {
        fs::remove_all(staging, ec);
        throw;
    }
    return m;
}

Dataset load_dataset(const fs::path& path) {
    const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
    const fs::path root = manifest_path.parent_path();
    Dataset ds;
    try {
        ds.manifest = manifest_from_json(json::parse(read_file(manifest_path)));
    } catch (const json::exception& e) {
        throw CorruptDataset("manifest " + manifest_path.string() + ": " + e.what());
    } catch (const InvalidInput& e) {
        throw CorruptDataset("manifest " + manifest_path.string() + ": " + e.what());
    }
    const DatasetManifest& m = ds.manifest;
    if (m.model_keypoints != kNumKeypoints)
        throw CorruptDataset("manifest: model declares " + std::to_string(m.model_keypoints) +
                             " keypoints; this workbench requires 18");
    if (m.model_name != kTargetModelName || m.model_version != kTargetModelVersion)
        throw CorruptDataset("manifest: unknown target model " + m.model_name + " v" + std::to_string(m.model_version));
    if (!(m.counts == split_counts(m.counts.total())) || m.train.size() != m.counts.train ||
        m.val.size() != m.counts.val || m.test.size() != m.counts.test)
        throw CorruptDataset("manifest: split counts are not the 70/20/10 partition");
    ds.model = build_target_model();

    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        auto& records = s == Split::Train ? ds.train : s == Split::Val ? ds.val : ds.test;
        for (const auto& e : m.entries(s)) {
            const std::string what = std::string(split_name(s)) + " sample " + std::to_string(e.index);
            SampleFiles files;
            try {
                files = {read_file(root / e.image), read_file(root / e.mask), read_file(root / e.meta)};
            } catch (const IoError& err) {
                throw CorruptDataset(what + ": " + err.what());
            }
            const std::pair<const std::string&, const std::string&> checks[] = {
                {files.image, e.image}, {files.mask, e.mask}, {files.meta, e.meta}};
            const std::uint32_t expected[] = {e.image_crc, e.mask_crc, e.meta_crc};
            for (std::size_t k = 0; k < 3; ++k)
                if (crc32_of(checks[k].first) != expected[k])
                    throw CorruptDataset(what + ": checksum mismatch in " + checks[k].second);
            SampleRecord rec = decode_sample(files, what);
            validate_sample(rec, m.camera, what);
            records.push_back(std::move(rec));
        }
    }
    return ds;
}

}  // namespace mtlpose
