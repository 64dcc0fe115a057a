#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <unistd.h>

#include "gradcheck.hpp"
#include "mtlpose/balancer.hpp"
#include "mtlpose/errors.hpp"
#include "mtlpose/harness.hpp"
#include "mtlpose/losses.hpp"
#include "mtlpose/pnp.hpp"
#include "mtlpose/tensor_io.hpp"
#include "oracles.hpp"

using namespace mtlpose;
namespace fs = std::filesystem;
using std::numbers::pi;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "[failed: " << what << "] ";
        }
    }
};

struct Scratch {
    fs::path root = fs::temp_directory_path() / ("mtlpose_acceptance_" + std::to_string(::getpid()));
    Scratch() { fs::remove_all(root); }
    ~Scratch() { fs::remove_all(root); }
};

Scratch& scratch() {
    static Scratch s;
    return s;
}

// The 200-sample, seed-1 dataset shared by the training criteria.
const fs::path& smoke_dataset() {
    static const fs::path path = [] {
        DatasetConfig c;
        c.out = scratch().root / "smoke-data";
        c.n = 200;
        c.seed = 1;
        generate_dataset(c);
        return c.out;
    }();
    return path;
}

ExperimentSpec smoke_spec() {
    ExperimentSpec s;
    s.tasks = TaskSet::parse("P");
    s.strategy = Strategy::EW;
    s.seed = 1;
    s.hyper.epochs = 10;
    s.dataset = smoke_dataset();
    return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void metric_oracles(Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    const Quaternion id = Quaternion::identity();
    const Quaternion half_z{0, 0, 0, 1};
    const Quaternion quarter_x = Quaternion::from_axis_angle({1, 0, 0}, pi / 2);

    o.require(quat_to_matrix(id) == Mat3::Identity(), "identity quaternion");
    Mat3 half = Mat3::Zero();
    half.diagonal() << -1, -1, 1;
    o.require(quat_to_matrix(half_z) == half, "half-turn about z");

    const CameraModel cam{512, 512, 800.0, 256.0, 256.0};
    const Pose front(id, {0, 0, 10});
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}};
    const auto uv = project(cam, front, pts);
    o.require(uv[0] == Vec2(256, 256), "optical axis projects to the principal point");
    o.require(uv[1] == Vec2(336, 256), "u = 800 / 10 + 256");

    o.require(translation_error({1, 2, 3}, {1, 2, 3}) == 0.0, "E_T identical");
    o.require(translation_error({0, 0, 4}, {0, 0, 1}) == 3.0, "E_T = 3");
    o.require(translation_error({3, 4, 0}, {0, 0, 0}) == 5.0, "E_T = 5");
    o.require(rotation_error(quarter_x, quarter_x) == 0.0, "E_R identical");
    o.require(std::abs(rotation_error(id, half_z) - pi) <= 1e-12, "E_R = pi");
    o.require(std::abs(rotation_error(id, quarter_x) - pi / 2) <= 1e-12, "E_R = pi/2");
    o.require(speed_score(front, front) == 0.0, "SPEED identical");
    o.require(std::abs(speed_score(Pose(id, {0, 0, 10.5}), front) - 0.05) <= 1e-12, "SPEED = 0.05");
    o.require(std::abs(speed_score(Pose(quarter_x, {0, 0, 5}), Pose(id, {0, 0, 5})) - pi / 2) <= 1e-12,
              "SPEED = pi/2");

    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Quaternion a = Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
        const Quaternion b = Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
        worst = std::max(worst, std::abs(rotation_error(a, b) - oracles::trace_error(a, b)));
    }
    o.require(worst <= 1e-12, "E_R vs trace formula");
    const double secs = seconds_since(t0);
    o.require(secs < 1.0, "runtime < 1 s");
    o.detail << "max |E_R - trace| over 1000 pairs = " << worst << ", " << secs << " s";
}

void gradient_integrity(Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(21);
    std::map<std::string, double> worst;
    for (int i = 0; i < 100; ++i)
        for (const auto& c : gradcheck::random_op_cases(rng))
            worst[c.name] = std::max(worst[c.name], gradcheck::op_grad_error(c, rng));
    double worst_op = 0.0;
    for (const auto& [name, err] : worst) {
        o.require(err < 1e-5, "op " + name);
        worst_op = std::max(worst_op, err);
    }

    std::normal_distribution<double> n(0.0, 1.0);
    double worst_speed = 0.0;
    for (int done = 0; done < 100;) {
        const Pose gt(Quaternion{n(rng), n(rng), n(rng), n(rng)}, {n(rng), n(rng), 3 + std::abs(n(rng)) * 5});
        const std::vector<double> p{n(rng), n(rng), n(rng), n(rng), n(rng), n(rng), 5 + n(rng)};
        const double d = std::abs(Quaternion{p[0], p[1], p[2], p[3]}.normalized().dot(gt.q()));
        if (d < 1e-2 || d > 0.999) continue;
        const auto f = [&](const std::vector<double>& x) { return speed_loss(x, gt).value; };
        worst_speed = std::max(worst_speed, gradcheck::rel_error(speed_loss(p, gt).grad, gradcheck::central_diff(f, p)));
        ++done;
    }

    std::uniform_real_distribution<double> pos(10, 20), size(4, 12);
    double worst_ciou = 0.0;
    for (int done = 0; done < 100;) {
        const BBox p{pos(rng), pos(rng), size(rng), size(rng)}, g{pos(rng), pos(rng), size(rng), size(rng)};
        if (std::abs(p.cx - g.cx) * 2 > p.w + g.w || std::abs(p.cy - g.cy) * 2 > p.h + g.h) continue;
        const double alpha = ciou_alpha(p, g);
        const auto f = [&](const std::vector<double>& x) { return oracles::ciou(BBox::from_array(x), g, alpha); };
        const auto a = p.as_array();
        worst_ciou = std::max(worst_ciou,
                              gradcheck::rel_error(ciou_loss(p, g).grad, gradcheck::central_diff(f, {a.begin(), a.end()})));
        ++done;
    }

    double worst_mse = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Tensor gt = gradcheck::random_tensor({2, 3, 4}, rng);
        const Tensor pred = gradcheck::random_tensor({2, 3, 4}, rng);
        const auto f = [&](const std::vector<double>& x) { return pixel_mse(Tensor(gt.shape, x), gt).value; };
        worst_mse = std::max(worst_mse, gradcheck::rel_error(pixel_mse(pred, gt).grad, gradcheck::central_diff(f, pred.data)));
    }
    o.require(worst_speed < 1e-4, "speed_loss");
    o.require(worst_ciou < 1e-4, "ciou_loss");
    o.require(worst_mse < 1e-4, "pixel_mse");
    const double secs = seconds_since(t0);
    o.require(secs < 30.0, "runtime < 30 s");
    o.detail << worst.size() << " ops, worst " << worst_op << "; losses speed " << worst_speed << ", ciou " << worst_ciou
             << ", mse " << worst_mse << ", " << secs << " s";
}

void geometric_closure(Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(3.0, 60.0);
    double worst_px = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Vec2 p(u(rng), u(rng));
        const auto d = decode_heatmaps(encode_heatmaps(std::vector<Vec2>{p}, 64, 64, 1.5));
        worst_px = d[0].valid ? std::max(worst_px, (d[0].uv - p).norm()) : INFINITY;
    }
    o.require(worst_px <= 0.1, "heatmap round trip");

    const TargetModel model = build_target_model();
    const CameraModel cam = CameraModel::from_fov(64, 64, kPaperFovDeg);
    Rng pose_rng(32);
    double worst_r = 0.0, worst_t = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Pose gt = sample_pose(pose_rng, 1.0, 25.0, cam);
        const auto uv = project(cam, gt, model.keypoints);
        std::vector<Correspondence> corrs;
        for (std::size_t k = 0; k < uv.size(); ++k) corrs.push_back({model.keypoints[k], uv[k], 1.0});
        const PnpResult r = solve_pnp(corrs, cam);
        worst_r = std::max(worst_r, rotation_error(r.pose.q(), gt.q()));
        worst_t = std::max(worst_t, translation_error(r.pose.t(), gt.t()) / gt.t().norm());
    }
    o.require(worst_r < 1e-6, "PnP rotation");
    o.require(worst_t < 1e-6, "PnP translation");
    const double secs = seconds_since(t0);
    o.require(secs < 30.0, "runtime < 30 s");
    o.detail << "heatmap worst " << worst_px << " px; PnP worst E_R " << worst_r << ", E_T/|t| " << worst_t << ", "
             << secs << " s";
}

void balancer_invariants(Outcome& o) {
    std::mt19937_64 sim(41);
    std::uniform_real_distribution<double> loss(0.0, 3.0), norm(0.0, 5.0);
    for (Strategy st : {Strategy::EW, Strategy::RLW, Strategy::DWA, Strategy::GradNorm}) {
        for (int k : {2, 3, 4}) {
            WeightState s = make_weight_state(st, k);
            Rng rng(42);
            bool ok = true;
            for (int step = 0; step < 1000; ++step) {
                if (step % 10 == 0) {
                    std::vector<double> means(k);
                    for (double& m : means) m = loss(sim);
                    record_epoch_losses(s, means);
                    begin_epoch(s, step / 10);
                }
                begin_iteration(s, rng);
                if (st == Strategy::GradNorm) {
                    std::vector<double> l(k), g(k);
                    for (int i = 0; i < k; ++i) {
                        l[i] = loss(sim) + 1e-3;
                        g[i] = norm(sim);
                    }
                    gradnorm_step(s, l, g);
                }
                double sum = 0.0;
                for (double w : s.weights) {
                    ok = ok && w > 0.0;
                    sum += w;
                }
                ok = ok && std::abs(sum - k) <= 1e-9;
            }
            o.require(ok, strategy_name(st) + " K=" + std::to_string(k));
        }
    }

    const auto dwa = dwa_weights(std::vector<double>{2.0, 1.0}, std::vector<double>{1.0, 1.0}, 2.0);
    o.require(std::abs(dwa[0] - 1.2449) <= 1e-3 && std::abs(dwa[1] - 0.7551) <= 1e-3, "DWA hand example");

    WeightState gn = make_weight_state(Strategy::GradNorm, 3);
    const std::vector<double> losses{0.7, 0.2, 1.1}, norms{0.1, 0.1, 0.1};
    double drift = 0.0;
    for (int i = 0; i < 5; ++i) {
        gradnorm_step(gn, losses, norms);
        for (double w : gn.weights) drift = std::max(drift, std::abs(w - 1.0));
    }
    o.require(drift <= 1e-9, "GradNorm fixed point");
    o.detail << "DWA (" << dwa[0] << ", " << dwa[1] << "), GradNorm fixed-point drift " << drift;
}

void dataset_contract(Outcome& o) {
    DatasetConfig c;
    c.n = 100;
    c.seed = 51;
    c.out = scratch().root / "contract-a";
    const DatasetManifest a = generate_dataset(c);
    c.out = scratch().root / "contract-b";
    c.threads = 1;
    const DatasetManifest b = generate_dataset(c);

    const Dataset data = load_dataset(scratch().root / "contract-a");
    std::size_t checked = 0;
    for (Split s : {Split::Train, Split::Val, Split::Test})
        for (const auto& r : data.split(s)) {
            try {
                validate_sample(r, data.manifest.camera, "sample");
                ++checked;
            } catch (const CorruptDataset& e) {
                o.require(false, e.what());
            }
        }
    o.require(checked == 100, "all records present");

    bool identical = read_file(scratch().root / "contract-a" / "manifest.json") ==
                     read_file(scratch().root / "contract-b" / "manifest.json");
    for (Split s : {Split::Train, Split::Val, Split::Test})
        for (const auto& e : a.entries(s))
            for (const std::string& f : {e.image, e.mask, e.meta})
                identical = identical && read_file(scratch().root / "contract-a" / f) == read_file(scratch().root / "contract-b" / f);
    o.require(identical, "regeneration is byte-identical");
    o.require(a.counts.train == 70 && a.counts.val == 20 && a.counts.test == 10, "70/20/10 split");
    o.detail << checked << " records valid, splits " << a.counts.train << "/" << a.counts.val << "/" << a.counts.test
             << ", regeneration " << (identical ? "identical" : "differs") << " (" << b.counts.total() << " samples)";
}

void smoke_training(Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunResult r = train(smoke_spec()).result;
    const double first = r.epochs.front().mean_total;
    const double last = r.epochs.back().mean_total;
    o.require(last < 0.5 * first, "final epoch loss < 50% of epoch 0");
    o.require(r.direct.median < 1.0, "test median SPEED < 1.0");
    const double secs = seconds_since(t0);
    o.require(secs < 600.0, "runtime < 10 min");
    o.detail << "epoch-0 loss " << first << ", final " << last << " (ratio " << last / first << "), test median SPEED "
             << r.direct.median << ", " << secs << " s";
}

void trend_report(Outcome& o) {
    MatrixConfig cfg;
    cfg.dataset = smoke_dataset();
    cfg.tasks = {"P", "H", "PH", "PS"};
    cfg.strategies = {Strategy::EW};
    cfg.seeds = {1, 2, 3};
    const fs::path out = scratch().root / "trend";
    const MatrixResults res = run_matrix(cfg, out);
    for (const auto& c : res.cells) o.require(c.errors.empty(), c.cell + " ran");
    const nlohmann::json rep = report(res, "P-ew", "H-ew", out);
    o.require(fs::exists(out / "change_direct.csv"), "direct table");
    o.require(fs::exists(out / "change_indirect.csv"), "indirect table");
    o.require(fs::exists(out / "report.json"), "report.json");
    for (const auto& t : rep["tables"]) {
        o.detail << "\n  " << t["path"].get<std::string>() << " vs " << t["baseline"].get<std::string>() << ":";
        for (const auto& row : t["rows"]) {
            o.detail << " " << row["cell"].get<std::string>() << " median " << row["median"].get<double>();
            if (row["change_pct"].is_number()) o.detail << " (" << row["change_pct"].get<double>() << "%)";
        }
    }
}

void determinism(Outcome& o) {
    const fs::path a = scratch().root / "det-a", b = scratch().root / "det-b";
    const RunResult ra = train(smoke_spec(), a).result;
    const RunResult rb = train(smoke_spec(), b).result;
    const bool same_ckpt = read_file(a / "model.ckpt") == read_file(b / "model.ckpt");
    const bool same_result = to_json(ra) == to_json(rb);
    o.require(same_ckpt, "checkpoint bytes");
    o.require(same_result, "RunResult");
    o.detail << "checkpoint " << (same_ckpt ? "identical" : "differs") << ", RunResult "
             << (same_result ? "identical" : "differs");
}

struct Criterion {
    int id;
    const char* name;
    std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    int only = 0;
    app.add_option("--only", only, "Run a single criterion (1-8)")->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, "metric oracles", metric_oracles},
        {2, "gradient integrity", gradient_integrity},
        {3, "geometric closure", geometric_closure},
        {4, "balancer invariants", balancer_invariants},
        {5, "dataset contract", dataset_contract},
        {6, "smoke training", smoke_training},
        {7, "trend report", trend_report},
        {8, "determinism", determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        Outcome o;
        try {
            c.run(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "[exception: " << e.what() << "]";
        }
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail.str()
                  << std::endl;
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
