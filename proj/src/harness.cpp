#include "mtlpose/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mtlpose/errors.hpp"
#include "mtlpose/heatmap.hpp"
#include "mtlpose/losses.hpp"
#include "mtlpose/pnp.hpp"
#include "mtlpose/tensor_io.hpp"

namespace mtlpose {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string>& default_task_strings() {
    static const std::vector<std::string> tasks{"P",   "H",   "PH",   "PB", "PS", "PHB",
                                                "PHS", "PBS", "PHBS", "HB", "HS", "HBS"};
    return tasks;
}

void TrainHyper::validate() const {
    if (epochs < 1) throw InvalidConfig("epochs must be at least 1");
    if (batch_size < 1) throw InvalidConfig("batch size must be at least 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidConfig("learning rate must be positive");
    if (!(lr_step1 >= 0.0 && lr_step1 <= lr_step2 && lr_step2 <= 1.0))
        throw InvalidConfig("learning-rate step fractions must satisfy 0 <= s1 <= s2 <= 1");
    if (!(lr_factor > 0.0)) throw InvalidConfig("learning-rate factor must be positive");
}

double TrainHyper::lr_at(int epoch) const {
    double out = lr;
    if (epoch >= static_cast<int>(std::floor(lr_step1 * epochs))) out *= lr_factor;
    if (epoch >= static_cast<int>(std::floor(lr_step2 * epochs))) out *= lr_factor;
    return out;
}

std::string ExperimentSpec::cell() const { return tasks.str() + "-" + strategy_name(strategy); }

void ExperimentSpec::validate() const {
    tasks.validate();
    hyper.validate();
    if (strategy == Strategy::GradNorm && tasks.count() < 2)
        throw StrategyNotApplicable("GradNorm needs at least two tasks; " + tasks.str() + " has one");
}

double quantile(std::span<const double> values, double p) {
    if (values.empty()) throw InvalidInput("quantile of an empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("quantile level must lie in [0, 1]");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void summarize(PathStats& stats) {
    if (stats.scores.empty()) {
        stats.median = stats.iqr = 0.0;
        return;
    }
    stats.median = quantile(stats.scores, 0.5);
    stats.iqr = quantile(stats.scores, 0.75) - quantile(stats.scores, 0.25);
}

namespace {

Tensor batch_images(std::span<const SampleRecord* const> batch, int size) {
    Tensor x({static_cast<std::int64_t>(batch.size()), 1, size, size});
    const std::size_t n = static_cast<std::size_t>(size) * size;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i]->image.size() != n) throw ShapeError("sample image does not match the network input size");
        std::copy(batch[i]->image.begin(), batch[i]->image.end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return x;
}

struct TaskLoss {
    double value = 0.0;
    std::vector<double> grad;
};

TaskLoss task_loss(Task task, const Tensor& pred, std::span<const SampleRecord* const> batch, double sigma_px) {
    const std::size_t b = batch.size();
    TaskLoss out;
    out.grad.assign(pred.size(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(b);
    switch (task) {
        case Task::Pose:
            for (std::size_t i = 0; i < b; ++i) {
                const auto row = std::span<const double>(pred.data).subspan(i * 7, 7);
                const LossResult l = speed_loss(row, batch[i]->pose);
                out.value += l.value * inv_b;
                for (std::size_t j = 0; j < 7; ++j) out.grad[i * 7 + j] = l.grad[j] * inv_b;
            }
            break;
        case Task::BBox:
            for (std::size_t i = 0; i < b; ++i) {
                const BBox p = BBox::from_array(std::span<const double>(pred.data).subspan(i * 4, 4));
                const LossResult l = ciou_loss(p, batch[i]->bbox());
                out.value += l.value * inv_b;
                for (std::size_t j = 0; j < 4; ++j) out.grad[i * 4 + j] = l.grad[j] * inv_b;
            }
            break;
        case Task::Heatmap: {
            Tensor gt(pred.shape, 0.0);
            const int h = static_cast<int>(pred.dim(2));
            const int w = static_cast<int>(pred.dim(3));
            const std::size_t per = static_cast<std::size_t>(pred.dim(1)) * h * w;
            for (std::size_t i = 0; i < b; ++i) {
                const HeatmapStack s = encode_heatmaps(batch[i]->keypoints_px, h, w, sigma_px);
                std::copy(s.data.begin(), s.data.end(), gt.data.begin() + static_cast<std::ptrdiff_t>(i * per));
            }
            LossResult l = pixel_mse(pred, gt);
            out.value = l.value;
            out.grad = std::move(l.grad);
            break;
        }
        case Task::Segmentation: {
            Tensor gt(pred.shape, 0.0);
            const std::size_t per = pred.size() / b;
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < per; ++j) gt.data[i * per + j] = batch[i]->mask[j];
            LossResult l = pixel_mse(pred, gt);
            out.value = l.value;
            out.grad = std::move(l.grad);
            break;
        }
    }
    return out;
}

double grad_norm(const std::vector<double>& g) {
    double s = 0.0;
    for (double v : g) s += v * v;
    return std::sqrt(s);
}

std::string join(std::span<const double> v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    return "(" + os.str() + ")";
}

double median_or_zero(const PathStats& s) { return s.scores.empty() ? 0.0 : s.median; }

json path_json(const PathStats& s) {
    return {{"present", s.present}, {"median", s.median}, {"iqr", s.iqr}, {"failures", s.failures},
            {"scores", s.scores}};
}

PathStats path_from_json(const json& j) {
    PathStats s;
    s.present = j.at("present").get<bool>();
    s.median = j.at("median").get<double>();
    s.iqr = j.at("iqr").get<double>();
    s.failures = j.at("failures").get<std::size_t>();
    s.scores = j.at("scores").get<std::vector<double>>();
    return s;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from_json(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

}  // namespace

RunResult evaluate(Network& net, std::span<const SampleRecord> samples, const CameraModel& camera,
                   const TargetModel& model, const EvalOptions& options) {
    const bool do_direct = options.direct && net.tasks().pose;
    const bool do_indirect = options.indirect && net.tasks().heatmap;
    if (!do_direct && !do_indirect)
        throw InvalidRequest("network with tasks " + net.tasks().str() + " has no head for the requested pose path");
    if (options.batch_size < 1) throw InvalidConfig("evaluation batch size must be at least 1");

    RunResult r;
    r.tasks = net.tasks().str();
    r.direct.present = do_direct;
    r.indirect.present = do_indirect;
    const int size = net.config().input_size;
    const int k = net.config().keypoints;
    const double sigma = heatmap_sigma_for(size);

    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(options.batch_size)) {
        const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(options.batch_size));
        std::vector<const SampleRecord*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
        Tape tape;
        const NetworkOutputs out = net.forward(tape, batch_images(batch, size));
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const Pose& gt = batch[i]->pose;
            if (do_direct) {
                const auto& p = tape.value(*out.pose).data;
                double score = kFailureSpeed;
                try {
                    const Quaternion q{p[i * 7], p[i * 7 + 1], p[i * 7 + 2], p[i * 7 + 3]};
                    score = speed_score(Pose(q, Vec3(p[i * 7 + 4], p[i * 7 + 5], p[i * 7 + 6])), gt);
                } catch (const InvalidInput&) {
                    ++r.direct.failures;
                }
                r.direct.scores.push_back(score);
            }
            if (do_indirect) {
                const auto& h = tape.value(*out.heatmaps).data;
                HeatmapStack stack(k, size, size, sigma);
                const std::size_t per = stack.data.size();
                std::copy(h.begin() + static_cast<std::ptrdiff_t>(i * per),
                          h.begin() + static_cast<std::ptrdiff_t>((i + 1) * per), stack.data.begin());
                double score = kFailureSpeed;
                try {
                    score = speed_score(indirect_pose(stack, model, camera, options.tau).pose, gt);
                } catch (const Error&) {
                    ++r.indirect.failures;
                }
                r.indirect.scores.push_back(score);
            }
        }
    }
    summarize(r.direct);
    summarize(r.indirect);
    return r;
}

RunResult evaluate_checkpoint(const fs::path& checkpoint, const fs::path& dataset, Split split,
                              const EvalOptions& options) {
    Network net = load_checkpoint(checkpoint);
    const Dataset data = load_dataset(dataset);
    if (data.manifest.image_size != net.config().input_size)
        throw InvalidRequest("checkpoint expects " + std::to_string(net.config().input_size) +
                             " px images but the dataset has " + std::to_string(data.manifest.image_size));
    return evaluate(net, data.split(split), data.manifest.camera, data.model, options);
}

TrainOutput train(const ExperimentSpec& spec, const fs::path& out_dir) {
    return train(spec, load_dataset(spec.dataset), out_dir);
}

TrainOutput train(const ExperimentSpec& spec, const Dataset& data, const fs::path& out_dir) {
    spec.validate();
    if (data.train.empty()) throw InvalidRequest("dataset has no training samples");

    NetworkConfig cfg;
    cfg.input_size = data.manifest.image_size;
    cfg.keypoints = static_cast<int>(data.model.keypoints.size());
    cfg.seed = spec.seed;
    Network net = build_network(cfg, spec.tasks);

    const std::vector<Task> tasks = spec.tasks.active();
    const int k = static_cast<int>(tasks.size());
    WeightState weights = make_weight_state(spec.strategy, k, spec.balancer);
    AdamState adam;
    Rng rng(spec.seed ^ 0x6A09E667F3BCC909ull);
    const double sigma = heatmap_sigma_for(cfg.input_size);

    RunResult result;
    result.cell = spec.cell();
    result.tasks = spec.tasks.str();
    result.strategy = strategy_name(spec.strategy);
    result.seed = spec.seed;
    for (Task t : tasks) result.task_order.emplace_back(1, task_letter(t));

    std::ofstream log;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        log.open(out_dir / "log.jsonl", std::ios::binary | std::ios::trunc);
        if (!log) throw IoError("cannot open " + (out_dir / "log.jsonl").string());
        log << json{{"event", "start"},
                    {"cell", result.cell},
                    {"seed", spec.seed},
                    {"optimizer", "adam"},
                    {"epochs", spec.hyper.epochs},
                    {"batch_size", spec.hyper.batch_size},
                    {"lr", spec.hyper.lr},
                    {"lr_steps", {spec.hyper.lr_step1, spec.hyper.lr_step2}},
                    {"lr_factor", spec.hyper.lr_factor},
                    {"temperature", spec.balancer.temperature},
                    {"alpha", spec.balancer.alpha},
                    {"lr_w", spec.balancer.lr_w},
                    {"weight_cadence", spec.strategy == Strategy::DWA ? "epoch"
                                       : spec.strategy == Strategy::EW ? "fixed"
                                                                       : "iteration"}}
                   .dump()
            << '\n';
    }

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    Parameter* shared = spec.strategy == Strategy::GradNorm ? &net.parameter(Network::kSharedLayer) : nullptr;
    std::int64_t step = 0;

    for (int epoch = 0; epoch < spec.hyper.epochs; ++epoch) {
        const double lr = spec.hyper.lr_at(epoch);
        begin_epoch(weights, epoch);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(order[i - 1], order[pick(rng)]);
        }
        std::vector<double> loss_sum(static_cast<std::size_t>(k), 0.0);
        double total_sum = 0.0;
        std::size_t batches = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(spec.hyper.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(spec.hyper.batch_size));
            std::vector<const SampleRecord*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&data.train[order[i]]);
            begin_iteration(weights, rng);

            Tape tape;
            const NetworkOutputs out = net.forward(tape, batch_images(batch, cfg.input_size));
            std::vector<TaskLoss> losses;
            std::vector<double> values;
            for (Task t : tasks) {
                losses.push_back(task_loss(t, tape.value(*out.output(t)), batch, sigma));
                values.push_back(losses.back().value);
            }

            const std::vector<double> w = weights.weights;  // the network step uses pre-update weights
            double total = 0.0;
            for (int i = 0; i < k; ++i) total += w[i] * values[i];
            if (!std::isfinite(total)) {
                const std::string msg = "training diverged at step " + std::to_string(step) + " (epoch " +
                                        std::to_string(epoch) + "): losses " + join(values) + ", weights " + join(w);
                if (log) log << json{{"event", "diverged"}, {"step", step}, {"losses", values}, {"weights", w}}.dump() << '\n';
                throw TrainingDiverged(msg);
            }

            if (shared) {
                std::vector<double> norms;
                for (int i = 0; i < k; ++i) {
                    net.zero_grad();
                    tape.zero_grad();
                    tape.seed(*out.output(tasks[i]), losses[i].grad);
                    tape.backward();
                    norms.push_back(grad_norm(shared->grad));
                }
                gradnorm_step(weights, values, norms);
                tape.zero_grad();
            }

            net.zero_grad();
            for (int i = 0; i < k; ++i) {
                std::vector<double> g = losses[i].grad;
                for (double& v : g) v *= w[i];
                tape.seed(*out.output(tasks[i]), g);
            }
            tape.backward();
            adam_step(net.parameters(), adam, lr);

            for (int i = 0; i < k; ++i) loss_sum[i] += values[i];
            total_sum += total;
            ++batches;
            result.steps.push_back({step, epoch, values, w, total});
            if (log) log << json{{"step", step}, {"epoch", epoch}, {"strategy", result.strategy},
                                 {"losses", values}, {"weights", w}, {"total", total}}.dump() << '\n';
            ++step;
        }

        EpochLog e;
        e.epoch = epoch;
        e.lr = lr;
        for (double s : loss_sum) e.mean_losses.push_back(s / static_cast<double>(batches));
        e.mean_total = total_sum / static_cast<double>(batches);
        record_epoch_losses(weights, e.mean_losses);
        for (auto& note : weights.notes) result.notes.push_back("epoch " + std::to_string(epoch) + ": " + note);
        weights.notes.clear();

        if (spec.validate_each_epoch && !data.val.empty()) {
            EvalOptions eo;
            eo.tau = spec.tau;
            const RunResult v = evaluate(net, data.val, data.manifest.camera, data.model, eo);
            if (v.direct.present) e.val_direct_median = v.direct.median;
            if (v.indirect.present) e.val_indirect_median = v.indirect.median;
        }
        if (log) log << json{{"event", "epoch"}, {"epoch", epoch}, {"lr", lr}, {"mean_losses", e.mean_losses},
                             {"mean_total", e.mean_total}, {"val_direct_median", optional_json(e.val_direct_median)},
                             {"val_indirect_median", optional_json(e.val_indirect_median)}}.dump() << '\n';
        result.epochs.push_back(std::move(e));
    }

    if (!data.test.empty()) {
        EvalOptions eo;
        eo.tau = spec.tau;
        const RunResult t = evaluate(net, data.test, data.manifest.camera, data.model, eo);
        result.direct = t.direct;
        result.indirect = t.indirect;
    }

    if (!out_dir.empty()) {
        save_checkpoint(out_dir / "model.ckpt", net, step);
        write_text(out_dir / "result.json", to_json(result).dump(1) + "\n");
    }
    return {std::move(net), std::move(result)};
}

json to_json(const RunResult& r) {
    json epochs = json::array();
    for (const auto& e : r.epochs)
        epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"mean_losses", e.mean_losses},
                          {"mean_total", e.mean_total}, {"val_direct_median", optional_json(e.val_direct_median)},
                          {"val_indirect_median", optional_json(e.val_indirect_median)}});
    json steps = json::array();
    for (const auto& s : r.steps)
        steps.push_back({{"step", s.step}, {"epoch", s.epoch}, {"losses", s.losses}, {"weights", s.weights},
                         {"total", s.total}});
    return {{"version", kResultsSchemaVersion},
            {"cell", r.cell},
            {"tasks", r.tasks},
            {"strategy", r.strategy},
            {"seed", r.seed},
            {"task_order", r.task_order},
            {"direct", path_json(r.direct)},
            {"indirect", path_json(r.indirect)},
            {"epochs", epochs},
            {"steps", steps},
            {"notes", r.notes}};
}

RunResult run_result_from_json(const json& j) {
    if (j.at("version").get<int>() != kResultsSchemaVersion) throw InvalidInput("unsupported run result version");
    RunResult r;
    r.cell = j.at("cell").get<std::string>();
    r.tasks = j.at("tasks").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.task_order = j.at("task_order").get<std::vector<std::string>>();
    r.direct = path_from_json(j.at("direct"));
    r.indirect = path_from_json(j.at("indirect"));
    for (const auto& e : j.at("epochs"))
        r.epochs.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(),
                            e.at("mean_losses").get<std::vector<double>>(), e.at("mean_total").get<double>(),
                            optional_from_json(e.at("val_direct_median")),
                            optional_from_json(e.at("val_indirect_median"))});
    for (const auto& s : j.at("steps"))
        r.steps.push_back({s.at("step").get<std::int64_t>(), s.at("epoch").get<int>(),
                           s.at("losses").get<std::vector<double>>(), s.at("weights").get<std::vector<double>>(),
                           s.at("total").get<double>()});
    r.notes = j.at("notes").get<std::vector<std::string>>();
    return r;
}

MatrixConfig MatrixConfig::from_json(const json& j) {
    MatrixConfig c;
    try {
        c.dataset = j.at("dataset").get<std::string>();
        if (j.contains("tasks")) c.tasks = j.at("tasks").get<std::vector<std::string>>();
        if (j.contains("strategies")) {
            c.strategies.clear();
            for (const auto& s : j.at("strategies")) c.strategies.push_back(parse_strategy(s.get<std::string>()));
        }
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        c.hyper.epochs = j.value("epochs", c.hyper.epochs);
        c.hyper.batch_size = j.value("batch_size", c.hyper.batch_size);
        c.hyper.lr = j.value("lr", c.hyper.lr);
        c.hyper.lr_step1 = j.value("lr_step1", c.hyper.lr_step1);
        c.hyper.lr_step2 = j.value("lr_step2", c.hyper.lr_step2);
        c.hyper.lr_factor = j.value("lr_factor", c.hyper.lr_factor);
        c.balancer.temperature = j.value("temperature", c.balancer.temperature);
        c.balancer.alpha = j.value("alpha", c.balancer.alpha);
        c.balancer.lr_w = j.value("lr_w", c.balancer.lr_w);
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("matrix config: ") + e.what());
    }
    if (c.tasks.empty() || c.strategies.empty() || c.seeds.empty())
        throw InvalidConfig("matrix config needs at least one task string, strategy and seed");
    c.hyper.validate();
    return c;
}

const CellResult* MatrixResults::find(const std::string& cell) const {
    for (const auto& c : cells)
        if (c.cell == cell) return &c;
    return nullptr;
}

std::vector<std::pair<TaskSet, Strategy>> matrix_cells(const MatrixConfig& config, std::vector<std::string>* notes) {
    std::vector<std::pair<TaskSet, Strategy>> out;
    std::set<std::string> seen;
    for (const auto& t : config.tasks) {
        const TaskSet ts = TaskSet::parse(t);
        ts.validate();
        for (Strategy s : config.strategies) {
            Strategy use = s;
            if (ts.count() == 1 && s != Strategy::EW) {
                use = Strategy::EW;
                if (notes) notes->push_back(ts.str() + ": single task, " + strategy_name(s) + " forced to ew");
            }
            const std::string key = ts.str() + "-" + strategy_name(use);
            if (seen.insert(key).second) out.emplace_back(ts, use);
        }
    }
    return out;
}

MatrixResults run_matrix(const MatrixConfig& config, const fs::path& out_dir) {
    std::vector<std::string> notes;
    const auto cells = matrix_cells(config, &notes);
    fs::create_directories(out_dir);
    {
        std::ofstream log(out_dir / "matrix.log", std::ios::app);
        for (const auto& n : notes) log << n << '\n';
    }
    const Dataset data = load_dataset(config.dataset);

    MatrixResults results;
    for (const auto& [tasks, strategy] : cells) {
        ExperimentSpec spec;
        spec.tasks = tasks;
        spec.strategy = strategy;
        spec.hyper = config.hyper;
        spec.balancer = config.balancer;
        spec.dataset = config.dataset;

        CellResult cell;
        cell.cell = spec.cell();
        cell.tasks = tasks.str();
        cell.strategy = strategy_name(strategy);
        for (std::uint64_t seed : config.seeds) {
            spec.seed = seed;
            const fs::path dir = out_dir / cell.cell / ("seed-" + std::to_string(seed));
            try {
                RunResult r;
                if (fs::exists(dir / "DONE")) {
                    r = run_result_from_json(json::parse(read_file(dir / "result.json")));
                } else {
                    r = train(spec, data, dir).result;
                    write_text(dir / "DONE", "");
                }
                cell.seeds.push_back(seed);
                cell.direct.present = r.direct.present;
                cell.indirect.present = r.indirect.present;
                cell.direct.scores.insert(cell.direct.scores.end(), r.direct.scores.begin(), r.direct.scores.end());
                cell.indirect.scores.insert(cell.indirect.scores.end(), r.indirect.scores.begin(),
                                            r.indirect.scores.end());
                cell.direct.failures += r.direct.failures;
                cell.indirect.failures += r.indirect.failures;
            } catch (const std::exception& e) {
                cell.errors.push_back("seed " + std::to_string(seed) + ": " + e.what());
                std::ofstream log(out_dir / "matrix.log", std::ios::app);
                log << cell.cell << " seed " << seed << " failed: " << e.what() << '\n';
            }
        }
        summarize(cell.direct);
        summarize(cell.indirect);
        results.cells.push_back(std::move(cell));
    }
    write_text(out_dir / "results.json", to_json(results).dump(1) + "\n");
    return results;
}

json to_json(const MatrixResults& r) {
    json cells = json::array();
    for (const auto& c : r.cells)
        cells.push_back({{"cell", c.cell},
                         {"tasks", c.tasks},
                         {"strategy", c.strategy},
                         {"seeds", c.seeds},
                         {"direct", path_json(c.direct)},
                         {"indirect", path_json(c.indirect)},
                         {"errors", c.errors}});
    return {{"version", r.version}, {"cells", cells}};
}

MatrixResults matrix_results_from_json(const json& j) {
    MatrixResults r;
    try {
        r.version = j.at("version").get<int>();
        if (r.version != kResultsSchemaVersion)
            throw InvalidInput("unsupported results version " + std::to_string(r.version));
        for (const auto& c : j.at("cells")) {
            CellResult cell;
            cell.cell = c.at("cell").get<std::string>();
            cell.tasks = c.at("tasks").get<std::string>();
            cell.strategy = c.at("strategy").get<std::string>();
            cell.seeds = c.at("seeds").get<std::vector<std::uint64_t>>();
            cell.direct = path_from_json(c.at("direct"));
            cell.indirect = path_from_json(c.at("indirect"));
            cell.errors = c.at("errors").get<std::vector<std::string>>();
            r.cells.push_back(std::move(cell));
        }
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("results file: ") + e.what());
    }
    return r;
}

MatrixResults load_matrix_results(const fs::path& path) {
    const fs::path file = fs::is_directory(path) ? path / "results.json" : path;
    try {
        return matrix_results_from_json(json::parse(read_file(file)));
    } catch (const json::parse_error& e) {
        throw InvalidInput(file.string() + ": " + e.what());
    }
}

std::optional<double> percent_change(double base, double model) {
    if (base == 0.0) return std::nullopt;
    return 100.0 * (base - model) / base;
}

ChangeTable change_table(const MatrixResults& results, const std::string& baseline, const std::string& path) {
    if (path != "direct" && path != "indirect") throw InvalidRequest("unknown pose path '" + path + "'");
    const auto pick = [&](const CellResult& c) -> const PathStats& { return path == "direct" ? c.direct : c.indirect; };
    const CellResult* base = results.find(baseline);
    if (!base) throw InvalidRequest("baseline cell " + baseline + " is not in the results");
    if (!pick(*base).present || pick(*base).scores.empty())
        throw InvalidRequest("baseline cell " + baseline + " has no " + path + " pose scores");

    ChangeTable t;
    t.path = path;
    t.baseline = baseline;
    t.baseline_median = pick(*base).median;
    for (const auto& c : results.cells) {
        const PathStats& s = pick(c);
        if (!s.present || s.scores.empty()) continue;
        t.rows.push_back({c.cell, s.median, s.iqr, s.failures, percent_change(t.baseline_median, median_or_zero(s))});
    }
    return t;
}

std::string to_csv(const ChangeTable& table) {
    std::ostringstream os;
    os.precision(10);
    os << "cell,path,median,iqr,failures,change_pct\n";
    for (const auto& r : table.rows) {
        os << r.cell << ',' << table.path << ',' << r.median << ',' << r.iqr << ',' << r.failures << ',';
        if (r.change_pct) os << *r.change_pct;
        else os << "undefined";
        os << '\n';
    }
    return os.str();
}

json report(const MatrixResults& results, const std::string& direct_baseline, const std::string& indirect_baseline,
            const fs::path& out_dir) {
    fs::create_directories(out_dir);
    json out{{"version", kResultsSchemaVersion}, {"tables", json::array()}, {"notes", json::array()}};
    const std::pair<std::string, std::string> jobs[] = {{"direct", direct_baseline}, {"indirect", indirect_baseline}};
    for (const auto& [path, baseline] : jobs) {
        try {
            const ChangeTable t = change_table(results, baseline, path);
            write_text(out_dir / ("change_" + path + ".csv"), to_csv(t));
            json rows = json::array();
            for (const auto& r : t.rows)
                rows.push_back({{"cell", r.cell}, {"median", r.median}, {"iqr", r.iqr}, {"failures", r.failures},
                                {"change_pct", optional_json(r.change_pct)}});
            out["tables"].push_back(
                {{"path", path}, {"baseline", baseline}, {"baseline_median", t.baseline_median}, {"rows", rows}});
        } catch (const InvalidRequest& e) {
            out["notes"].push_back(path + " table skipped: " + e.what());
        }
    }
    write_text(out_dir / "report.json", out.dump(1) + "\n");
    return out;
}

}  // namespace mtlpose
