#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlpose/balancer.hpp"
#include "mtlpose/dataset.hpp"
#include "mtlpose/heatmap.hpp"
#include "mtlpose/network.hpp"

namespace mtlpose {

/// Score given to a sample whose pose could not be recovered.
inline constexpr double kFailureSpeed = std::numbers::pi + 1.0;
inline constexpr int kResultsSchemaVersion = 1;

/// The twelve task strings of the experiment matrix, canonical spelling.
const std::vector<std::string>& default_task_strings();

struct TrainHyper {
    int epochs = 10;
    int batch_size = 16;
    double lr = 5e-4;
    double lr_step1 = 0.75;  // fractions of the epoch count
    double lr_step2 = 0.90;
    double lr_factor = 0.1;

    void validate() const;
    /// Learning rate for a zero-based epoch.
    double lr_at(int epoch) const;
};

struct ExperimentSpec {
    TaskSet tasks;
    Strategy strategy = Strategy::EW;
    std::uint64_t seed = 1;
    TrainHyper hyper;
    BalancerConfig balancer;
    std::filesystem::path dataset;
    double tau = kDefaultConfidenceTau;
    bool validate_each_epoch = true;

    /// "PH-dwa" style key.
    std::string cell() const;
    /// Throws InvalidConfig / StrategyNotApplicable.
    void validate() const;
};

struct PathStats {
    bool present = false;
    std::vector<double> scores;  // per test sample, failures carry kFailureSpeed
    double median = 0.0;
    double iqr = 0.0;
    std::size_t failures = 0;
};

struct StepLog {
    std::int64_t step = 0;
    int epoch = 0;
    std::vector<double> losses;
    std::vector<double> weights;
    double total = 0.0;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    std::vector<double> mean_losses;
    double mean_total = 0.0;
    std::optional<double> val_direct_median;
    std::optional<double> val_indirect_median;
};

struct RunResult {
    std::string cell;
    std::string tasks;
    std::string strategy;
    std::uint64_t seed = 0;
    std::vector<std::string> task_order;  // loss/weight column order
    PathStats direct;
    PathStats indirect;
    std::vector<EpochLog> epochs;
    std::vector<StepLog> steps;
    std::vector<std::string> notes;
};

/// Linear-interpolation quantile (position (n - 1) p in the sorted sample).
double quantile(std::span<const double> values, double p);
/// Fills median and IQR from scores.
void summarize(PathStats& stats);

struct TrainOutput {
    Network network;
    RunResult result;
};

/// Trains on the train split, evaluates on the test split. When out_dir is non-empty the
/// checkpoint (model.ckpt), result.json and log.jsonl are written there.
/// Throws TrainingDiverged with the offending step, weights and losses.
TrainOutput train(const ExperimentSpec& spec, const std::filesystem::path& out_dir = {});
TrainOutput train(const ExperimentSpec& spec, const Dataset& data, const std::filesystem::path& out_dir = {});

struct EvalOptions {
    bool direct = true;
    bool indirect = true;
    double tau = kDefaultConfidenceTau;
    int batch_size = 16;
};

/// Scores every sample for each requested path the network supports.
/// Throws InvalidRequest when a requested path has no head and the other path is absent too.
RunResult evaluate(Network& net, std::span<const SampleRecord> samples, const CameraModel& camera,
                   const TargetModel& model, const EvalOptions& options = {});
RunResult evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                              Split split = Split::Test, const EvalOptions& options = {});

nlohmann::json to_json(const RunResult& r);
RunResult run_result_from_json(const nlohmann::json& j);

struct MatrixConfig {
    std::filesystem::path dataset;
    std::vector<std::string> tasks = default_task_strings();
    std::vector<Strategy> strategies{Strategy::EW, Strategy::RLW, Strategy::DWA, Strategy::GradNorm};
    std::vector<std::uint64_t> seeds{1};
    TrainHyper hyper;
    BalancerConfig balancer;

    static MatrixConfig from_json(const nlohmann::json& j);
};

struct CellResult {
    std::string cell;
    std::string tasks;
    std::string strategy;
    std::vector<std::uint64_t> seeds;
    PathStats direct;    // pooled over seeds
    PathStats indirect;
    std::vector<std::string> errors;
};

struct MatrixResults {
    int version = kResultsSchemaVersion;
    std::vector<CellResult> cells;

    const CellResult* find(const std::string& cell) const;
};

/// (task, strategy) cells to run: single-task cells collapse onto EW; duplicates dropped.
std::vector<std::pair<TaskSet, Strategy>> matrix_cells(const MatrixConfig& config, std::vector<std::string>* notes = nullptr);

/// Runs every cell and seed under out_dir/<cell>/seed-<s>/, skipping runs with a DONE marker.
/// A failing run is recorded on its cell and the rest continue. Writes out_dir/results.json.
MatrixResults run_matrix(const MatrixConfig& config, const std::filesystem::path& out_dir);

nlohmann::json to_json(const MatrixResults& r);
MatrixResults matrix_results_from_json(const nlohmann::json& j);
/// Accepts a results directory or the results.json file itself.
MatrixResults load_matrix_results(const std::filesystem::path& path);

/// 100 (base - model) / base; empty when base is zero.
std::optional<double> percent_change(double base, double model);

struct ChangeRow {
    std::string cell;
    double median = 0.0;
    double iqr = 0.0;
    std::size_t failures = 0;
    std::optional<double> change_pct;
};

struct ChangeTable {
    std::string path;      // "direct" or "indirect"
    std::string baseline;  // cell key
    double baseline_median = 0.0;
    std::vector<ChangeRow> rows;
};

/// Change of every cell's median on `path` relative to the baseline cell's median on the same path.
/// Throws InvalidRequest when the baseline cell or its path is missing.
ChangeTable change_table(const MatrixResults& results, const std::string& baseline, const std::string& path);
std::string to_csv(const ChangeTable& table);

/// Writes change_direct.csv (baseline on P), change_indirect.csv (baseline on H) and report.json.
/// A missing baseline for one path skips that table and is noted in report.json.
nlohmann::json report(const MatrixResults& results, const std::string& direct_baseline,
                      const std::string& indirect_baseline, const std::filesystem::path& out_dir);

}  // namespace mtlpose
