#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtlpose/dataset.hpp"
#include "mtlpose/errors.hpp"
#include "mtlpose/harness.hpp"
#include "mtlpose/tensor_io.hpp"

using namespace mtlpose;
namespace fs = std::filesystem;

namespace {

void print_path(const char* name, const PathStats& s) {
    if (!s.present) return;
    std::printf("%-8s median %.6f  iqr %.6f  failures %zu/%zu\n", name, s.median, s.iqr, s.failures, s.scores.size());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-task spacecraft pose estimation toolkit"};
    app.require_subcommand(1);

    DatasetConfig gen;
    auto* generate = app.add_subcommand("generate", "Render a synthetic dataset");
    generate->add_option("--out", gen.out, "Output directory (absent or empty)")->required();
    generate->add_option("--n", gen.n, "Number of samples")->check(CLI::PositiveNumber);
    generate->add_option("--seed", gen.seed, "Dataset seed");
    generate->add_option("--size", gen.image_size, "Image size in pixels")->check(CLI::PositiveNumber);
    generate->add_option("--d-min", gen.d_min, "Minimum range (m)");
    generate->add_option("--d-max", gen.d_max, "Maximum range (m)");
    generate->add_option("--threads", gen.threads, "Worker threads (0: all cores)");

    ExperimentSpec spec;
    std::string tasks = "P";
    std::string strategy = "ew";
    fs::path train_out;
    auto* train_cmd = app.add_subcommand("train", "Train one experiment cell and evaluate it on the test split");
    train_cmd->add_option("--dataset", spec.dataset, "Dataset directory")->required();
    train_cmd->add_option("--tasks", tasks, "Active heads, e.g. P, PH, PHBS");
    train_cmd->add_option("--strategy", strategy, "ew, rlw, dwa or gradnorm");
    train_cmd->add_option("--seed", spec.seed, "Run seed");
    train_cmd->add_option("--out", train_out, "Run directory")->required();
    train_cmd->add_option("--epochs", spec.hyper.epochs, "Epochs");
    train_cmd->add_option("--bs", spec.hyper.batch_size, "Batch size");
    train_cmd->add_option("--lr", spec.hyper.lr, "Initial learning rate");
    train_cmd->add_option("--temperature", spec.balancer.temperature, "DWA temperature");
    train_cmd->add_option("--alpha", spec.balancer.alpha, "GradNorm asymmetry");
    train_cmd->add_option("--lr-w", spec.balancer.lr_w, "GradNorm weight learning rate");
    train_cmd->add_option("--tau", spec.tau, "Heatmap confidence threshold");

    fs::path ckpt, eval_dataset, eval_out;
    std::string split = "test";
    double eval_tau = kDefaultConfidenceTau;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a dataset split");
    evaluate_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    evaluate_cmd->add_option("--dataset", eval_dataset, "Dataset directory")->required();
    evaluate_cmd->add_option("--out", eval_out, "Result JSON file")->required();
    evaluate_cmd->add_option("--split", split, "train, val or test");
    evaluate_cmd->add_option("--tau", eval_tau, "Heatmap confidence threshold");

    fs::path matrix_config, matrix_out;
    auto* matrix = app.add_subcommand("matrix", "Run the experiment matrix");
    matrix->add_option("--config", matrix_config, "Matrix config JSON")->required();
    matrix->add_option("--out", matrix_out, "Output directory")->required();

    fs::path results_dir, report_out;
    std::string baseline = "P-ew";
    std::string indirect_baseline = "H-ew";
    auto* report_cmd = app.add_subcommand("report", "Percent-change tables against baseline cells");
    report_cmd->add_option("--results", results_dir, "Matrix output directory")->required();
    report_cmd->add_option("--baseline", baseline, "Baseline cell for the direct path");
    report_cmd->add_option("--indirect-baseline", indirect_baseline, "Baseline cell for the indirect path");
    report_cmd->add_option("--out", report_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*generate) {
            const DatasetManifest m = generate_dataset(gen);
            std::printf("wrote %zu samples (train %zu, val %zu, test %zu) to %s\n", m.counts.total(), m.counts.train,
                        m.counts.val, m.counts.test, gen.out.string().c_str());
        } else if (*train_cmd) {
            spec.tasks = TaskSet::parse(tasks);
            spec.strategy = parse_strategy(strategy);
            const TrainOutput out = train(spec, train_out);
            const auto& r = out.result;
            std::printf("%s seed %llu: epoch-0 loss %.6f, final loss %.6f\n", r.cell.c_str(),
                        static_cast<unsigned long long>(r.seed), r.epochs.front().mean_total,
                        r.epochs.back().mean_total);
            print_path("direct", r.direct);
            print_path("indirect", r.indirect);
        } else if (*evaluate_cmd) {
            Split s = Split::Test;
            if (split == "train") s = Split::Train;
            else if (split == "val") s = Split::Val;
            else if (split != "test") throw InvalidRequest("unknown split '" + split + "'");
            EvalOptions eo;
            eo.tau = eval_tau;
            const RunResult r = evaluate_checkpoint(ckpt, eval_dataset, s, eo);
            write_file(eval_out, to_json(r).dump(1) + "\n");
            print_path("direct", r.direct);
            print_path("indirect", r.indirect);
        } else if (*matrix) {
            const MatrixConfig cfg = MatrixConfig::from_json(nlohmann::json::parse(read_file(matrix_config)));
            const MatrixResults res = run_matrix(cfg, matrix_out);
            for (const auto& c : res.cells) {
                std::printf("%-10s", c.cell.c_str());
                if (c.direct.present) std::printf("  direct %.6f", c.direct.median);
                if (c.indirect.present) std::printf("  indirect %.6f", c.indirect.median);
                if (!c.errors.empty()) std::printf("  (%zu failed runs)", c.errors.size());
                std::printf("\n");
            }
        } else if (*report_cmd) {
            const nlohmann::json rep = report(load_matrix_results(results_dir), baseline, indirect_baseline, report_out);
            for (const auto& t : rep["tables"]) {
                std::printf("%s path, baseline %s (median %.6f)\n", t["path"].get<std::string>().c_str(),
                            t["baseline"].get<std::string>().c_str(), t["baseline_median"].get<double>());
                for (const auto& r : t["rows"]) {
                    if (r["change_pct"].is_null())
                        std::printf("  %-10s undefined\n", r["cell"].get<std::string>().c_str());
                    else
                        std::printf("  %-10s %+8.2f%%\n", r["cell"].get<std::string>().c_str(),
                                    r["change_pct"].get<double>());
                }
            }
            for (const auto& n : rep["notes"]) std::printf("note: %s\n", n.get<std::string>().c_str());
        }
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
