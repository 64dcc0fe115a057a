#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtlpose/scene.hpp"

namespace mtlpose {

enum class Strategy { EW, RLW, DWA, GradNorm };

/// Lower-case names: "ew", "rlw", "dwa", "gradnorm". Parsing is case-insensitive.
std::string strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

struct BalancerConfig {
    double temperature = 2.0;  // DWA
    double alpha = 1.5;        // GradNorm asymmetry
    double lr_w = 0.025;       // GradNorm weight learning rate
    double min_weight = 1e-4;
};

struct WeightState {
    Strategy strategy = Strategy::EW;
    int tasks = 1;
    BalancerConfig config;
    std::vector<double> weights;
    std::vector<double> loss_prev;   // epoch-mean losses of epoch t-1
    std::vector<double> loss_prev2;  // and of t-2
    int epochs_recorded = 0;
    std::vector<double> initial_losses;  // GradNorm L_i(0), captured on its first step
    std::vector<std::string> notes;      // warnings for the run log, drained by the caller
};

std::vector<double> ew_weights(int k);
/// K standard normals, softmax, times K.
std::vector<double> rlw_weights(int k, Rng& rng);
/// lambda_k = K softmax(r / T) with r_k = L_k(t-1) / L_k(t-2); a zero L_k(t-2) gives r_k = 1.
std::vector<double> dwa_weights(std::span<const double> loss_prev, std::span<const double> loss_prev2,
                                double temperature, std::vector<std::string>* notes = nullptr);

/// Throws StrategyNotApplicable for GradNorm with fewer than two tasks, InvalidConfig for k < 1.
WeightState make_weight_state(Strategy s, int k, const BalancerConfig& config = {});

/// Pushes one epoch's mean task losses into the DWA history.
void record_epoch_losses(WeightState& state, std::span<const double> means);
/// Weights for the start of `epoch`: DWA recomputes from history (all ones for epochs 0 and 1).
void begin_epoch(WeightState& state, int epoch);
/// Per-iteration refresh: RLW draws fresh weights; other strategies are left alone.
void begin_iteration(WeightState& state, Rng& rng);

/// GradNorm targets and loss for given per-task shared-layer gradient norms.
struct GradNormTerms {
    std::vector<double> g;        // G_i = w_i ||grad_i||
    std::vector<double> target;   // mean(G) r_i^alpha
    double loss = 0.0;            // sum |G_i - target_i|
};
/// grad_norms are the unweighted ||d L_i / d W_shared||.
GradNormTerms gradnorm_terms(std::span<const double> weights, std::span<const double> losses,
                             std::span<const double> initial_losses, std::span<const double> grad_norms, double alpha);

/// d(sum_i |G_i - target_i|) / d w_i with the targets held fixed: sign(G_i - target_i) ||grad_i||.
std::vector<double> gradnorm_weight_gradient(const GradNormTerms& terms, std::span<const double> grad_norms);

/// One GradNorm update: gradient step on w with frozen targets, clamp, renormalize to sum K.
/// Captures L_i(0) on the first call. Returns the GradNorm loss before the update.
double gradnorm_step(WeightState& state, std::span<const double> losses, std::span<const double> grad_norms);

}  // namespace mtlpose
