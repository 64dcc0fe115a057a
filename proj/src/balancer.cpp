#include "mtlpose/balancer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "mtlpose/errors.hpp"

namespace mtlpose {

namespace {

void renormalize(std::vector<double>& w) {
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    const double k = static_cast<double>(w.size());
    for (double& x : w) x *= k / sum;
}

std::vector<double> scaled_softmax(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> w(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) sum += (w[i] = std::exp(z[i] - m));
    const double k = static_cast<double>(z.size());
    for (double& x : w) x = k * x / sum;
    return w;
}

void require_tasks(std::span<const double> v, int k, const char* what) {
    if (static_cast<int>(v.size()) != k)
        throw InvalidInput(std::string(what) + ": expected " + std::to_string(k) + " values, got " +
                           std::to_string(v.size()));
}

}  // namespace

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::EW: return "ew";
        case Strategy::RLW: return "rlw";
        case Strategy::DWA: return "dwa";
        case Strategy::GradNorm: return "gradnorm";
    }
    return "?";
}

Strategy parse_strategy(std::string_view name) {
    std::string s(name);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "ew") return Strategy::EW;
    if (s == "rlw") return Strategy::RLW;
    if (s == "dwa") return Strategy::DWA;
    if (s == "gradnorm" || s == "gn") return Strategy::GradNorm;
    throw InvalidConfig("unknown weighting strategy '" + std::string(name) + "'");
}

std::vector<double> ew_weights(int k) {
    if (k < 1) throw InvalidConfig("need at least one task");
    return std::vector<double>(static_cast<std::size_t>(k), 1.0);
}

std::vector<double> rlw_weights(int k, Rng& rng) {
    if (k < 1) throw InvalidConfig("need at least one task");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> z(static_cast<std::size_t>(k));
    for (double& x : z) x = normal(rng);
    return scaled_softmax(z);
}

std::vector<double> dwa_weights(std::span<const double> loss_prev, std::span<const double> loss_prev2,
                                double temperature, std::vector<std::string>* notes) {
    if (loss_prev.size() != loss_prev2.size() || loss_prev.empty())
        throw InvalidInput("dwa_weights: loss histories must be non-empty and equally long");
    if (!(temperature > 0.0)) throw InvalidConfig("DWA temperature must be positive");
    std::vector<double> z(loss_prev.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        double r = 1.0;
        if (loss_prev2[i] == 0.0) {
            if (notes) notes->push_back("dwa: task " + std::to_string(i) + " had zero loss two epochs ago; using r = 1");
        } else {
            r = loss_prev[i] / loss_prev2[i];
        }
        z[i] = r / temperature;
    }
    return scaled_softmax(z);
}

WeightState make_weight_state(Strategy s, int k, const BalancerConfig& config) {
    if (k < 1) throw InvalidConfig("need at least one task");
    if (s == Strategy::GradNorm && k < 2)
        throw StrategyNotApplicable("GradNorm needs at least two tasks, got " + std::to_string(k));
    WeightState st;
    st.strategy = s;
    st.tasks = k;
    st.config = config;
    st.weights = ew_weights(k);
    return st;
}

void record_epoch_losses(WeightState& state, std::span<const double> means) {
    require_tasks(means, state.tasks, "record_epoch_losses");
    state.loss_prev2 = state.loss_prev;
    state.loss_prev.assign(means.begin(), means.end());
    ++state.epochs_recorded;
}

void begin_epoch(WeightState& state, int epoch) {
    if (state.strategy != Strategy::DWA) return;
    if (epoch < 2 || state.epochs_recorded < 2) {
        state.weights = ew_weights(state.tasks);
        return;
    }
    state.weights = dwa_weights(state.loss_prev, state.loss_prev2, state.config.temperature, &state.notes);
}

void begin_iteration(WeightState& state, Rng& rng) {
    if (state.strategy == Strategy::RLW) state.weights = rlw_weights(state.tasks, rng);
}

GradNormTerms gradnorm_terms(std::span<const double> weights, std::span<const double> losses,
                             std::span<const double> initial_losses, std::span<const double> grad_norms, double alpha) {
    const std::size_t k = weights.size();
    if (losses.size() != k || initial_losses.size() != k || grad_norms.size() != k)
        throw InvalidInput("gradnorm_terms: per-task inputs differ in length");
    GradNormTerms out;
    out.g.resize(k);
    out.target.resize(k);
    std::vector<double> ratio(k);
    double g_mean = 0.0;
    double r_mean = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        out.g[i] = weights[i] * grad_norms[i];
        ratio[i] = initial_losses[i] > 0.0 ? losses[i] / initial_losses[i] : 1.0;
        g_mean += out.g[i];
        r_mean += ratio[i];
    }
    g_mean /= static_cast<double>(k);
    r_mean /= static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double r = r_mean > 0.0 ? ratio[i] / r_mean : 1.0;
        out.target[i] = g_mean * std::pow(r, alpha);
        out.loss += std::abs(out.g[i] - out.target[i]);
    }
    return out;
}

std::vector<double> gradnorm_weight_gradient(const GradNormTerms& terms, std::span<const double> grad_norms) {
    if (terms.g.size() != grad_norms.size()) throw InvalidInput("gradnorm_weight_gradient: length mismatch");
    std::vector<double> out(grad_norms.size(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double diff = terms.g[i] - terms.target[i];
        // Differences at rounding level count as balanced: sign(0) = 0.
        if (std::abs(diff) <= 1e-12 * std::max(std::abs(terms.g[i]), std::abs(terms.target[i]))) continue;
        out[i] = (diff > 0.0 ? 1.0 : -1.0) * grad_norms[i];
    }
    return out;
}

double gradnorm_step(WeightState& state, std::span<const double> losses, std::span<const double> grad_norms) {
    if (state.strategy != Strategy::GradNorm) throw InvalidRequest("gradnorm_step on a non-GradNorm state");
    require_tasks(losses, state.tasks, "gradnorm_step losses");
    require_tasks(grad_norms, state.tasks, "gradnorm_step gradient norms");
    for (std::size_t i = 0; i < losses.size(); ++i)
        if (!std::isfinite(losses[i]) || !std::isfinite(grad_norms[i]))
            throw TrainingDiverged("gradnorm_step: non-finite loss or gradient norm for task " + std::to_string(i));
    if (state.initial_losses.empty()) state.initial_losses.assign(losses.begin(), losses.end());

    const GradNormTerms terms =
        gradnorm_terms(state.weights, losses, state.initial_losses, grad_norms, state.config.alpha);
    const std::vector<double> grad = gradnorm_weight_gradient(terms, grad_norms);
    for (std::size_t i = 0; i < state.weights.size(); ++i) {
        state.weights[i] -= state.config.lr_w * grad[i];
        state.weights[i] = std::max(state.weights[i], state.config.min_weight);
    }
    renormalize(state.weights);
    return terms.loss;
}

}  // namespace mtlpose
