#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "mtlpose/balancer.hpp"
#include "mtlpose/errors.hpp"

using namespace mtlpose;

namespace {

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// Shared layer W feeding two task losses; returns ||dL_i/dW|| for each task.
std::vector<double> toy_grad_norms(const Tensor& x, Parameter& w, double scale0, double scale1) {
    std::vector<double> out;
    for (double s : {scale0, scale1}) {
        w.zero_grad();
        Tape t;
        const Var h = t.matmul(t.constant(x), t.parameter(w));  // [2, 3]
        const Var l = out.empty() ? t.reduce_mean(t.mul(h, h)) : t.reduce_mean(t.sigmoid(h));
        t.backward(t.scale(l, s));
        double n = 0.0;
        for (double g : w.grad) n += g * g;
        out.push_back(std::sqrt(n));
    }
    return out;
}

}  // namespace

TEST_CASE("equal weighting") {
    CHECK(ew_weights(4) == std::vector<double>{1, 1, 1, 1});
    CHECK(ew_weights(1) == std::vector<double>{1});
    for (int k = 1; k < 10; ++k) CHECK(sum(ew_weights(k)) == k);
    CHECK_THROWS_AS(ew_weights(0), InvalidConfig);
}

TEST_CASE("random loss weighting") {
    Rng rng(1), again(1);
    for (int i = 0; i < 1000; ++i) {
        const auto w = rlw_weights(3, rng);
        for (double v : w) CHECK(v > 0.0);
        CHECK(std::abs(sum(w) - 3.0) < 1e-12);
        CHECK(w == rlw_weights(3, again));
    }
}

TEST_CASE("random loss weighting is symmetric in expectation") {
    Rng rng(2);
    std::vector<double> mean(4, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto w = rlw_weights(4, rng);
        for (int k = 0; k < 4; ++k) mean[k] += w[k] / n;
    }
    for (double m : mean) CHECK(std::abs(m - 1.0) < 0.02);
}

TEST_CASE("dynamic weight average") {
    const std::vector<double> flat{0.5, 0.5, 0.5};
    const auto ones = dwa_weights(flat, std::vector<double>{1.0, 1.0, 1.0}, 2.0);
    for (double v : ones) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));

    const auto w = dwa_weights(std::vector<double>{2.0, 1.0}, std::vector<double>{1.0, 1.0}, 2.0);
    const double e1 = std::exp(1.0), e2 = std::exp(0.5);
    CHECK(w[0] == doctest::Approx(2 * e1 / (e1 + e2)).epsilon(1e-14));
    CHECK(w[0] == doctest::Approx(1.2449).epsilon(1e-4));
    CHECK(w[1] == doctest::Approx(0.7551).epsilon(1e-4));
    CHECK(std::abs(sum(w) - 2.0) < 1e-12);

    std::vector<std::string> notes;
    const auto z = dwa_weights(std::vector<double>{0.3, 0.0}, std::vector<double>{0.3, 0.0}, 2.0, &notes);
    CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(notes.size() == 1);
}

TEST_CASE("dwa schedule over epochs") {
    WeightState s = make_weight_state(Strategy::DWA, 2);
    begin_epoch(s, 0);
    CHECK(s.weights == std::vector<double>{1, 1});
    record_epoch_losses(s, std::vector<double>{1.0, 1.0});
    begin_epoch(s, 1);
    CHECK(s.weights == std::vector<double>{1, 1});
    record_epoch_losses(s, std::vector<double>{2.0, 1.0});
    begin_epoch(s, 2);
    CHECK(s.weights[0] == doctest::Approx(1.2449).epsilon(1e-4));
}

TEST_CASE("gradnorm needs two tasks") {
    CHECK_THROWS_AS(make_weight_state(Strategy::GradNorm, 1), StrategyNotApplicable);
    CHECK_NOTHROW(make_weight_state(Strategy::GradNorm, 2));
}

TEST_CASE("gradnorm fixed point") {
    WeightState s = make_weight_state(Strategy::GradNorm, 3);
    const std::vector<double> losses{0.7, 0.2, 1.1}, norms{0.1, 0.1, 0.1};
    gradnorm_step(s, losses, norms);
    for (int i = 0; i < 5; ++i) {
        const double l = gradnorm_step(s, losses, norms);
        CHECK(l < 1e-15);
        for (double w : s.weights) CHECK(std::abs(w - 1.0) < 1e-9);
    }
}

TEST_CASE("gradnorm moves weight towards the slower task") {
    WeightState s = make_weight_state(Strategy::GradNorm, 2);
    gradnorm_step(s, std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 1.0});
    gradnorm_step(s, std::vector<double>{0.5, 1.0}, std::vector<double>{1.0, 1.0});
    CHECK(s.weights[0] < s.weights[1]);
    CHECK(std::abs(sum(s.weights) - 2.0) < 1e-12);
}

TEST_CASE("scaling a task loss doubles its shared gradient norm") {
    std::mt19937_64 rng(3);
    const Tensor x = gradcheck::random_tensor({2, 4}, rng);
    Parameter w("shared", gradcheck::random_tensor({4, 3}, rng));
    const auto base = toy_grad_norms(x, w, 1.0, 1.0);
    const auto doubled = toy_grad_norms(x, w, 2.0, 1.0);
    const std::vector<double> ones{1.0, 1.0}, losses{1.0, 1.0};
    const auto t1 = gradnorm_terms(ones, losses, losses, base, 1.5);
    const auto t2 = gradnorm_terms(ones, losses, losses, doubled, 1.5);
    CHECK(t2.g[0] == 2.0 * t1.g[0]);
    CHECK(t2.g[1] == t1.g[1]);
}

TEST_CASE("gradnorm weight gradient matches finite differences") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.3, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = gradcheck::random_tensor({2, 4}, rng);
        Parameter w("shared", gradcheck::random_tensor({4, 3}, rng));
        const auto norms = toy_grad_norms(x, w, 1.0, 1.0);
        const std::vector<double> weights{u(rng), u(rng)}, losses{u(rng), u(rng)}, initial{u(rng), u(rng)};
        const GradNormTerms terms = gradnorm_terms(weights, losses, initial, norms, 1.5);
        const auto frozen = [&](const std::vector<double>& wv) {
            double l = 0.0;
            for (std::size_t i = 0; i < wv.size(); ++i) l += std::abs(wv[i] * norms[i] - terms.target[i]);
            return l;
        };
        CHECK(gradcheck::rel_error(gradnorm_weight_gradient(terms, norms), gradcheck::central_diff(frozen, weights)) < 1e-4);
    }
}

TEST_CASE("every strategy keeps weights positive and summing to K") {
    std::mt19937_64 sim(5);
    std::uniform_real_distribution<double> loss(0.0, 3.0), norm(0.0, 5.0);
    for (Strategy st : {Strategy::EW, Strategy::RLW, Strategy::DWA, Strategy::GradNorm}) {
        for (int k : {2, 3, 4}) {
            WeightState s = make_weight_state(st, k);
            Rng rng(6);
            double worst = 0.0;
            bool positive = true;
            for (int step = 0; step < 1000; ++step) {
                if (step % 10 == 0) {
                    std::vector<double> means(k);
                    for (double& m : means) m = loss(sim);
                    record_epoch_losses(s, means);
                    begin_epoch(s, step / 10);
                }
                begin_iteration(s, rng);
                if (st == Strategy::GradNorm) {
                    std::vector<double> l(k), n(k);
                    for (int i = 0; i < k; ++i) {
                        l[i] = loss(sim) + 1e-3;
                        n[i] = norm(sim);
                    }
                    gradnorm_step(s, l, n);
                }
                for (double w : s.weights) positive = positive && w > 0.0;
                worst = std::max(worst, std::abs(sum(s.weights) - k));
            }
            INFO(strategy_name(st) << " K=" << k);
            CHECK(positive);
            CHECK(worst < 1e-9);
        }
    }
}

TEST_CASE("strategy names") {
    for (Strategy s : {Strategy::EW, Strategy::RLW, Strategy::DWA, Strategy::GradNorm})
        CHECK(parse_strategy(strategy_name(s)) == s);
    CHECK(parse_strategy("DWA") == Strategy::DWA);
    CHECK_THROWS_AS(parse_strategy("uncertainty"), InvalidConfig);
}
