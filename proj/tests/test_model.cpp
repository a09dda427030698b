#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "adaptfed/finite_diff.hpp"
#include "adaptfed/model.hpp"
#include "adaptfed/rng.hpp"

using namespace adaptfed;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.input_dim = 6;
    cfg.d = 4;
    cfg.blocks = 2;
    cfg.focal_levels = 2;
    cfg.tokens = 3;
    cfg.num_classes = 3;
    return cfg;
}

Batch random_batch(const ModelConfig& cfg, std::size_t n, Rng& rng) {
    Batch b;
    b.inputs = Matrix(n, cfg.input_dim);
    b.inputs.data = rng.sample_gaussian(0, 1, b.inputs.size());
    b.labels.resize(n);
    for (auto& y : b.labels) y = static_cast<int>(rng.next_below(cfg.num_classes));
    return b;
}

// Straight-line re-implementation of the forward formulas, written with
// plain nested loops over per-sample token vectors. Used as the oracle for
// the golden-logits check; kept independent of the Matrix-based fast path.
std::vector<std::vector<double>> oracle_forward(const ModelConfig& cfg, const ModelParams& p,
                                                const Batch& batch) {
    const std::size_t T = cfg.tokens, d = cfg.d, L = cfg.gate_levels();
    std::vector<std::vector<double>> logits;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        // embed: x_row (input_dim) * E (input_dim x T*d), then split into T tokens
        std::vector<std::vector<double>> tok(T, std::vector<double>(d, 0.0));
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t i = 0; i < cfg.input_dim; ++i)
                    tok[t][j] += batch.inputs.at(s, i) * p.xi.embed.at(i, t * d + j);

        for (std::size_t b = 0; b < cfg.blocks; ++b) {
            auto project = [&](const Matrix& w) {
                std::vector<std::vector<double>> out(T, std::vector<double>(w.cols, 0.0));
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t j = 0; j < w.cols; ++j)
                        for (std::size_t i = 0; i < d; ++i)
                            out[t][j] += tok[t][i] * w.at(i, j);
                return out;
            };
            auto q = project(p.p.pq[b]);
            auto c = project(p.p.pk[b]);
            auto gl = project(p.xi.wg[b]);

            std::vector<std::vector<double>> next(T, std::vector<double>(d));
            for (std::size_t t = 0; t < T; ++t) {
                // softmax gates
                double mx = gl[t][0];
                for (std::size_t l = 1; l < L; ++l) mx = std::max(mx, gl[t][l]);
                double sum = 0;
                std::vector<double> g(L);
                for (std::size_t l = 0; l < L; ++l) {
                    g[l] = std::exp(gl[t][l] - mx);
                    sum += g[l];
                }
                for (auto& v : g) v /= sum;

                // gated sum of level means
                std::vector<double> u(d, 0.0);
                for (std::size_t l = 0; l < L; ++l) {
                    std::size_t lo = 0, hi = T - 1;
                    if (l + 1 < L) {
                        const std::size_t r = l + 1;
                        lo = t > r ? t - r : 0;
                        hi = std::min(T - 1, t + r);
                    }
                    for (std::size_t j = 0; j < d; ++j) {
                        double mean = 0;
                        for (std::size_t tt = lo; tt <= hi; ++tt) mean += c[tt][j];
                        mean /= static_cast<double>(hi - lo + 1);
                        u[j] += g[l] * mean;
                    }
                }
                // modulator and interaction
                std::vector<double> m(d, 0.0);
                for (std::size_t j = 0; j < d; ++j)
                    for (std::size_t i = 0; i < d; ++i) m[j] += u[i] * p.p.pv[b].at(i, j);
                std::vector<double> y(d);
                for (std::size_t j = 0; j < d; ++j) {
                    double o = 0;
                    for (std::size_t i = 0; i < d; ++i)
                        o += q[t][i] * m[i] * p.xi.wo[b].at(i, j);
                    y[j] = tok[t][j] + o;
                }
                // layer norm
                double mu = 0;
                for (double v : y) mu += v;
                mu /= static_cast<double>(d);
                double var = 0;
                for (double v : y) var += (v - mu) * (v - mu);
                var /= static_cast<double>(d);
                const double inv = 1.0 / std::sqrt(var + 1e-5);
                for (std::size_t j = 0; j < d; ++j)
                    next[t][j] = p.xi.ln_scale[b][j] * (y[j] - mu) * inv + p.xi.ln_shift[b][j];
            }
            tok = next;
        }

        std::vector<double> pooled(d, 0.0);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j) pooled[j] += tok[t][j] / static_cast<double>(T);
        std::vector<double> row(cfg.num_classes, 0.0);
        for (std::size_t k = 0; k < cfg.num_classes; ++k) {
            for (std::size_t j = 0; j < d; ++j) row[k] += pooled[j] * p.xi.head.at(j, k);
            row[k] += p.xi.head_bias[k];
        }
        logits.push_back(row);
    }
    return logits;
}

}  // namespace

TEST_CASE("zero weights with head bias: logits are the bias per row") {
    ModelConfig cfg = tiny_config();
    ModelParams params = zero_model_params(cfg);
    params.xi.head_bias = {0.5, -1.0, 2.0};
    Rng rng(3);
    Batch b = random_batch(cfg, 4, rng);
    auto cache = forward(cfg, params, b);
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t k = 0; k < 3; ++k)
            CHECK(cache.logits.at(s, k) == doctest::Approx(params.xi.head_bias[k]));
}

TEST_CASE("single token: gates have no effect on the modulator") {
    ModelConfig cfg = tiny_config();
    cfg.tokens = 1;
    cfg.input_dim = 4;
    Rng rng(5);
    ModelParams params = init_model_params(cfg, rng);
    Batch b = random_batch(cfg, 3, rng);
    auto before = forward(cfg, params, b).logits;
    // all focal levels equal the token itself, so perturbing Wg is inert
    auto perturbed = params;
    for (auto& m : perturbed.xi.wg)
        for (auto& v : m.data) v += rng.next_double() - 0.5;
    auto after = forward(cfg, perturbed, b).logits;
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(before.data[i] == doctest::Approx(after.data[i]).epsilon(1e-12));
}

TEST_CASE("fixed-seed logits match the straight-line oracle") {
    ModelConfig cfg = tiny_config();
    cfg.blocks = 2;
    cfg.d = 4;
    Rng rng(2024);
    ModelParams params = init_model_params(cfg, rng);
    Batch b = random_batch(cfg, 3, rng);
    auto fast = forward(cfg, params, b).logits;
    auto oracle = oracle_forward(cfg, params, b);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t k = 0; k < cfg.num_classes; ++k)
            CHECK(fast.at(s, k) == doctest::Approx(oracle[s][k]).epsilon(1e-12));
}

TEST_CASE("uniform logits give loss = ln K") {
    ModelConfig cfg = tiny_config();
    ModelParams params = zero_model_params(cfg);
    Rng rng(8);
    Batch b = random_batch(cfg, 5, rng);
    auto lg = loss_and_grad(cfg, params, b);
    CHECK(std::fabs(lg.loss - std::log(3.0)) < 1e-12);
}

TEST_CASE("analytic gradient matches finite differences") {
    ModelConfig cfg = tiny_config();
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
        Rng rng(seed);
        ModelParams params = init_model_params(cfg, rng);
        Batch b = random_batch(cfg, 3, rng);
        auto lg = loss_and_grad(cfg, params, b);
        auto flat = params.flatten();
        auto f = [&](const std::vector<double>& x) {
            ModelParams pp = zero_model_params(cfg);
            pp.unflatten(x);
            ForwardCache cache = forward(cfg, pp, b);
            // recompute loss only
            double loss = 0;
            const std::size_t K = cfg.num_classes;
            for (std::size_t s = 0; s < b.size(); ++s) {
                const double* row = &cache.logits.data[s * K];
                double mx = row[0];
                for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
                double sum = 0;
                for (std::size_t k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
                loss -= row[static_cast<std::size_t>(b.labels[s])] - mx - std::log(sum);
            }
            return loss / static_cast<double>(b.size());
        };
        auto numeric = finite_diff_grad(f, flat, 1e-6);
        auto analytic = lg.grad.flatten();
        CHECK(max_rel_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("gradient of a dead-path parameter is zero") {
    // zero inputs and zero embed: every activation entering Wo is zero
    ModelConfig cfg = tiny_config();
    Rng rng(12);
    ModelParams params = init_model_params(cfg, rng);
    Batch b;
    b.inputs = Matrix(2, cfg.input_dim);
    b.labels = {0, 1};
    params.xi.embed = Matrix(cfg.input_dim, cfg.tokens * cfg.d);
    auto lg = loss_and_grad(cfg, params, b);
    for (const auto& m : lg.grad.xi.wo)
        for (double v : m.data) CHECK(v == 0.0);
    for (const auto& m : lg.grad.p.pq)
        for (double v : m.data) CHECK(v == 0.0);
}

TEST_CASE("split/join round trip is bitwise") {
    ModelConfig cfg = tiny_config();
    Rng rng(21);
    ModelParams params = init_model_params(cfg, rng);
    auto flat = params.flatten();
    ModelParams restored = zero_model_params(cfg);
    restored.unflatten(flat);
    CHECK(restored.flatten() == flat);
}

TEST_CASE("softmax gate rows sum to one") {
    ModelConfig cfg = tiny_config();
    Rng rng(31);
    ModelParams params = init_model_params(cfg, rng);
    Batch b = random_batch(cfg, 2, rng);
    auto cache = forward(cfg, params, b);
    for (const auto& bc : cache.block)
        for (std::size_t r = 0; r < bc.g.rows; ++r) {
            double sum = 0;
            for (std::size_t l = 0; l < bc.g.cols; ++l) sum += bc.g.at(r, l);
            CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
}

TEST_CASE("sgd_step") {
    ModelConfig cfg = tiny_config();
    Rng rng(41);
    ModelParams params = init_model_params(cfg, rng);
    ModelParams grad = init_model_params(cfg, rng);

    SUBCASE("alpha 0 leaves params unchanged") {
        auto before = params.flatten();
        sgd_step(params, grad, 0.0);
        CHECK(params.flatten() == before);
    }
    SUBCASE("scalar arithmetic") {
        ModelParams p2 = zero_model_params(cfg), g2 = zero_model_params(cfg);
        p2.xi.head_bias[0] = 1.0;
        g2.xi.head_bias[0] = 2.0;
        sgd_step(p2, g2, 0.1);
        CHECK(p2.xi.head_bias[0] == doctest::Approx(0.8));
    }
    SUBCASE("loss decreases monotonically over steps") {
        Batch b = random_batch(cfg, 8, rng);
        double prev = loss_and_grad(cfg, params, b).loss;
        for (int step = 0; step < 10; ++step) {
            auto lg = loss_and_grad(cfg, params, b);
            sgd_step(params, lg.grad, 0.05);
            double now = loss_and_grad(cfg, params, b).loss;
            CHECK(now <= prev + 1e-9);
            prev = now;
        }
    }
}

TEST_CASE("forward rejects bad shapes and labels") {
    ModelConfig cfg = tiny_config();
    ModelParams params = zero_model_params(cfg);
    Batch b;
    b.inputs = Matrix(2, cfg.input_dim + 1);
    b.labels = {0, 1};
    CHECK_THROWS_AS(forward(cfg, params, b), std::invalid_argument);
    b.inputs = Matrix(2, cfg.input_dim);
    b.labels = {0, 99};
    CHECK_THROWS_AS(forward(cfg, params, b), std::invalid_argument);
}
