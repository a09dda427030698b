#include "adaptfed/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "adaptfed/finite_diff.hpp"
#include "adaptfed/hypernet.hpp"
#include "adaptfed/model.hpp"

namespace adaptfed {

namespace {

ModelConfig check_model() {
    ModelConfig m;
    m.input_dim = 6;
    m.d = 4;
    m.blocks = 2;
    m.focal_levels = 2;
    m.tokens = 3;
    m.num_classes = 3;
    return m;
}

HyperNetConfig check_hyper(std::size_t rank) {
    HyperNetConfig h;
    h.embed_dim = 3;
    h.hidden = 5;
    h.trunk_depth = 2;
    h.rank = rank;
    return h;
}

Batch random_batch(const ModelConfig& m, std::size_t n, Rng& rng) {
    Batch b;
    b.inputs = Matrix(n, m.input_dim);
    b.inputs.data = rng.sample_gaussian(0, 1, n * m.input_dim);
    for (std::size_t i = 0; i < n; ++i) b.labels.push_back(int(rng.next_below(m.num_classes)));
    return b;
}

/// Resample until every trunk pre-activation is well away from the ReLU
/// kink, where central differences would be invalid.
ClientEmbedding kink_free_embedding(const std::vector<HyperNet::Layer>& trunk, std::size_t dim,
                                    Rng& rng) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        ClientEmbedding z{rng.sample_gaussian(0, 1, dim)};
        auto a = z.z;
        bool ok = true;
        for (const auto& layer : trunk) {
            std::vector<double> pre(layer.b);
            for (std::size_t i = 0; i < layer.w.rows && ok; ++i)
                for (std::size_t j = 0; j < layer.w.cols; ++j)
                    pre[j] += a[i] * layer.w.at(i, j);
            for (double p : pre)
                if (std::fabs(p) < 1e-3) ok = false;
            if (!ok) break;
            for (double& p : pre) p = std::max(p, 0.0);
            a = pre;
        }
        if (ok) return z;
    }
    throw std::runtime_error("kink_free_embedding: no clean draw found");
}

struct Recorder {
    GradCheckReport& report;
    void note(const std::string& name, double rel) {
        report.max_rel = std::max(report.max_rel, rel);
        std::ostringstream line;
        line << (rel < 1e-4 ? "ok   " : "FAIL ") << name << "  max_rel=" << rel;
        report.lines.push_back(line.str());
    }
};

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed) {
    GradCheckReport report;
    Recorder rec{report};
    auto m = check_model();

    for (std::uint64_t s = 0; s < 5; ++s) {
        Rng rng = Rng(seed).split("model", s);
        auto params = init_model_params(m, rng);
        auto batch = random_batch(m, 5, rng);
        auto lg = loss_and_grad(m, params, batch);
        auto copy = params;
        auto f = [&](const std::vector<double>& theta) {
            copy.unflatten(theta);
            return loss_and_grad(m, copy, batch).loss;
        };
        auto numeric = finite_diff_grad(f, params.flatten(), 1e-6);
        rec.note("model grad seed " + std::to_string(s),
                 max_rel_error(lg.grad.flatten(), numeric, 1e-3));
    }

    for (std::size_t rank : {std::size_t{0}, std::size_t{2}}) {
        std::string kind = rank == 0 ? "full" : "lowrank";
        for (std::uint64_t s = 0; s < 5; ++s) {
            Rng rng = Rng(seed).split("hyper-" + kind, s);
            auto gen = make_generator(check_hyper(rank), m, rng);
            const auto& trunk = rank == 0 ? static_cast<HyperNet*>(gen.get())->trunk
                                          : static_cast<LowRankHyperNet*>(gen.get())->trunk;
            auto z = kink_free_embedding(trunk, 3, rng);
            ModulationParams dp = zero_modulation(m);
            dp.unflatten(rng.sample_gaussian(0, 1, dp.scalar_count()));
            auto g = gen->pullback(z, dp);

            auto fz = [&](const std::vector<double>& zv) {
                return dot(gen->generate({zv}).flatten(), dp.flatten());
            };
            rec.note(kind + " pullback z seed " + std::to_string(s),
                     max_rel_error(g.z, finite_diff_grad(fz, z.z, 1e-6), 1e-3));

            auto clone = gen->clone();
            auto fphi = [&](const std::vector<double>& phi) {
                clone->unflatten(phi);
                return dot(clone->generate(z).flatten(), dp.flatten());
            };
            rec.note(kind + " pullback phi seed " + std::to_string(s),
                     max_rel_error(g.phi, finite_diff_grad(fphi, gen->flatten(), 1e-6), 1e-3));
        }
    }

    for (std::uint64_t s = 0; s < 5; ++s) {
        Rng rng = Rng(seed).split("embed-path", s);
        auto gen = make_generator(check_hyper(0), m, rng);
        auto xi = init_model_params(m, rng).xi;
        auto batch = random_batch(m, 4, rng);
        auto z = kink_free_embedding(static_cast<HyperNet*>(gen.get())->trunk, 3, rng);
        ModelParams params{gen->generate(z), xi};
        auto lg = loss_and_grad(m, params, batch);
        auto analytic = gen->pullback(z, lg.grad.p).z;
        auto f = [&](const std::vector<double>& zv) {
            ModelParams p{gen->generate({zv}), xi};
            return loss_and_grad(m, p, batch).loss;
        };
        rec.note("embedding path seed " + std::to_string(s),
                 max_rel_error(analytic, finite_diff_grad(f, z.z, 1e-6), 1e-3));
    }

    report.passed = report.max_rel < 1e-4;
    return report;
}

}  // namespace adaptfed
