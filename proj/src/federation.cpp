#include "adaptfed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace adaptfed {

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::AdaptFed: return "adaptfed";
        case Strategy::VanillaTailored: return "vanilla-tailored";
        case Strategy::FedAvg: return "fedavg";
        case Strategy::LocalOnly: return "local-only";
    }
    throw std::logic_error("unknown strategy");
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "adaptfed") return Strategy::AdaptFed;
    if (name == "vanilla-tailored") return Strategy::VanillaTailored;
    if (name == "fedavg") return Strategy::FedAvg;
    if (name == "local-only") return Strategy::LocalOnly;
    throw std::invalid_argument("unknown strategy: " + name);
}

std::vector<ClientState> to_clients(const std::vector<ClientData>& data) {
    std::vector<ClientState> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        out[i].id = i;
        out[i].train = data[i].train;
        out[i].test = data[i].test;
        out[i].group = data[i].group;
    }
    return out;
}

ServerState ServerState::clone() const {
    ServerState copy;
    copy.model_cfg = model_cfg;
    copy.strategy = strategy;
    copy.round = round;
    copy.global = global;
    if (gen) copy.gen = gen->clone();
    copy.embeddings = embeddings;
    copy.persisted_p = persisted_p;
    copy.local_models = local_models;
    return copy;
}

ModelParams ServerState::client_params(std::size_t id) const {
    switch (strategy) {
        case Strategy::AdaptFed:
            return ModelParams{gen->generate(embeddings.at(id)), global.xi};
        case Strategy::VanillaTailored:
            return ModelParams{persisted_p.at(id), global.xi};
        case Strategy::FedAvg:
            return global;
        case Strategy::LocalOnly:
            return local_models.at(id);
    }
    throw std::logic_error("unknown strategy");
}

Checkpoint ServerState::serialize() const {
    Checkpoint ckpt;
    ckpt.kind = strategy_name(strategy);
    ckpt.sections.emplace_back("xi", global.xi.flatten());
    if (strategy == Strategy::AdaptFed) {
        ckpt.sections.emplace_back("phi", gen->flatten());
        std::vector<double> z;
        for (const auto& e : embeddings) z.insert(z.end(), e.z.begin(), e.z.end());
        ckpt.sections.emplace_back("embeddings", std::move(z));
    } else if (strategy == Strategy::VanillaTailored) {
        std::vector<double> p;
        for (const auto& pp : persisted_p) {
            auto f = pp.flatten();
            p.insert(p.end(), f.begin(), f.end());
        }
        ckpt.sections.emplace_back("persisted_p", std::move(p));
    } else if (strategy == Strategy::FedAvg) {
        ckpt.sections.emplace_back("p", global.p.flatten());
    }
    return ckpt;
}

ServerState init_server(const ModelConfig& mcfg, const HyperNetConfig& hcfg, Strategy strategy,
                        std::size_t num_clients, Rng& rng) {
    ServerState s;
    s.model_cfg = mcfg;
    s.strategy = strategy;
    Rng model_rng = rng.split("model-init");
    s.global = init_model_params(mcfg, model_rng);
    if (strategy == Strategy::AdaptFed) {
        Rng hyper_rng = rng.split("hypernet-init");
        s.gen = make_generator(hcfg, mcfg, hyper_rng);
        for (std::size_t i = 0; i < num_clients; ++i) {
            Rng e = rng.split("embed-init", i);
            s.embeddings.push_back({e.sample_gaussian(0, 1, hcfg.embed_dim)});
        }
    } else if (strategy == Strategy::VanillaTailored) {
        s.persisted_p.assign(num_clients, s.global.p);
    } else if (strategy == Strategy::LocalOnly) {
        s.local_models.assign(num_clients, s.global);
    }
    return s;
}

std::string MetricRecord::to_jsonl() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["round"] = round;
    j["client"] = client;
    j["strategy"] = strategy;
    j["loss"] = loss;
    j["acc"] = acc;
    j["tx_scalars"] = tx_scalars;
    return j.dump();
}

namespace {

Batch make_batch(const LabeledPool& pool, const std::vector<std::size_t>& order, std::size_t from,
                 std::size_t to) {
    Batch b;
    b.inputs = Matrix(to - from, pool.inputs.cols);
    for (std::size_t i = from; i < to; ++i) {
        for (std::size_t j = 0; j < pool.inputs.cols; ++j)
            b.inputs.at(i - from, j) = pool.inputs.at(order[i], j);
        b.labels.push_back(pool.labels[order[i]]);
    }
    return b;
}

/// L epochs of mini-batch SGD on the client's shard; mutates params in place.
void local_train(const ModelConfig& mcfg, ModelParams& params, const LabeledPool& shard,
                 const RoundConfig& cfg, Rng rng, std::size_t round_index, std::size_t client_id) {
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        auto order = rng.permutation(shard.size());
        for (std::size_t from = 0; from < order.size(); from += cfg.batch_size) {
            std::size_t to = std::min(from + cfg.batch_size, order.size());
            auto batch = make_batch(shard, order, from, to);
            LossGrad lg;
            try {
                lg = loss_and_grad(mcfg, params, batch);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("round " + std::to_string(round_index) + ", client " +
                                         std::to_string(client_id) + ": " + e.what());
            }
            sgd_step(params, lg.grad, cfg.local_lr);
        }
    }
}

struct TrainedClient {
    std::size_t id = 0;
    std::size_t samples = 0;
    ModelParams params;       // after L epochs
    // Cotangent pulled back through the generator: P^0 - P^L, i.e. the
    // accumulated local descent direction with the sign such that the
    // server's phi/z step reduces client loss (AdaptFed only).
    ModulationParams delta_p;
};

std::size_t per_round_tx(const ServerState& s) {
    std::size_t xi = s.global.xi.scalar_count();
    std::size_t p = s.global.p.scalar_count();
    switch (s.strategy) {
        case Strategy::AdaptFed:
            return (s.gen->transmitted_scalars_down() + xi) + (p + xi);
        case Strategy::VanillaTailored:
            return 2 * xi;
        case Strategy::FedAvg:
            return 2 * (p + xi);
        case Strategy::LocalOnly:
            return 0;
    }
    return 0;
}

/// Blend the cohort's flat vectors into base: Cohort weighting renormalizes
/// over the cohort; Global weighting uses m_i / S_total and leaves the
/// residual mass on the previous value.
std::vector<double> weighted_blend(const std::vector<double>& base,
                                   const std::vector<const std::vector<double>*>& vecs,
                                   const std::vector<std::size_t>& samples, WeightingMode mode,
                                   std::size_t total_samples) {
    std::size_t cohort_total = 0;
    for (std::size_t m : samples) cohort_total += m;
    double denom = double(mode == WeightingMode::Cohort ? cohort_total : total_samples);
    // base + sum w (v - base): the residual mass stays on base exactly, so a
    // round with unchanged client parameters leaves the server bitwise intact.
    std::vector<double> out = base;
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        double w = double(samples[i]) / denom;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += w * ((*vecs[i])[k] - base[k]);
    }
    return out;
}

}  // namespace

void run_round(ServerState& server, const std::vector<ClientState>& clients,
               const RoundConfig& cfg, std::size_t round_index) {
    if (clients.empty()) throw std::runtime_error("run_round: no clients");
    std::size_t n = clients.size();
    std::size_t cohort_size = std::size_t(std::ceil(cfg.sample_fraction * double(n)));
    cohort_size = std::max<std::size_t>(1, std::min(cohort_size, n));
    Rng cohort_rng = Rng(cfg.seed).split("cohort", round_index);
    auto perm = cohort_rng.permutation(n);
    std::vector<std::size_t> cohort(perm.begin(), perm.begin() + cohort_size);
    std::sort(cohort.begin(), cohort.end());

    // Local phase: each cohort member owns its parameter copy and a
    // per-(round, client) seeded stream, so the schedule cannot affect
    // results; the reduction below walks cohort in ascending client id.
    std::vector<TrainedClient> trained(cohort_size);
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (;;) {
            std::size_t k = next.fetch_add(1);
            if (k >= cohort_size) return;
            std::size_t id = cohort[k];
            TrainedClient& t = trained[k];
            t.id = id;
            t.samples = clients[id].samples();
            t.params = server.client_params(id);
            ModulationParams p0 = t.params.p;
            Rng rng = Rng(cfg.seed).split("round", round_index).split("client", id);
            local_train(server.model_cfg, t.params, clients[id].train, cfg, rng, round_index, id);
            if (server.strategy == Strategy::AdaptFed) {
                t.delta_p = t.params.p;
                auto f0 = p0.flatten();
                auto f1 = t.delta_p.flatten();
                for (std::size_t i = 0; i < f1.size(); ++i) f1[i] = f0[i] - f1[i];
                t.delta_p.unflatten(f1);
            }
        }
    };
    std::size_t workers = std::max<std::size_t>(1, cfg.workers);
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }

    std::size_t total_samples = 0;
    for (const auto& c : clients) total_samples += c.samples();
    std::vector<std::size_t> cohort_samples;
    for (const auto& t : trained) cohort_samples.push_back(t.samples);

    if (server.strategy == Strategy::LocalOnly) {
        for (auto& t : trained) server.local_models[t.id] = std::move(t.params);
    } else if (server.strategy == Strategy::FedAvg) {
        std::vector<std::vector<double>> flats;
        for (const auto& t : trained) flats.push_back(t.params.flatten());
        std::vector<const std::vector<double>*> refs;
        for (const auto& f : flats) refs.push_back(&f);
        server.global.unflatten(weighted_blend(server.global.flatten(), refs, cohort_samples,
                                               cfg.weighting, total_samples));
    } else {
        // AdaptFed and VanillaTailored aggregate the shared block only.
        std::vector<std::vector<double>> flats;
        for (const auto& t : trained) flats.push_back(t.params.xi.flatten());
        std::vector<const std::vector<double>*> refs;
        for (const auto& f : flats) refs.push_back(&f);
        server.global.xi.unflatten(weighted_blend(server.global.xi.flatten(), refs, cohort_samples,
                                                  cfg.weighting, total_samples));
        if (server.strategy == Strategy::VanillaTailored) {
            for (auto& t : trained) server.persisted_p[t.id] = std::move(t.params.p);
        } else {
            std::vector<CohortDelta> deltas;
            for (auto& t : trained)
                deltas.push_back({t.id, std::move(t.delta_p), t.samples});
            server_update(*server.gen, server.embeddings, deltas, cfg.global_lr, cfg.weighting,
                          total_samples);
        }
    }
    server.round = round_index + 1;
}

EvalSummary evaluate(const ServerState& server, const std::vector<ClientState>& clients,
                     bool test_split) {
    EvalSummary out;
    std::size_t total = 0;
    for (const auto& c : clients) total += c.samples();
    std::size_t tx = per_round_tx(server);
    for (const auto& c : clients) {
        const LabeledPool& pool = test_split ? c.test : c.train;
        Batch batch;
        batch.inputs = pool.inputs;
        batch.labels = pool.labels;
        auto res = evaluate_batch(server.model_cfg, server.client_params(c.id), batch);
        MetricRecord rec;
        rec.round = server.round;
        rec.client = c.id;
        rec.strategy = strategy_name(server.strategy);
        rec.loss = res.loss;
        rec.acc = res.accuracy;
        rec.tx_scalars = tx;
        out.per_client.push_back(rec);
        double w = double(c.samples()) / double(total);
        out.mean_loss += w * res.loss;
        out.mean_acc += w * res.accuracy;
    }
    return out;
}

AdaptResult adapt_new_client(const ServerState& server, const LabeledPool& shard,
                             const LabeledPool& eval_pool, std::size_t epochs, double alpha,
                             const RoundConfig& cfg) {
    if (server.strategy != Strategy::AdaptFed || !server.gen)
        throw std::runtime_error("adapt_new_client: server has no generator");
    if (shard.size() == 0) throw std::runtime_error("adapt_new_client: empty shard");

    AdaptResult out;
    // A draw from the embedding prior, not its mean: at exactly zero every
    // ReLU trunk unit sits on its kink (biases start at zero) and the
    // embedding gradient vanishes identically.
    Rng init_rng = Rng(cfg.seed).split("adapt-init");
    out.z.z = init_rng.sample_gaussian(0, 1, server.gen->config().embed_dim);

    auto eval_acc = [&]() {
        Batch b;
        b.inputs = eval_pool.inputs;
        b.labels = eval_pool.labels;
        ModelParams params{server.gen->generate(out.z), server.global.xi};
        return evaluate_batch(server.model_cfg, params, b).accuracy;
    };
    out.acc_per_epoch.push_back(eval_acc());
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        Rng rng = Rng(cfg.seed).split("adapt", epoch);
        auto order = rng.permutation(shard.size());
        for (std::size_t from = 0; from < order.size(); from += cfg.batch_size) {
            std::size_t to = std::min(from + cfg.batch_size, order.size());
            auto batch = make_batch(shard, order, from, to);
            ModelParams params{server.gen->generate(out.z), server.global.xi};
            auto lg = loss_and_grad(server.model_cfg, params, batch);
            auto g = server.gen->pullback(out.z, lg.grad.p);
            for (std::size_t i = 0; i < out.z.z.size(); ++i) out.z.z[i] -= alpha * g.z[i];
        }
        out.acc_per_epoch.push_back(eval_acc());
    }
    return out;
}

}  // namespace adaptfed
