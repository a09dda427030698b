#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adaptfed/checkpoint.hpp"
#include "adaptfed/datagen.hpp"
#include "adaptfed/hypernet.hpp"
#include "adaptfed/model.hpp"
#include "adaptfed/rng.hpp"

namespace adaptfed {

enum class Strategy { AdaptFed, VanillaTailored, FedAvg, LocalOnly };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct ClientState {
    std::size_t id = 0;  // dense 0..N-1
    LabeledPool train;
    LabeledPool test;
    std::size_t group = 0;

    std::size_t samples() const { return train.size(); }
};

std::vector<ClientState> to_clients(const std::vector<ClientData>& data);

struct RoundConfig {
    std::size_t rounds = 200;       // C
    std::size_t local_epochs = 5;   // L
    double local_lr = 0.01;         // alpha
    double global_lr = 0.01;        // beta
    double sample_fraction = 1.0;   // f, cohort = ceil(f*N) without replacement
    std::size_t batch_size = 32;
    WeightingMode weighting = WeightingMode::Cohort;
    std::size_t eval_every = 10;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
};

/// What the server holds between rounds. Under AdaptFed no per-client P is
/// retained: projections are regenerated from (gen, embeddings) on demand.
/// local_models are client-resident state kept here only because this is a
/// single-process simulation; serialize() reflects the strategy's true
/// server-side footprint.
struct ServerState {
    ModelConfig model_cfg;
    Strategy strategy = Strategy::AdaptFed;
    std::size_t round = 0;

    ModelParams global;                       // .xi is the shared xi-bar; .p used by FedAvg only
    std::unique_ptr<Generator> gen;           // AdaptFed
    std::vector<ClientEmbedding> embeddings;  // AdaptFed, one per client
    std::vector<ModulationParams> persisted_p;  // VanillaTailored, one per client
    std::vector<ModelParams> local_models;      // LocalOnly (client-resident)

    ServerState clone() const;

    /// The model client `id` would run right now.
    ModelParams client_params(std::size_t id) const;

    /// Server-resident state only (local_models excluded for LocalOnly).
    Checkpoint serialize() const;
};

ServerState init_server(const ModelConfig& mcfg, const HyperNetConfig& hcfg, Strategy strategy,
                        std::size_t num_clients, Rng& rng);

struct MetricRecord {
    std::size_t round = 0;
    std::size_t client = 0;
    std::string strategy;
    double loss = 0.0;
    double acc = 0.0;
    std::size_t tx_scalars = 0;  // scalars moved server<->client this round

    std::string to_jsonl() const;  // one JSON object, schema_version field included
};

/// One communication round (Algorithm: sample cohort, broadcast, local
/// training, aggregate, update generator/embeddings). round_index seeds the
/// cohort draw and the per-client training streams; cfg.workers > 1 runs
/// cohort members in parallel with a client-id-ordered reduction, so results
/// are identical to workers=1.
void run_round(ServerState& server, const std::vector<ClientState>& clients,
               const RoundConfig& cfg, std::size_t round_index);

struct EvalSummary {
    std::vector<MetricRecord> per_client;
    double mean_loss = 0.0;  // weighted by m_i / S_total
    double mean_acc = 0.0;
};

EvalSummary evaluate(const ServerState& server, const std::vector<ClientState>& clients,
                     bool test_split);

struct AdaptResult {
    ClientEmbedding z;
    std::vector<double> acc_per_epoch;  // epochs+1 entries; [0] is the prior draw
};

/// Novel-client adaptation: phi and xi-bar stay frozen; only the new
/// embedding is trained by pulling the model's P-gradient back through the
/// generator. eval_pool may equal the shard. AdaptFed servers only.
AdaptResult adapt_new_client(const ServerState& server, const LabeledPool& shard,
                             const LabeledPool& eval_pool, std::size_t epochs, double alpha,
                             const RoundConfig& cfg);

}  // namespace adaptfed
