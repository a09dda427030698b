#pragma once

#include <string>
#include <vector>

#include "adaptfed/datagen.hpp"
#include "adaptfed/federation.hpp"
#include "adaptfed/sfda.hpp"

namespace adaptfed {

/// Everything one run needs, parsed from a single JSON file. Unknown keys are
/// rejected so a typo cannot silently fall back to a default.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    Strategy strategy = Strategy::AdaptFed;
    SyntheticTaskSpec task;

    // "per-client" keeps make_synthetic's shards; the pool partitioners
    // regroup one big IID pool instead.
    std::string partition_scheme = "per-client";
    double partition_alpha = 0.3;
    double partition_beta = 10.0;

    RoundConfig rounds;
    ModelConfig model;
    HyperNetConfig hypernet;

    bool run_sfda = false;  // present "sfda" section switches to the SFDA loop
    SfdaConfig sfda;
    std::size_t sfda_rounds = 30;
    double sfda_lr = 0.01;
    std::size_t pretrain_epochs = 20;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

/// Builds the per-client shards the config describes (synthetic generation
/// plus optional repartitioning).
std::vector<ClientState> build_clients(const ExperimentConfig& cfg);

struct ExperimentResult {
    std::vector<MetricRecord> metrics;  // initial state + every eval round
    ServerState server;                 // final
    double final_acc = 0.0;             // weighted mean test accuracy
    double final_loss = 0.0;
};

/// C rounds with periodic evaluation (round 0, every eval_every, and final).
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct SfdaExperimentResult {
    double pretrained_acc = 0.0;  // frozen pre-trained model on target tests
    double adapted_acc = 0.0;     // after the unsupervised adaptation rounds
    std::vector<SfdaRoundStats> last_round_stats;
    std::size_t resident_scalars = 0;  // the adaptation phase's state audit
    std::size_t expected_resident_scalars = 0;
};

/// Source-free adaptation pipeline: labeled source pool with client-style
/// augmentation for pre-training, then per-client pseudo-label + KD + SWA
/// rounds on unlabeled target shards. Each target shard restricts itself to a
/// per-client subset of the classes and rotates coordinate pairs by angles
/// scaled with task.noise_sigma.
SfdaExperimentResult run_sfda_experiment(const ExperimentConfig& cfg);

/// metrics.jsonl, summary.csv and a final checkpoint under output_dir
/// (all written atomically). Returns the metrics path.
std::string write_outputs(const ExperimentResult& result, const ExperimentConfig& cfg);

}  // namespace adaptfed
