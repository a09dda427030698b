#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "adaptfed/matrix.hpp"
#include "adaptfed/rng.hpp"

namespace adaptfed {

/// A labeled sample pool. coarse_labels is empty unless the pool carries a
/// coarse->fine hierarchy (needed only by the Pachinko partitioner).
struct LabeledPool {
    Matrix inputs;                   // size x input_dim
    std::vector<int> labels;         // fine class indices
    std::vector<int> coarse_labels;  // optional, same length as labels

    std::size_t size() const { return labels.size(); }
    int num_classes() const;

    /// One line per sample: label[,coarse],feature... with a header row.
    std::string to_csv() const;
};

/// Assignment of every pool sample to one of num_clients clients (0-based).
struct PartitionPlan {
    std::size_t num_clients = 0;
    std::vector<std::size_t> assignments;  // per sample, client in [0, num_clients)

    std::vector<std::size_t> client_counts() const;
    std::vector<std::vector<std::size_t>> client_indices() const;

    /// {"num_clients": N, "clients": {"0": [sample indices], ...}}
    std::string to_json() const;
};

/// Per class, each client gets a share a ~ U(0.4, 0.6); every sample of the
/// class goes to client i with probability a_i / sum_j a_j. If any client
/// ends up empty the whole draw is retried (max 100 times, then throws).
PartitionPlan pathological_partition(const LabeledPool& pool, std::size_t num_clients, Rng& rng);

/// Per class, client shares ~ Dirichlet(alpha * 1_N); same assignment and
/// empty-shard retry rule as pathological_partition. Small alpha means high
/// heterogeneity.
PartitionPlan dirichlet_partition(const LabeledPool& pool, std::size_t num_clients, double alpha,
                                  Rng& rng);

/// Two-stage hierarchical shares: per client, Dirichlet(alpha) over coarse
/// classes times Dirichlet(beta) over the fine classes within each coarse
/// class. Requires pool.coarse_labels. Same retry rule.
PartitionPlan pachinko_partition(const LabeledPool& pool, std::size_t num_clients, double alpha,
                                 double beta, Rng& rng);

enum class ShiftMode { None, LabelSkew, Rotation, Noise };

/// Synthetic class-conditional Gaussian clusters with controllable per-client
/// shift. Reproducible from seed alone.
struct SyntheticTaskSpec {
    std::size_t num_classes = 10;
    std::size_t input_dim = 32;
    std::size_t clients = 10;
    std::size_t samples_per_client = 200;
    ShiftMode shift = ShiftMode::None;
    std::size_t skew_groups = 1;   // label-skew: clients split into this many groups
    double noise_sigma = 0.0;      // noise mode: max per-client noise std
    double cluster_std = 0.5;      // within-cluster spread
    std::uint64_t seed = 0;
};

struct ClientData {
    LabeledPool train;
    LabeledPool test;
    std::size_t group = 0;  // label-skew group (0 when not in skew mode)
};

/// Per-client train/test pools with an 80/20 split.
///   label-skew: clients in group g see labels remapped through group g's
///     cluster permutation (group 0 keeps the identity mapping)
///   rotation:   per-client orthogonal rotation of the inputs (client 0
///     keeps the identity)
///   noise:      client i adds Gaussian(0, sigma_i) noise with sigma_i
///     ramping linearly from 0 to noise_sigma across clients
std::vector<ClientData> make_synthetic(const SyntheticTaskSpec& spec);

/// The label permutation used by a given skew group (identity for group 0).
std::vector<std::size_t> skew_permutation(const SyntheticTaskSpec& spec, std::size_t group);

/// A shard for a client that never joined the federation: same class centers
/// and group permutation as make_synthetic(spec), fresh samples drawn from
/// shard_seed. Rotation/noise shift modes are not applied.
ClientData make_novel_shard(const SyntheticTaskSpec& spec, std::uint64_t shard_seed,
                            std::size_t group);

}  // namespace adaptfed
