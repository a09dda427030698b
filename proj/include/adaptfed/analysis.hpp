#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "adaptfed/federation.hpp"
#include "adaptfed/hypernet.hpp"
#include "adaptfed/model.hpp"
#include "adaptfed/rng.hpp"

namespace adaptfed {

/// Inputs to the generalization-bound evaluator. The VC dimension is
/// user-supplied: this tool evaluates the bound, it never derives capacity.
struct BoundInputs {
    double total_samples = 0;  // M
    double clients = 0;        // N
    double d_vc = 0;
    double delta = 0;          // failure probability, in (0,1)
    double l_h = 0, l_phi = 0, l_z = 0, l_xi = 0;  // Lipschitz constants
    double r_h = 0, r_t = 0;                       // radii
};

struct BoundTerms {
    double client_term = 0;    // sqrt(M/2 * ln(N/delta))
    double capacity_term = 0;  // sqrt(d N / M * ln(e M / d))
    double hypernet_term = 0;  // L_h R_h (L_phi + L_z)
    double drift_term = 0;     // L_xi R_t
    double total = 0;

    std::string pretty() const;
};

/// Natural log throughout. Throws std::domain_error naming the violated term.
BoundTerms generalization_bound(const BoundInputs& b);

BoundInputs bound_inputs_from_json(const std::string& text);

struct CostReport {
    std::string strategy;
    std::size_t server_resident = 0;          // scalars held between rounds
    std::size_t tx_down = 0;                  // per round per cohort client
    std::size_t tx_up = 0;
    std::size_t per_client_personalized = 0;  // server-side per-client growth
};

CostReport cost_report(const ModelConfig& mcfg, const HyperNetConfig& hcfg, std::size_t clients,
                       Strategy strategy);

/// Smallest N at which the generator's parameter total drops below vanilla
/// tailoring's N * blocks * 3 * d^2.
std::size_t crossover_clients(const ModelConfig& mcfg, const HyperNetConfig& hcfg);

std::string cost_report_csv(const std::vector<CostReport>& reports);

struct LipschitzEstimates {
    double l_z = 0;
    double l_phi = 0;
};

/// Max over sampled pairs of ||h(phi, z) - h(phi, z')|| / ||z - z'|| (and the
/// phi-side analogue), inputs drawn uniformly in a ball of the given radius.
/// A reported estimate, never a certified constant.
LipschitzEstimates empirical_lipschitz(const Generator& gen, double radius, std::size_t samples,
                                       Rng& rng);

/// CSV with header client,group,z0..z{D-1}; one row per client.
std::string export_embeddings_csv(const ServerState& server,
                                  const std::vector<std::size_t>& groups);

}  // namespace adaptfed
