#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "adaptfed/matrix.hpp"
#include "adaptfed/model.hpp"
#include "adaptfed/rng.hpp"

namespace adaptfed {

/// Client embedding z, consumed by the generator.
struct ClientEmbedding {
    std::vector<double> z;
};

struct HyperNetConfig {
    std::size_t embed_dim = 32;   // D
    std::size_t hidden = 100;     // D_h, trunk width
    std::size_t trunk_depth = 2;  // hidden layers
    std::size_t rank = 0;         // 0 = full generation; >0 = low-rank variant
    bool relu = true;             // trunk activation; identity when false for tests
    // Init-time trunk amplification; the heads carry a compensating
    // 1/gain^depth so generated projections start at model scale while the
    // server's head updates take effect gain^(2*depth) faster.
    double trunk_gain = 1.8;
};

struct GeneratorGrads {
    std::vector<double> phi;  // same layout as Generator::flatten()
    std::vector<double> z;
};

/// Server-side generator h(phi; z) mapping a client embedding to that
/// client's modulation projections, plus the vector-Jacobian pullback used
/// by the aggregation protocol.
class Generator {
public:
    virtual ~Generator() = default;

    virtual ModulationParams generate(const ClientEmbedding& z) const = 0;

    /// Vector-Jacobian products: grad_phi = (dP/dphi)^T dp, grad_z = (dP/dz)^T dp.
    virtual GeneratorGrads pullback(const ClientEmbedding& z, const ModulationParams& dp) const = 0;

    virtual std::vector<double> flatten() const = 0;
    virtual void unflatten(const std::vector<double>& flat) = 0;
    virtual std::size_t scalar_count() const = 0;

    /// Scalars sent server -> client per round for the generated block.
    virtual std::size_t transmitted_scalars_down() const = 0;

    virtual std::string kind() const = 0;
    virtual std::unique_ptr<Generator> clone() const = 0;

    const HyperNetConfig& config() const { return hcfg_; }
    const ModelConfig& model_config() const { return mcfg_; }

protected:
    Generator(HyperNetConfig hcfg, ModelConfig mcfg) : hcfg_(hcfg), mcfg_(mcfg) {}
    HyperNetConfig hcfg_;
    ModelConfig mcfg_;
};

/// Fully connected trunk with one linear head per (block, projection) pair,
/// each emitting the d*d entries of that projection matrix.
class HyperNet : public Generator {
public:
    HyperNet(const HyperNetConfig& hcfg, const ModelConfig& mcfg, Rng& rng);

    ModulationParams generate(const ClientEmbedding& z) const override;
    GeneratorGrads pullback(const ClientEmbedding& z, const ModulationParams& dp) const override;
    std::vector<double> flatten() const override;
    void unflatten(const std::vector<double>& flat) override;
    std::size_t scalar_count() const override;
    std::size_t transmitted_scalars_down() const override;
    std::string kind() const override { return "full"; }
    std::unique_ptr<Generator> clone() const override { return std::make_unique<HyperNet>(*this); }

    std::size_t trunk_scalar_count() const;

    struct Layer {
        Matrix w;                // in x out
        std::vector<double> b;   // out
    };
    std::vector<Layer> trunk;
    std::vector<Layer> heads;    // blocks * 3, ordered (block, q/k/v)

private:
    std::vector<std::vector<double>> trunk_forward(const std::vector<double>& z) const;
};

/// Low-rank variant: a trained client-independent base P plus per-projection
/// heads emitting factors U (d x r) and V (r x d); generated P = base + U V.
class LowRankHyperNet : public Generator {
public:
    LowRankHyperNet(const HyperNetConfig& hcfg, const ModelConfig& mcfg, Rng& rng);

    ModulationParams generate(const ClientEmbedding& z) const override;
    GeneratorGrads pullback(const ClientEmbedding& z, const ModulationParams& dp) const override;
    std::vector<double> flatten() const override;
    void unflatten(const std::vector<double>& flat) override;
    std::size_t scalar_count() const override;
    std::size_t transmitted_scalars_down() const override;
    std::string kind() const override { return "lowrank"; }
    std::unique_ptr<Generator> clone() const override {
        return std::make_unique<LowRankHyperNet>(*this);
    }

    ModulationParams base;
    std::vector<HyperNet::Layer> trunk;
    std::vector<HyperNet::Layer> heads_u;  // blocks * 3, each D_h -> d*r
    std::vector<HyperNet::Layer> heads_v;  // blocks * 3, each D_h -> r*d

private:
    std::vector<std::vector<double>> trunk_forward(const std::vector<double>& z) const;
};

std::unique_ptr<Generator> make_generator(const HyperNetConfig& hcfg, const ModelConfig& mcfg,
                                          Rng& rng);

/// One cohort member's contribution to the server update.
struct CohortDelta {
    std::size_t client_id = 0;
    ModulationParams delta_p;  // P^{c,L} - P^{c,0}
    std::size_t samples = 0;   // m_i
};

enum class WeightingMode { Cohort, Global };

/// Server-side update of phi and the cohort embeddings:
///   phi' = phi - beta * sum_i w_i * grad_phi_i, w_i = m_i / (cohort or global total)
///   z_i' = z_i - beta * grad_z_i   (cohort members only, unweighted)
/// Embeddings of non-cohort clients are untouched. Throws std::runtime_error
/// on an empty cohort.
void server_update(Generator& gen, std::vector<ClientEmbedding>& embeddings,
                   const std::vector<CohortDelta>& cohort, double beta,
                   WeightingMode weighting, std::size_t total_samples);

}  // namespace adaptfed
