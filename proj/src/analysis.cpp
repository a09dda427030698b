#include "adaptfed/analysis.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace adaptfed {

std::string BoundTerms::pretty() const {
    std::ostringstream out;
    out << "client_term    " << client_term << "\n"
        << "capacity_term  " << capacity_term << "\n"
        << "hypernet_term  " << hypernet_term << "\n"
        << "drift_term     " << drift_term << "\n"
        << "total          " << total << "\n";
    return out.str();
}

BoundTerms generalization_bound(const BoundInputs& b) {
    if (b.total_samples <= 0 || b.clients <= 0 || b.d_vc <= 0)
        throw std::domain_error("bound inputs: M, N and d_vc must be positive");
    if (b.delta <= 0 || b.delta >= 1)
        throw std::domain_error("bound inputs: delta must lie in (0,1)");
    for (double v : {b.l_h, b.l_phi, b.l_z, b.l_xi, b.r_h, b.r_t})
        if (v < 0) throw std::domain_error("bound inputs: Lipschitz constants and radii >= 0");
    if (b.clients / b.delta < 1.0)
        throw std::domain_error("client term: ln(N/delta) would be negative");
    double em_over_d = std::exp(1.0) * b.total_samples / b.d_vc;
    if (em_over_d <= 1.0)
        throw std::domain_error("capacity term: e*M/d_vc must exceed 1");

    BoundTerms t;
    t.client_term = std::sqrt(b.total_samples / 2.0 * std::log(b.clients / b.delta));
    t.capacity_term =
        std::sqrt(b.d_vc * b.clients / b.total_samples * std::log(em_over_d));
    t.hypernet_term = b.l_h * b.r_h * (b.l_phi + b.l_z);
    t.drift_term = b.l_xi * b.r_t;
    t.total = t.client_term + t.capacity_term + t.hypernet_term + t.drift_term;
    return t;
}

BoundInputs bound_inputs_from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    BoundInputs b;
    b.total_samples = j.at("M");
    b.clients = j.at("N");
    b.d_vc = j.at("d_vc");
    b.delta = j.at("delta");
    b.l_h = j.value("L_h", 0.0);
    b.l_phi = j.value("L_phi", 0.0);
    b.l_z = j.value("L_z", 0.0);
    b.l_xi = j.value("L_xi", 0.0);
    b.r_h = j.value("R_h", 0.0);
    b.r_t = j.value("R_t", 0.0);
    return b;
}

CostReport cost_report(const ModelConfig& mcfg, const HyperNetConfig& hcfg, std::size_t clients,
                       Strategy strategy) {
    std::size_t p = mcfg.blocks * 3 * mcfg.d * mcfg.d;
    std::size_t xi = zero_shared(mcfg).scalar_count();
    CostReport r;
    r.strategy = strategy_name(strategy);
    switch (strategy) {
        case Strategy::AdaptFed: {
            Rng rng(0);
            auto gen = make_generator(hcfg, mcfg, rng);
            r.server_resident = xi + gen->scalar_count() + clients * hcfg.embed_dim;
            r.per_client_personalized = hcfg.embed_dim;
            r.tx_down = gen->transmitted_scalars_down() + xi;
            r.tx_up = p + xi;
            break;
        }
        case Strategy::VanillaTailored:
            r.server_resident = xi + clients * p;
            r.per_client_personalized = p;
            r.tx_down = xi;
            r.tx_up = xi;
            break;
        case Strategy::FedAvg:
            r.server_resident = xi + p;
            r.tx_down = p + xi;
            r.tx_up = p + xi;
            break;
        case Strategy::LocalOnly:
            r.server_resident = xi;  // the initial broadcast copy; nothing per client
            break;
    }
    return r;
}

std::size_t crossover_clients(const ModelConfig& mcfg, const HyperNetConfig& hcfg) {
    Rng rng(0);
    auto gen = make_generator(hcfg, mcfg, rng);
    std::size_t p = mcfg.blocks * 3 * mcfg.d * mcfg.d;
    return (gen->scalar_count() + p - 1) / p;
}

std::string cost_report_csv(const std::vector<CostReport>& reports) {
    std::ostringstream out;
    out << "strategy,server_resident,tx_down,tx_up,per_client_personalized\n";
    for (const auto& r : reports)
        out << r.strategy << "," << r.server_resident << "," << r.tx_down << "," << r.tx_up << ","
            << r.per_client_personalized << "\n";
    return out.str();
}

namespace {

std::vector<double> ball_point(std::size_t dim, double radius, Rng& rng) {
    // gaussian direction scaled to a uniform radius fraction
    auto v = rng.sample_gaussian(0, 1, dim);
    double n = norm2(v);
    if (n == 0) return v;
    double r = radius * rng.next_double();
    for (double& x : v) x *= r / n;
    return v;
}

double diff_norm(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace

LipschitzEstimates empirical_lipschitz(const Generator& gen, double radius, std::size_t samples,
                                       Rng& rng) {
    LipschitzEstimates est;
    std::size_t dim = gen.config().embed_dim;
    for (std::size_t s = 0; s < samples; ++s) {
        auto z1 = ball_point(dim, radius, rng);
        auto z2 = ball_point(dim, radius, rng);
        double dz = diff_norm(z1, z2);
        if (dz == 0) continue;
        auto p1 = gen.generate({z1}).flatten();
        auto p2 = gen.generate({z2}).flatten();
        est.l_z = std::max(est.l_z, diff_norm(p1, p2) / dz);
    }
    auto phi = gen.flatten();
    auto clone1 = gen.clone();
    auto clone2 = gen.clone();
    for (std::size_t s = 0; s < samples; ++s) {
        auto z = ball_point(dim, radius, rng);
        auto d1 = ball_point(phi.size(), radius, rng);
        auto d2 = ball_point(phi.size(), radius, rng);
        auto phi1 = phi, phi2 = phi;
        for (std::size_t i = 0; i < phi.size(); ++i) {
            phi1[i] += d1[i];
            phi2[i] += d2[i];
        }
        double dphi = diff_norm(phi1, phi2);
        if (dphi == 0) continue;
        clone1->unflatten(phi1);
        clone2->unflatten(phi2);
        auto p1 = clone1->generate({z}).flatten();
        auto p2 = clone2->generate({z}).flatten();
        est.l_phi = std::max(est.l_phi, diff_norm(p1, p2) / dphi);
    }
    return est;
}

std::string export_embeddings_csv(const ServerState& server,
                                  const std::vector<std::size_t>& groups) {
    if (server.strategy != Strategy::AdaptFed)
        throw std::runtime_error("export_embeddings_csv: server has no embeddings");
    std::size_t dim = server.gen->config().embed_dim;
    std::ostringstream out;
    out.precision(17);  // lossless double round-trip
    out << "client,group";
    for (std::size_t j = 0; j < dim; ++j) out << ",z" << j;
    out << "\n";
    for (std::size_t i = 0; i < server.embeddings.size(); ++i) {
        out << i << "," << (i < groups.size() ? groups[i] : 0);
        for (double v : server.embeddings[i].z) out << "," << v;
        out << "\n";
    }
    return out.str();
}

}  // namespace adaptfed
