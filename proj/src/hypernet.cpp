#include "adaptfed/hypernet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace adaptfed {

namespace {

void append(std::vector<double>& out, const std::vector<double>& v) {
    out.insert(out.end(), v.begin(), v.end());
}

void take(const std::vector<double>& flat, std::size_t& pos, std::vector<double>& dst) {
    if (pos + dst.size() > flat.size())
        throw std::invalid_argument("unflatten: flat vector too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
              flat.begin() + static_cast<std::ptrdiff_t>(pos + dst.size()), dst.begin());
    pos += dst.size();
}

HyperNet::Layer init_layer(std::size_t in, std::size_t out, double extra_scale, Rng& rng) {
    HyperNet::Layer l;
    l.w = Matrix(in, out);
    l.w.data = rng.sample_gaussian(0.0, extra_scale / std::sqrt(static_cast<double>(in)),
                                   l.w.size());
    l.b.assign(out, 0.0);
    return l;
}

// y = x W + b for a row vector x.
std::vector<double> layer_forward(const HyperNet::Layer& l, const std::vector<double>& x) {
    if (x.size() != l.w.rows) throw std::invalid_argument("hypernet layer: input size mismatch");
    std::vector<double> y = l.b;
    for (std::size_t i = 0; i < l.w.rows; ++i) {
        const double xi = x[i];
        const double* row = &l.w.data[i * l.w.cols];
        for (std::size_t j = 0; j < l.w.cols; ++j) y[j] += xi * row[j];
    }
    return y;
}

void relu_inplace(std::vector<double>& v) {
    for (double& x : v) x = std::max(x, 0.0);
}

std::vector<std::vector<double>> mlp_forward(const std::vector<HyperNet::Layer>& trunk,
                                             const std::vector<double>& z, bool relu) {
    std::vector<std::vector<double>> acts;
    acts.push_back(z);
    for (const auto& layer : trunk) {
        auto y = layer_forward(layer, acts.back());
        if (relu) relu_inplace(y);
        acts.push_back(std::move(y));
    }
    return acts;
}

// Backprop of a scalar through a head layer: accumulates dW, db into the
// flat gradient at `pos` (layout: W then b) and returns d(input).
void head_backward(const HyperNet::Layer& l, const std::vector<double>& input,
                   const std::vector<double>& dout, std::vector<double>& grad,
                   std::size_t& pos, std::vector<double>& dinput) {
    for (std::size_t i = 0; i < l.w.rows; ++i) {
        const double xi = input[i];
        double* grow = &grad[pos + i * l.w.cols];
        const double* wrow = &l.w.data[i * l.w.cols];
        double acc = 0.0;
        for (std::size_t j = 0; j < l.w.cols; ++j) {
            grow[j] += xi * dout[j];
            acc += wrow[j] * dout[j];
        }
        dinput[i] += acc;
    }
    pos += l.w.size();
    for (std::size_t j = 0; j < l.b.size(); ++j) grad[pos + j] += dout[j];
    pos += l.b.size();
}

// Backprop through the trunk given d(activation of last trunk layer).
// grad layout: per layer, W then b, starting at offset 0.
void trunk_backward(const std::vector<HyperNet::Layer>& trunk,
                    const std::vector<std::vector<double>>& acts, bool relu,
                    std::vector<double> dlast, std::vector<double>& grad,
                    std::vector<double>& dz) {
    std::vector<double> da = std::move(dlast);
    std::size_t tail = 0;
    std::vector<std::size_t> offsets(trunk.size());
    for (std::size_t l = 0; l < trunk.size(); ++l) {
        offsets[l] = tail;
        tail += trunk[l].w.size() + trunk[l].b.size();
    }
    for (std::size_t l = trunk.size(); l-- > 0;) {
        const auto& layer = trunk[l];
        const auto& post = acts[l + 1];
        if (relu)
            for (std::size_t j = 0; j < da.size(); ++j)
                if (post[j] <= 0.0) da[j] = 0.0;
        std::vector<double> dprev(layer.w.rows, 0.0);
        std::size_t pos = offsets[l];
        head_backward(layer, acts[l], da, grad, pos, dprev);
        da = std::move(dprev);
    }
    dz = std::move(da);
}

std::size_t layers_scalar_count(const std::vector<HyperNet::Layer>& layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
}

void flatten_layers(const std::vector<HyperNet::Layer>& layers, std::vector<double>& out) {
    for (const auto& l : layers) {
        append(out, l.w.data);
        append(out, l.b);
    }
}

void unflatten_layers(std::vector<HyperNet::Layer>& layers, const std::vector<double>& flat,
                      std::size_t& pos) {
    for (auto& l : layers) {
        take(flat, pos, l.w.data);
        take(flat, pos, l.b);
    }
}

}  // namespace

// --- full hypernetwork ---

HyperNet::HyperNet(const HyperNetConfig& hcfg, const ModelConfig& mcfg, Rng& rng)
    : Generator(hcfg, mcfg) {
    if (hcfg.trunk_depth < 1) throw std::invalid_argument("HyperNet: trunk depth must be >= 1");
    // Wide trunk activations with a compensating 1/gain^depth on the heads:
    // the generated projections keep the model's init scale, but the head
    // weight steps move the output ~gain^(2*depth) faster per unit of
    // server learning rate, which is what lets the generator keep pace
    // with the locally trained baselines inside a few hundred rounds.
    const double gain = hcfg.trunk_gain;
    trunk.push_back(init_layer(hcfg.embed_dim, hcfg.hidden, gain, rng));
    for (std::size_t l = 1; l < hcfg.trunk_depth; ++l)
        trunk.push_back(init_layer(hcfg.hidden, hcfg.hidden, gain, rng));
    // extra 1/sqrt(d) so generated projections start at the model's own
    // init scale
    const double head_scale = 1.0 / std::sqrt(static_cast<double>(mcfg.d)) /
                              std::pow(gain, static_cast<double>(hcfg.trunk_depth));
    for (std::size_t b = 0; b < mcfg.blocks * 3; ++b)
        heads.push_back(init_layer(hcfg.hidden, mcfg.d * mcfg.d, head_scale, rng));
}

std::vector<std::vector<double>> HyperNet::trunk_forward(const std::vector<double>& z) const {
    return mlp_forward(trunk, z, hcfg_.relu);
}

ModulationParams HyperNet::generate(const ClientEmbedding& z) const {
    if (z.z.size() != hcfg_.embed_dim)
        throw std::invalid_argument("generate: embedding dimension mismatch");
    const auto acts = trunk_forward(z.z);
    const auto& a = acts.back();
    ModulationParams p = zero_modulation(mcfg_);
    for (std::size_t b = 0; b < mcfg_.blocks; ++b) {
        p.pq[b].data = layer_forward(heads[b * 3 + 0], a);
        p.pk[b].data = layer_forward(heads[b * 3 + 1], a);
        p.pv[b].data = layer_forward(heads[b * 3 + 2], a);
    }
    return p;
}

GeneratorGrads HyperNet::pullback(const ClientEmbedding& z, const ModulationParams& dp) const {
    const auto acts = trunk_forward(z.z);
    const auto& a = acts.back();

    GeneratorGrads g;
    g.phi.assign(scalar_count(), 0.0);
    std::vector<double> da(a.size(), 0.0);

    std::size_t pos = layers_scalar_count(trunk);
    for (std::size_t b = 0; b < mcfg_.blocks; ++b) {
        head_backward(heads[b * 3 + 0], a, dp.pq[b].data, g.phi, pos, da);
        head_backward(heads[b * 3 + 1], a, dp.pk[b].data, g.phi, pos, da);
        head_backward(heads[b * 3 + 2], a, dp.pv[b].data, g.phi, pos, da);
    }
    trunk_backward(trunk, acts, hcfg_.relu, std::move(da), g.phi, g.z);
    return g;
}

std::vector<double> HyperNet::flatten() const {
    std::vector<double> out;
    out.reserve(scalar_count());
    flatten_layers(trunk, out);
    flatten_layers(heads, out);
    return out;
}

void HyperNet::unflatten(const std::vector<double>& flat) {
    std::size_t pos = 0;
    unflatten_layers(trunk, flat, pos);
    unflatten_layers(heads, flat, pos);
    if (pos != flat.size()) throw std::invalid_argument("HyperNet::unflatten: length mismatch");
}

std::size_t HyperNet::scalar_count() const {
    return layers_scalar_count(trunk) + layers_scalar_count(heads);
}

std::size_t HyperNet::trunk_scalar_count() const { return layers_scalar_count(trunk); }

std::size_t HyperNet::transmitted_scalars_down() const {
    return mcfg_.blocks * 3 * mcfg_.d * mcfg_.d;
}

// --- low-rank variant ---

LowRankHyperNet::LowRankHyperNet(const HyperNetConfig& hcfg, const ModelConfig& mcfg, Rng& rng)
    : Generator(hcfg, mcfg) {
    if (hcfg.rank < 1 || hcfg.rank >= mcfg.d)
        throw std::invalid_argument("LowRankHyperNet: requires 1 <= rank < d");
    base = zero_modulation(mcfg);
    const double base_scale = 1.0 / std::sqrt(static_cast<double>(mcfg.d));
    for (std::size_t b = 0; b < mcfg.blocks; ++b) {
        base.pq[b].data = rng.sample_gaussian(0.0, base_scale, base.pq[b].size());
        base.pk[b].data = rng.sample_gaussian(0.0, base_scale, base.pk[b].size());
        base.pv[b].data = rng.sample_gaussian(0.0, base_scale, base.pv[b].size());
    }
    const double gain = hcfg.trunk_gain;
    trunk.push_back(init_layer(hcfg.embed_dim, hcfg.hidden, gain, rng));
    for (std::size_t l = 1; l < hcfg.trunk_depth; ++l)
        trunk.push_back(init_layer(hcfg.hidden, hcfg.hidden, gain, rng));
    const double head_scale = 1.0 / std::sqrt(static_cast<double>(mcfg.d)) /
                              std::pow(gain, static_cast<double>(hcfg.trunk_depth));
    for (std::size_t i = 0; i < mcfg.blocks * 3; ++i) {
        heads_u.push_back(init_layer(hcfg.hidden, mcfg.d * hcfg.rank, head_scale, rng));
        heads_v.push_back(init_layer(hcfg.hidden, hcfg.rank * mcfg.d, head_scale, rng));
    }
}

std::vector<std::vector<double>> LowRankHyperNet::trunk_forward(
    const std::vector<double>& z) const {
    return mlp_forward(trunk, z, hcfg_.relu);
}

ModulationParams LowRankHyperNet::generate(const ClientEmbedding& z) const {
    if (z.z.size() != hcfg_.embed_dim)
        throw std::invalid_argument("generate: embedding dimension mismatch");
    const auto acts = trunk_forward(z.z);
    const auto& a = acts.back();
    const std::size_t d = mcfg_.d, r = hcfg_.rank;

    ModulationParams p = base;
    for (std::size_t b = 0; b < mcfg_.blocks; ++b) {
        Matrix* targets[3] = {&p.pq[b], &p.pk[b], &p.pv[b]};
        for (std::size_t j = 0; j < 3; ++j) {
            const std::size_t idx = b * 3 + j;
            Matrix u(d, r, layer_forward(heads_u[idx], a));
            Matrix v(r, d, layer_forward(heads_v[idx], a));
            add_inplace(*targets[j], matmul(u, v));
        }
    }
    return p;
}

GeneratorGrads LowRankHyperNet::pullback(const ClientEmbedding& z,
                                         const ModulationParams& dp) const {
    const auto acts = trunk_forward(z.z);
    const auto& a = acts.back();
    const std::size_t d = mcfg_.d, r = hcfg_.rank;

    GeneratorGrads g;
    g.phi.assign(scalar_count(), 0.0);
    std::vector<double> da(a.size(), 0.0);

    // layout: base, trunk, then per projection (head_u, head_v)
    std::size_t pos = 0;
    const Matrix* dps[3];
    for (std::size_t b = 0; b < mcfg_.blocks; ++b) {
        dps[0] = &dp.pq[b];
        dps[1] = &dp.pk[b];
        dps[2] = &dp.pv[b];
        for (std::size_t j = 0; j < 3; ++j) {
            // d(base) = dP
            for (std::size_t i = 0; i < dps[j]->size(); ++i) g.phi[pos + i] += dps[j]->data[i];
            pos += dps[j]->size();
        }
    }
    pos = base.scalar_count() + layers_scalar_count(trunk);
    for (std::size_t b = 0; b < mcfg_.blocks; ++b) {
        dps[0] = &dp.pq[b];
        dps[1] = &dp.pk[b];
        dps[2] = &dp.pv[b];
        for (std::size_t j = 0; j < 3; ++j) {
            const std::size_t idx = b * 3 + j;
            Matrix u(d, r, layer_forward(heads_u[idx], a));
            Matrix v(r, d, layer_forward(heads_v[idx], a));
            Matrix du = matmul_bt(*dps[j], v);   // dP V^T, d x r
            Matrix dv = matmul_at(u, *dps[j]);   // U^T dP, r x d
            head_backward(heads_u[idx], a, du.data, g.phi, pos, da);
            head_backward(heads_v[idx], a, dv.data, g.phi, pos, da);
        }
    }

    // trunk gradient block sits between base and heads in the layout
    std::vector<double> trunk_grad(layers_scalar_count(trunk), 0.0);
    trunk_backward(trunk, acts, hcfg_.relu, std::move(da), trunk_grad, g.z);
    std::copy(trunk_grad.begin(), trunk_grad.end(),
              g.phi.begin() + static_cast<std::ptrdiff_t>(base.scalar_count()));
    return g;
}

std::vector<double> LowRankHyperNet::flatten() const {
    std::vector<double> out;
    out.reserve(scalar_count());
    append(out, base.flatten());
    flatten_layers(trunk, out);
    for (std::size_t i = 0; i < heads_u.size(); ++i) {
        append(out, heads_u[i].w.data);
        append(out, heads_u[i].b);
        append(out, heads_v[i].w.data);
        append(out, heads_v[i].b);
    }
    return out;
}

void LowRankHyperNet::unflatten(const std::vector<double>& flat) {
    std::size_t pos = 0;
    std::vector<double> base_flat(base.scalar_count());
    take(flat, pos, base_flat);
    base.unflatten(base_flat);
    unflatten_layers(trunk, flat, pos);
    for (std::size_t i = 0; i < heads_u.size(); ++i) {
        take(flat, pos, heads_u[i].w.data);
        take(flat, pos, heads_u[i].b);
        take(flat, pos, heads_v[i].w.data);
        take(flat, pos, heads_v[i].b);
    }
    if (pos != flat.size())
        throw std::invalid_argument("LowRankHyperNet::unflatten: length mismatch");
}

std::size_t LowRankHyperNet::scalar_count() const {
    return base.scalar_count() + layers_scalar_count(trunk) + layers_scalar_count(heads_u) +
           layers_scalar_count(heads_v);
}

std::size_t LowRankHyperNet::transmitted_scalars_down() const {
    return mcfg_.blocks * 3 * 2 * mcfg_.d * hcfg_.rank;
}

std::unique_ptr<Generator> make_generator(const HyperNetConfig& hcfg, const ModelConfig& mcfg,
                                          Rng& rng) {
    if (hcfg.rank > 0) return std::make_unique<LowRankHyperNet>(hcfg, mcfg, rng);
    return std::make_unique<HyperNet>(hcfg, mcfg, rng);
}

// --- server update ---

void server_update(Generator& gen, std::vector<ClientEmbedding>& embeddings,
                   const std::vector<CohortDelta>& cohort, double beta,
                   WeightingMode weighting, std::size_t total_samples) {
    if (cohort.empty()) throw std::runtime_error("server_update: empty cohort");
    if (beta < 0) throw std::invalid_argument("server_update: requires beta >= 0");

    std::vector<std::size_t> order(cohort.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return cohort[a].client_id < cohort[b].client_id;
    });

    double denom = 0.0;
    if (weighting == WeightingMode::Cohort) {
        for (const auto& c : cohort) denom += static_cast<double>(c.samples);
    } else {
        denom = static_cast<double>(total_samples);
    }
    if (!(denom > 0)) throw std::runtime_error("server_update: zero sample weight denominator");

    std::vector<double> phi_grad(gen.scalar_count(), 0.0);
    std::vector<std::pair<std::size_t, std::vector<double>>> z_grads;
    for (std::size_t k : order) {
        const auto& c = cohort[k];
        if (c.client_id >= embeddings.size())
            throw std::invalid_argument("server_update: client id out of range");
        const auto g = gen.pullback(embeddings[c.client_id], c.delta_p);
        const double w = static_cast<double>(c.samples) / denom;
        for (std::size_t i = 0; i < phi_grad.size(); ++i) phi_grad[i] += w * g.phi[i];
        z_grads.emplace_back(c.client_id, g.z);
    }

    auto phi = gen.flatten();
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] -= beta * phi_grad[i];
    gen.unflatten(phi);

    for (const auto& [id, gz] : z_grads)
        for (std::size_t i = 0; i < gz.size(); ++i) embeddings[id].z[i] -= beta * gz[i];
}

}  // namespace adaptfed
