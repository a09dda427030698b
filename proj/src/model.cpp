#include "adaptfed/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace adaptfed {

namespace {

constexpr double kLnEps = 1e-5;

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

// Mean of c over the centered token window of radius `radius` within each
// sample's segment of `tokens` rows; radius 0 means the global mean.
Matrix window_mean(const Matrix& c, std::size_t n, std::size_t tokens, std::size_t radius) {
    Matrix out(c.rows, c.cols);
    const std::size_t d = c.cols;
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t base = s * tokens;
        for (std::size_t t = 0; t < tokens; ++t) {
            std::size_t lo = 0, hi = tokens - 1;
            if (radius > 0) {
                lo = t > radius ? t - radius : 0;
                hi = std::min(tokens - 1, t + radius);
            }
            const double w = 1.0 / static_cast<double>(hi - lo + 1);
            double* orow = &out.data[(base + t) * d];
            for (std::size_t tt = lo; tt <= hi; ++tt) {
                const double* crow = &c.data[(base + tt) * d];
                for (std::size_t j = 0; j < d; ++j) orow[j] += w * crow[j];
            }
        }
    }
    return out;
}

void window_mean_backward(const Matrix& dlevel, std::size_t n, std::size_t tokens,
                          std::size_t radius, Matrix& dc) {
    const std::size_t d = dlevel.cols;
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t base = s * tokens;
        for (std::size_t t = 0; t < tokens; ++t) {
            std::size_t lo = 0, hi = tokens - 1;
            if (radius > 0) {
                lo = t > radius ? t - radius : 0;
                hi = std::min(tokens - 1, t + radius);
            }
            const double w = 1.0 / static_cast<double>(hi - lo + 1);
            const double* drow = &dlevel.data[(base + t) * d];
            for (std::size_t tt = lo; tt <= hi; ++tt) {
                double* crow = &dc.data[(base + tt) * d];
                for (std::size_t j = 0; j < d; ++j) crow[j] += w * drow[j];
            }
        }
    }
}

void softmax_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* row = &m.data[i * m.cols];
        double mx = row[0];
        for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < m.cols; ++j) row[j] /= sum;
    }
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

}  // namespace

// --- parameter containers ---

std::size_t ModulationParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& m : pq) n += m.size();
    for (const auto& m : pk) n += m.size();
    for (const auto& m : pv) n += m.size();
    return n;
}

std::vector<double> ModulationParams::flatten() const {
    std::vector<double> out;
    out.reserve(scalar_count());
    for (std::size_t b = 0; b < pq.size(); ++b) {
        append(out, pq[b].data);
        append(out, pk[b].data);
        append(out, pv[b].data);
    }
    return out;
}

void ModulationParams::unflatten(const std::vector<double>& flat) {
    std::size_t pos = 0;
    for (std::size_t b = 0; b < pq.size(); ++b) {
        take(flat, pos, pq[b].data);
        take(flat, pos, pk[b].data);
        take(flat, pos, pv[b].data);
    }
}

void ModulationParams::fill(double v) {
    for (auto& m : pq) std::fill(m.data.begin(), m.data.end(), v);
    for (auto& m : pk) std::fill(m.data.begin(), m.data.end(), v);
    for (auto& m : pv) std::fill(m.data.begin(), m.data.end(), v);
}

ModulationParams zero_modulation(const ModelConfig& cfg) {
    ModulationParams p;
    p.pq.assign(cfg.blocks, Matrix(cfg.d, cfg.d));
    p.pk.assign(cfg.blocks, Matrix(cfg.d, cfg.d));
    p.pv.assign(cfg.blocks, Matrix(cfg.d, cfg.d));
    return p;
}

std::size_t SharedParams::scalar_count() const {
    std::size_t n = embed.size() + head.size() + head_bias.size();
    for (const auto& m : wg) n += m.size();
    for (const auto& m : wo) n += m.size();
    for (const auto& v : ln_scale) n += v.size();
    for (const auto& v : ln_shift) n += v.size();
    return n;
}

std::vector<double> SharedParams::flatten() const {
    std::vector<double> out;
    out.reserve(scalar_count());
    append(out, embed.data);
    for (std::size_t b = 0; b < wg.size(); ++b) {
        append(out, wg[b].data);
        append(out, wo[b].data);
        append(out, ln_scale[b]);
        append(out, ln_shift[b]);
    }
    append(out, head.data);
    append(out, head_bias);
    return out;
}

void SharedParams::unflatten(const std::vector<double>& flat) {
    std::size_t pos = 0;
    take(flat, pos, embed.data);
    for (std::size_t b = 0; b < wg.size(); ++b) {
        take(flat, pos, wg[b].data);
        take(flat, pos, wo[b].data);
        take(flat, pos, ln_scale[b]);
        take(flat, pos, ln_shift[b]);
    }
    take(flat, pos, head.data);
    take(flat, pos, head_bias);
}

void SharedParams::fill(double v) {
    std::fill(embed.data.begin(), embed.data.end(), v);
    for (auto& m : wg) std::fill(m.data.begin(), m.data.end(), v);
    for (auto& m : wo) std::fill(m.data.begin(), m.data.end(), v);
    for (auto& s : ln_scale) std::fill(s.begin(), s.end(), v);
    for (auto& s : ln_shift) std::fill(s.begin(), s.end(), v);
    std::fill(head.data.begin(), head.data.end(), v);
    std::fill(head_bias.begin(), head_bias.end(), v);
}

SharedParams zero_shared(const ModelConfig& cfg) {
    SharedParams xi;
    xi.embed = Matrix(cfg.input_dim, cfg.tokens * cfg.d);
    xi.wg.assign(cfg.blocks, Matrix(cfg.d, cfg.gate_levels()));
    xi.wo.assign(cfg.blocks, Matrix(cfg.d, cfg.d));
    xi.ln_scale.assign(cfg.blocks, std::vector<double>(cfg.d, 0.0));
    xi.ln_shift.assign(cfg.blocks, std::vector<double>(cfg.d, 0.0));
    xi.head = Matrix(cfg.d, cfg.num_classes);
    xi.head_bias.assign(cfg.num_classes, 0.0);
    return xi;
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> out = p.flatten();
    append(out, xi.flatten());
    return out;
}

void ModelParams::unflatten(const std::vector<double>& flat) {
    const std::size_t np = p.scalar_count();
    if (flat.size() != np + xi.scalar_count())
        throw std::invalid_argument("ModelParams::unflatten: length mismatch");
    p.unflatten(std::vector<double>(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(np)));
    xi.unflatten(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(np), flat.end()));
}

void ModelParams::fill(double v) {
    p.fill(v);
    xi.fill(v);
}

ModelParams zero_model_params(const ModelConfig& cfg) {
    return ModelParams{zero_modulation(cfg), zero_shared(cfg)};
}

namespace {
void init_matrix(Matrix& m, std::size_t fan_in, Rng& rng) {
    auto v = rng.sample_gaussian(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)), m.size());
    m.data = std::move(v);
}
}  // namespace

ModelParams init_model_params(const ModelConfig& cfg, Rng& rng) {
    ModelParams params = zero_model_params(cfg);
    init_matrix(params.xi.embed, cfg.input_dim, rng);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        init_matrix(params.p.pq[b], cfg.d, rng);
        init_matrix(params.p.pk[b], cfg.d, rng);
        init_matrix(params.p.pv[b], cfg.d, rng);
        init_matrix(params.xi.wg[b], cfg.d, rng);
        init_matrix(params.xi.wo[b], cfg.d, rng);
        std::fill(params.xi.ln_scale[b].begin(), params.xi.ln_scale[b].end(), 1.0);
    }
    init_matrix(params.xi.head, cfg.d, rng);
    return params;
}

// --- forward ---

ForwardCache forward(const ModelConfig& cfg, const ModelParams& params, const Batch& batch) {
    const std::size_t n = batch.size();
    if (n == 0) throw std::invalid_argument("forward: empty batch");
    if (batch.inputs.rows != n || batch.inputs.cols != cfg.input_dim)
        throw std::invalid_argument("forward: input shape mismatch");
    for (int y : batch.labels)
        if (y < 0 || static_cast<std::size_t>(y) >= cfg.num_classes)
            throw std::invalid_argument("forward: label out of range");

    const std::size_t T = cfg.tokens, d = cfg.d, L = cfg.gate_levels();

    ForwardCache cache;
    // n x (T*d) row-major is identical in memory to (n*T) x d tokens.
    Matrix embedded = matmul(batch.inputs, params.xi.embed);
    cache.tokens0 = Matrix(n * T, d, std::move(embedded.data));

    Matrix x = cache.tokens0;
    cache.block.resize(cfg.blocks);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        auto& bc = cache.block[b];
        bc.x = x;
        bc.q = matmul(x, params.p.pq[b]);
        bc.c = matmul(x, params.p.pk[b]);

        bc.c_levels.resize(L);
        for (std::size_t l = 0; l + 1 < L; ++l)
            bc.c_levels[l] = window_mean(bc.c, n, T, l + 1);
        bc.c_levels[L - 1] = window_mean(bc.c, n, T, 0);  // global mean

        bc.g = matmul(x, params.xi.wg[b]);
        softmax_rows(bc.g);

        bc.u = Matrix(n * T, d);
        for (std::size_t l = 0; l < L; ++l) {
            const Matrix& cl = bc.c_levels[l];
            for (std::size_t r = 0; r < n * T; ++r) {
                const double gl = bc.g.data[r * L + l];
                const double* crow = &cl.data[r * d];
                double* urow = &bc.u.data[r * d];
                for (std::size_t j = 0; j < d; ++j) urow[j] += gl * crow[j];
            }
        }
        bc.m = matmul(bc.u, params.p.pv[b]);
        bc.hq = hadamard(bc.q, bc.m);
        Matrix o = matmul(bc.hq, params.xi.wo[b]);

        bc.y = x;
        add_inplace(bc.y, o);

        // layer norm per token row
        bc.xhat = Matrix(n * T, d);
        bc.inv_sigma.resize(n * T);
        Matrix out(n * T, d);
        const auto& gamma = params.xi.ln_scale[b];
        const auto& beta = params.xi.ln_shift[b];
        for (std::size_t r = 0; r < n * T; ++r) {
            const double* yr = &bc.y.data[r * d];
            double mu = 0.0;
            for (std::size_t j = 0; j < d; ++j) mu += yr[j];
            mu /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) var += (yr[j] - mu) * (yr[j] - mu);
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + kLnEps);
            bc.inv_sigma[r] = inv;
            for (std::size_t j = 0; j < d; ++j) {
                const double xh = (yr[j] - mu) * inv;
                bc.xhat.data[r * d + j] = xh;
                out.data[r * d + j] = gamma[j] * xh + beta[j];
            }
        }
        if (!all_finite(out))
            throw std::runtime_error("forward: non-finite activation in block " +
                                     std::to_string(b));
        x = std::move(out);
    }

    // mean-pool tokens, classifier head
    cache.pooled = Matrix(n, d);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j)
                cache.pooled.data[s * d + j] += x.data[(s * T + t) * d + j] / static_cast<double>(T);
    cache.logits = matmul(cache.pooled, params.xi.head);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t k = 0; k < cfg.num_classes; ++k)
            cache.logits.data[s * cfg.num_classes + k] += params.xi.head_bias[k];
    return cache;
}

// --- loss + backward ---

namespace {

// Stable softmax cross-entropy; fills probs and returns the mean loss.
double cross_entropy(const Matrix& logits, const std::vector<int>& labels, Matrix& probs) {
    const std::size_t n = logits.rows, K = logits.cols;
    probs = logits;
    double loss = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        double* row = &probs.data[s * K];
        double mx = row[0];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            row[k] = std::exp(row[k] - mx);
            sum += row[k];
        }
        for (std::size_t k = 0; k < K; ++k) row[k] /= sum;
        loss -= std::log(std::max(row[static_cast<std::size_t>(labels[s])], 1e-300));
    }
    return loss / static_cast<double>(n);
}

}  // namespace

ModelParams backward_from_dlogits(const ModelConfig& cfg, const ModelParams& params,
                                  const Batch& batch, const ForwardCache& cache,
                                  const Matrix& dlogits) {
    const std::size_t n = batch.size(), T = cfg.tokens, d = cfg.d, L = cfg.gate_levels();
    const std::size_t K = cfg.num_classes;

    ModelParams grad = zero_model_params(cfg);

    grad.xi.head = matmul_at(cache.pooled, dlogits);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t k = 0; k < K; ++k)
            grad.xi.head_bias[k] += dlogits.data[s * K + k];
    Matrix dpooled = matmul_bt(dlogits, params.xi.head);

    Matrix dx(n * T, d);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j)
                dx.data[(s * T + t) * d + j] = dpooled.data[s * d + j] / static_cast<double>(T);

    for (std::size_t b = cfg.blocks; b-- > 0;) {
        const auto& bc = cache.block[b];
        const auto& gamma = params.xi.ln_scale[b];
        auto& dgamma = grad.xi.ln_scale[b];
        auto& dbeta = grad.xi.ln_shift[b];

        // layer norm backward
        Matrix dy(n * T, d);
        for (std::size_t r = 0; r < n * T; ++r) {
            const double* dout = &dx.data[r * d];
            const double* xh = &bc.xhat.data[r * d];
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                dgamma[j] += dout[j] * xh[j];
                dbeta[j] += dout[j];
                const double dxh = dout[j] * gamma[j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= static_cast<double>(d);
            mean_dxh_xh /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
                const double dxh = dout[j] * gamma[j];
                dy.data[r * d + j] = bc.inv_sigma[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }

        Matrix dx_prev = dy;  // residual path

        // o = hq * Wo
        Matrix dhq = matmul_bt(dy, params.xi.wo[b]);
        add_inplace(grad.xi.wo[b], matmul_at(bc.hq, dy));

        // hq = q (elementwise) m
        Matrix dq = hadamard(dhq, bc.m);
        Matrix dm = hadamard(dhq, bc.q);

        // m = u * Pv
        Matrix du = matmul_bt(dm, params.p.pv[b]);
        add_inplace(grad.p.pv[b], matmul_at(bc.u, dm));

        // u = sum_l g_l * c_l
        Matrix dgates(n * T, L);
        Matrix dc(n * T, d);
        for (std::size_t l = 0; l < L; ++l) {
            const Matrix& cl = bc.c_levels[l];
            Matrix dcl(n * T, d);
            for (std::size_t r = 0; r < n * T; ++r) {
                const double gl = bc.g.data[r * L + l];
                const double* durow = &du.data[r * d];
                const double* crow = &cl.data[r * d];
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    s += durow[j] * crow[j];
                    dcl.data[r * d + j] = gl * durow[j];
                }
                dgates.data[r * L + l] = s;
            }
            const std::size_t radius = (l + 1 < L) ? l + 1 : 0;
            window_mean_backward(dcl, n, T, radius, dc);
        }

        // softmax backward for gates
        Matrix dglogits(n * T, L);
        for (std::size_t r = 0; r < n * T; ++r) {
            const double* g = &bc.g.data[r * L];
            const double* dg = &dgates.data[r * L];
            double s = 0.0;
            for (std::size_t l = 0; l < L; ++l) s += dg[l] * g[l];
            for (std::size_t l = 0; l < L; ++l)
                dglogits.data[r * L + l] = g[l] * (dg[l] - s);
        }
        add_inplace(dx_prev, matmul_bt(dglogits, params.xi.wg[b]));
        add_inplace(grad.xi.wg[b], matmul_at(bc.x, dglogits));

        // c = x * Pk, q = x * Pq
        add_inplace(dx_prev, matmul_bt(dc, params.p.pk[b]));
        add_inplace(grad.p.pk[b], matmul_at(bc.x, dc));
        add_inplace(dx_prev, matmul_bt(dq, params.p.pq[b]));
        add_inplace(grad.p.pq[b], matmul_at(bc.x, dq));

        dx = std::move(dx_prev);
    }

    // tokens0 = reshape(inputs * embed)
    Matrix dtokens_flat(n, T * d, std::move(dx.data));
    grad.xi.embed = matmul_at(batch.inputs, dtokens_flat);

    return grad;
}

LossGrad loss_and_grad(const ModelConfig& cfg, const ModelParams& params, const Batch& batch) {
    ForwardCache cache = forward(cfg, params, batch);
    const std::size_t n = batch.size(), K = cfg.num_classes;

    LossGrad out;
    Matrix probs;
    out.loss = cross_entropy(cache.logits, batch.labels, probs);

    // dLoss/dLogits = (softmax - onehot) / n
    Matrix dlogits = std::move(probs);
    for (std::size_t s = 0; s < n; ++s)
        dlogits.data[s * K + static_cast<std::size_t>(batch.labels[s])] -= 1.0;
    scale_inplace(dlogits, 1.0 / static_cast<double>(n));

    out.grad = backward_from_dlogits(cfg, params, batch, cache, dlogits);
    return out;
}

EvalResult evaluate_batch(const ModelConfig& cfg, const ModelParams& params, const Batch& batch) {
    ForwardCache cache = forward(cfg, params, batch);
    Matrix probs;
    EvalResult res;
    res.loss = cross_entropy(cache.logits, batch.labels, probs);
    const std::size_t K = cfg.num_classes;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const double* row = &cache.logits.data[s * K];
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (row[k] > row[best]) best = k;  // lowest index wins ties
        if (best == static_cast<std::size_t>(batch.labels[s])) ++correct;
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(batch.size());
    return res;
}

void sgd_step(ModelParams& params, const ModelParams& grad, double alpha) {
    if (alpha < 0) throw std::invalid_argument("sgd_step: requires alpha >= 0");
    if (alpha == 0) return;
    for (std::size_t b = 0; b < params.p.pq.size(); ++b) {
        add_inplace(params.p.pq[b], grad.p.pq[b], -alpha);
        add_inplace(params.p.pk[b], grad.p.pk[b], -alpha);
        add_inplace(params.p.pv[b], grad.p.pv[b], -alpha);
    }
    add_inplace(params.xi.embed, grad.xi.embed, -alpha);
    for (std::size_t b = 0; b < params.xi.wg.size(); ++b) {
        add_inplace(params.xi.wg[b], grad.xi.wg[b], -alpha);
        add_inplace(params.xi.wo[b], grad.xi.wo[b], -alpha);
        for (std::size_t j = 0; j < params.xi.ln_scale[b].size(); ++j) {
            params.xi.ln_scale[b][j] -= alpha * grad.xi.ln_scale[b][j];
            params.xi.ln_shift[b][j] -= alpha * grad.xi.ln_shift[b][j];
        }
    }
    add_inplace(params.xi.head, grad.xi.head, -alpha);
    for (std::size_t k = 0; k < params.xi.head_bias.size(); ++k)
        params.xi.head_bias[k] -= alpha * grad.xi.head_bias[k];
}

}  // namespace adaptfed
