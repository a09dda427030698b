#pragma once

#include <cstddef>
#include <vector>

#include "adaptfed/matrix.hpp"
#include "adaptfed/rng.hpp"

namespace adaptfed {

/// Architecture of the reference focal block classifier.
///
/// The input vector is embedded to tokens * d values and reshaped into
/// `tokens` segments of width d. Each block computes, per token t:
///   q = x Pq, c = x Pk
///   level l in 1..focal_levels: mean of c over the centered 1-D token
///   window of radius l (clipped at the segment edges); the last level is
///   the mean over all tokens
///   gates: softmax over the focal_levels+1 levels of x Wg
///   modulator m = (sum_l g_l * c_l) Pv
///   output = LayerNorm(x + (q * m) Wo)    (elementwise product q * m)
/// After all blocks the tokens are mean-pooled and fed to a linear head.
struct ModelConfig {
    std::size_t input_dim = 32;
    std::size_t d = 16;           // token width
    std::size_t blocks = 8;
    std::size_t focal_levels = 2; // window levels; total gate levels = focal_levels + 1
    std::size_t tokens = 4;
    std::size_t num_classes = 10;

    std::size_t gate_levels() const { return focal_levels + 1; }
};

/// Per-block modulation projections; the personalized parameter block P.
struct ModulationParams {
    std::vector<Matrix> pq, pk, pv;  // one d x d matrix each per block

    std::size_t scalar_count() const;
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
    void fill(double v);
};

ModulationParams zero_modulation(const ModelConfig& cfg);

/// The shared remainder: everything that is not a modulation projection.
struct SharedParams {
    Matrix embed;                        // input_dim x (tokens * d)
    std::vector<Matrix> wg;              // per block, d x gate_levels
    std::vector<Matrix> wo;              // per block, d x d
    std::vector<std::vector<double>> ln_scale, ln_shift;  // per block, d each
    Matrix head;                         // d x num_classes
    std::vector<double> head_bias;       // num_classes

    std::size_t scalar_count() const;
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
    void fill(double v);
};

SharedParams zero_shared(const ModelConfig& cfg);

/// theta = (P, xi). flatten() is flatten(P) followed by flatten(xi) and
/// round-trips losslessly through unflatten().
struct ModelParams {
    ModulationParams p;
    SharedParams xi;

    std::size_t scalar_count() const { return p.scalar_count() + xi.scalar_count(); }
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
    void fill(double v);
};

ModelParams zero_model_params(const ModelConfig& cfg);

/// Gaussian(0, 1/fan_in) weights, zero biases/shifts, unit layer-norm scale.
ModelParams init_model_params(const ModelConfig& cfg, Rng& rng);

struct Batch {
    Matrix inputs;            // n x input_dim
    std::vector<int> labels;  // n class indices
    std::size_t size() const { return labels.size(); }
};

/// Activations retained by forward() for the backward pass.
struct ForwardCache {
    Matrix tokens0;                       // (n*tokens) x d after embedding
    struct BlockCache {
        Matrix x, q, c, g, u, m, hq, y, xhat;
        std::vector<Matrix> c_levels;     // gate_levels entries
        std::vector<double> inv_sigma;    // per token row
    };
    std::vector<BlockCache> block;
    Matrix pooled;                        // n x d
    Matrix logits;                        // n x num_classes
};

/// Forward pass. Throws std::runtime_error naming the block on a non-finite
/// activation, std::invalid_argument on shape mismatch.
ForwardCache forward(const ModelConfig& cfg, const ModelParams& params, const Batch& batch);

struct LossGrad {
    double loss = 0.0;
    ModelParams grad;
};

/// Mean softmax cross-entropy plus its exact reverse-mode gradient with the
/// same (P, xi) partition as the parameters.
LossGrad loss_and_grad(const ModelConfig& cfg, const ModelParams& params, const Batch& batch);

/// Reverse pass from an arbitrary logit cotangent; lets callers train on
/// losses other than cross-entropy (distillation, combined objectives).
ModelParams backward_from_dlogits(const ModelConfig& cfg, const ModelParams& params,
                                  const Batch& batch, const ForwardCache& cache,
                                  const Matrix& dlogits);

/// Like loss_and_grad but also returns dLoss/dLogits-free evaluation numbers.
struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Loss and accuracy on a batch; argmax ties broken toward the lowest index.
EvalResult evaluate_batch(const ModelConfig& cfg, const ModelParams& params, const Batch& batch);

/// theta <- theta - alpha * grad, both blocks. Requires alpha >= 0.
void sgd_step(ModelParams& params, const ModelParams& grad, double alpha);

}  // namespace adaptfed
