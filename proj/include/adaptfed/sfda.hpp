#pragma once

#include <cstddef>
#include <vector>

#include "adaptfed/datagen.hpp"
#include "adaptfed/model.hpp"
#include "adaptfed/rng.hpp"

namespace adaptfed {

/// A client's input "style": per-feature mean and standard deviation.
struct StyleDescriptor {
    std::vector<double> mean;
    std::vector<double> std;  // >= 0 elementwise
};

/// Population moments of each feature column.
StyleDescriptor extract_style(const Matrix& inputs);

/// Standardize each feature by the batch's own moments, then rescale to the
/// target style: x' = style.std * (x - mu_src) / sigma_src + style.mean.
/// Features with sigma_src = 0 pass through unchanged.
Matrix apply_style(const Matrix& source, const StyleDescriptor& style);

struct PseudoLabels {
    std::vector<std::size_t> indices;  // rows kept (max softmax prob >= tau)
    std::vector<int> labels;           // teacher argmax for those rows
};

PseudoLabels pseudo_labels(const Matrix& teacher_logits, double tau_conf);

/// T^2 * KL(softmax(teacher/T) || softmax(student/T)), averaged over rows.
double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, double t_kd);

/// d kd_loss / d student_logits.
Matrix kd_loss_dlogits(const Matrix& student_logits, const Matrix& teacher_logits, double t_kd);

/// SWA teacher: the running arithmetic mean of periodic student snapshots.
struct TeacherState {
    ModelParams weights;
    std::size_t n_updates = 0;  // snapshots absorbed so far
    std::size_t omega = 5;      // rounds between snapshots
    std::size_t t_start = 10;   // first snapshot round
};

/// w <- (w * n + student) / (n + 1). Requires t >= t_start and
/// (t - t_start) divisible by omega.
void swa_update(TeacherState& teacher, const ModelParams& student, std::size_t t);

struct SfdaConfig {
    double lambda_kd = 1.0;
    double tau_conf = 0.9;
    double kd_temperature = 2.0;
    std::size_t omega = 5;
    std::size_t t_start = 10;
};

struct SfdaRoundStats {
    double pseudo_loss = 0.0;
    double kd_loss = 0.0;
    double pseudo_kept_frac = 0.0;
};

/// One unsupervised round on a client: for each mini-batch, cross-entropy on
/// the teacher's confident pseudo-labels plus lambda_kd times the KD loss,
/// one SGD step per batch; the SWA teacher absorbs the student afterwards
/// when the (t_start, omega) schedule fires. target labels are never read.
SfdaRoundStats sfda_round(const ModelConfig& mcfg, ModelParams& student, TeacherState& teacher,
                          const Matrix& target_inputs, const SfdaConfig& cfg, double lr,
                          std::size_t batch_size, Rng& rng, std::size_t t);

/// Supervised pre-training on the labeled source pool, each batch re-styled
/// to a randomly chosen client style (pass no styles to train on raw data).
ModelParams pretrain_source(const ModelConfig& mcfg, const LabeledPool& source,
                            const std::vector<StyleDescriptor>& styles, std::size_t epochs,
                            double lr, std::size_t batch_size, Rng& rng);

/// Per-client adaptation state. Deliberately holds no handle to the source
/// pool: once constructed from the pre-trained weights, adaptation is
/// source-free, and audit() proves the object only stores model-shaped state.
class SfdaPhase {
public:
    SfdaPhase(const ModelConfig& mcfg, const SfdaConfig& cfg, const ModelParams& pretrained,
              std::size_t num_clients);

    /// Runs round t on every client; returns per-client stats.
    std::vector<SfdaRoundStats> run_round(const std::vector<Matrix>& target_inputs, double lr,
                                          std::size_t batch_size, std::uint64_t seed,
                                          std::size_t t);

    const ModelParams& student(std::size_t client) const { return students_.at(client); }
    const TeacherState& teacher(std::size_t client) const { return teachers_.at(client); }

    /// Total scalars held, for the source-isolation audit: exactly
    /// num_clients * 2 * model scalar_count (students + teachers), nothing else.
    std::size_t resident_scalars() const;

private:
    ModelConfig mcfg_;
    SfdaConfig cfg_;
    std::vector<ModelParams> students_;
    std::vector<TeacherState> teachers_;
};

}  // namespace adaptfed
