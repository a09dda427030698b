#include "adaptfed/sfda.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adaptfed {

StyleDescriptor extract_style(const Matrix& inputs) {
    if (inputs.rows == 0) throw std::invalid_argument("extract_style: empty input");
    StyleDescriptor s;
    s.mean.assign(inputs.cols, 0.0);
    s.std.assign(inputs.cols, 0.0);
    for (std::size_t i = 0; i < inputs.rows; ++i)
        for (std::size_t j = 0; j < inputs.cols; ++j) s.mean[j] += inputs.at(i, j);
    for (std::size_t j = 0; j < inputs.cols; ++j) s.mean[j] /= double(inputs.rows);
    for (std::size_t i = 0; i < inputs.rows; ++i)
        for (std::size_t j = 0; j < inputs.cols; ++j) {
            double d = inputs.at(i, j) - s.mean[j];
            s.std[j] += d * d;
        }
    for (std::size_t j = 0; j < inputs.cols; ++j) s.std[j] = std::sqrt(s.std[j] / inputs.rows);
    return s;
}

Matrix apply_style(const Matrix& source, const StyleDescriptor& style) {
    if (style.mean.size() != source.cols)
        throw std::invalid_argument("apply_style: style dimension mismatch");
    StyleDescriptor src = extract_style(source);
    Matrix out = source;
    for (std::size_t j = 0; j < source.cols; ++j) {
        if (src.std[j] == 0.0) continue;  // constant feature: pass through
        for (std::size_t i = 0; i < source.rows; ++i)
            out.at(i, j) = style.std[j] * (source.at(i, j) - src.mean[j]) / src.std[j] +
                           style.mean[j];
    }
    return out;
}

namespace {

// Row softmax at temperature t into `probs`.
Matrix softmax_t(const Matrix& logits, double t) {
    Matrix p = logits;
    for (std::size_t r = 0; r < p.rows; ++r) {
        double* row = &p.data[r * p.cols];
        double mx = row[0];
        for (std::size_t k = 1; k < p.cols; ++k) mx = std::max(mx, row[k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < p.cols; ++k) {
            row[k] = std::exp((row[k] - mx) / t);
            sum += row[k];
        }
        for (std::size_t k = 0; k < p.cols; ++k) row[k] /= sum;
    }
    return p;
}

}  // namespace

PseudoLabels pseudo_labels(const Matrix& teacher_logits, double tau_conf) {
    PseudoLabels out;
    Matrix p = softmax_t(teacher_logits, 1.0);
    for (std::size_t r = 0; r < p.rows; ++r) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < p.cols; ++k)
            if (p.at(r, k) > p.at(r, best)) best = k;
        if (p.at(r, best) >= tau_conf) {
            out.indices.push_back(r);
            out.labels.push_back(int(best));
        }
    }
    return out;
}

double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, double t_kd) {
    if (!student_logits.same_shape(teacher_logits))
        throw std::invalid_argument("kd_loss: shape mismatch");
    if (t_kd <= 0) throw std::invalid_argument("kd_loss: temperature must be positive");
    Matrix ps = softmax_t(student_logits, t_kd);
    Matrix pt = softmax_t(teacher_logits, t_kd);
    double loss = 0.0;
    for (std::size_t i = 0; i < ps.data.size(); ++i) {
        double p = pt.data[i];
        if (p > 0) loss += p * std::log(p / std::max(ps.data[i], 1e-300));
    }
    return t_kd * t_kd * loss / double(ps.rows);
}

Matrix kd_loss_dlogits(const Matrix& student_logits, const Matrix& teacher_logits, double t_kd) {
    // d/ds of T^2/n * sum KL(pt || softmax(s/T)) = T/n * (ps - pt)
    Matrix ps = softmax_t(student_logits, t_kd);
    Matrix pt = softmax_t(teacher_logits, t_kd);
    Matrix d(ps.rows, ps.cols);
    for (std::size_t i = 0; i < d.data.size(); ++i)
        d.data[i] = t_kd * (ps.data[i] - pt.data[i]) / double(ps.rows);
    return d;
}

void swa_update(TeacherState& teacher, const ModelParams& student, std::size_t t) {
    if (t < teacher.t_start) throw std::invalid_argument("swa_update: t before t_start");
    if ((t - teacher.t_start) % teacher.omega != 0)
        throw std::invalid_argument("swa_update: t off the omega schedule");
    double n = double(teacher.n_updates);
    auto w = teacher.weights.flatten();
    auto s = student.flatten();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (w[i] * n + s[i]) / (n + 1.0);
    teacher.weights.unflatten(w);
    teacher.n_updates += 1;
}

SfdaRoundStats sfda_round(const ModelConfig& mcfg, ModelParams& student, TeacherState& teacher,
                          const Matrix& target_inputs, const SfdaConfig& cfg, double lr,
                          std::size_t batch_size, Rng& rng, std::size_t t) {
    SfdaRoundStats stats;
    std::size_t n = target_inputs.rows;
    auto order = rng.permutation(n);
    std::size_t batches = 0, kept = 0;
    for (std::size_t from = 0; from < n; from += batch_size) {
        std::size_t to = std::min(from + batch_size, n);
        Batch batch;
        batch.inputs = Matrix(to - from, target_inputs.cols);
        batch.labels.assign(to - from, 0);  // placeholder; true labels never touched
        for (std::size_t i = from; i < to; ++i)
            for (std::size_t j = 0; j < target_inputs.cols; ++j)
                batch.inputs.at(i - from, j) = target_inputs.at(order[i], j);

        Matrix teacher_logits = forward(mcfg, teacher.weights, batch).logits;
        auto pl = pseudo_labels(teacher_logits, cfg.tau_conf);
        kept += pl.indices.size();

        ForwardCache cache = forward(mcfg, student, batch);
        Matrix dlogits(cache.logits.rows, cache.logits.cols);
        double pseudo = 0.0;
        if (!pl.indices.empty()) {
            // cross-entropy on the confident subset, averaged over the subset
            Matrix sub(pl.indices.size(), cache.logits.cols);
            for (std::size_t i = 0; i < pl.indices.size(); ++i)
                for (std::size_t k = 0; k < cache.logits.cols; ++k)
                    sub.at(i, k) = cache.logits.at(pl.indices[i], k);
            Matrix probs = softmax_t(sub, 1.0);
            for (std::size_t i = 0; i < pl.indices.size(); ++i) {
                pseudo -= std::log(std::max(probs.at(i, std::size_t(pl.labels[i])), 1e-300));
                probs.at(i, std::size_t(pl.labels[i])) -= 1.0;
            }
            pseudo /= double(pl.indices.size());
            for (std::size_t i = 0; i < pl.indices.size(); ++i)
                for (std::size_t k = 0; k < cache.logits.cols; ++k)
                    dlogits.at(pl.indices[i], k) =
                        probs.at(i, k) / double(pl.indices.size());
        }
        double kd = kd_loss(cache.logits, teacher_logits, cfg.kd_temperature);
        add_inplace(dlogits, kd_loss_dlogits(cache.logits, teacher_logits, cfg.kd_temperature),
                    cfg.lambda_kd);

        auto grad = backward_from_dlogits(mcfg, student, batch, cache, dlogits);
        sgd_step(student, grad, lr);

        stats.pseudo_loss += pseudo;
        stats.kd_loss += kd;
        ++batches;
    }
    if (batches > 0) {
        stats.pseudo_loss /= double(batches);
        stats.kd_loss /= double(batches);
        stats.pseudo_kept_frac = double(kept) / double(n);
    }
    if (t >= cfg.t_start && (t - cfg.t_start) % cfg.omega == 0) swa_update(teacher, student, t);
    return stats;
}

ModelParams pretrain_source(const ModelConfig& mcfg, const LabeledPool& source,
                            const std::vector<StyleDescriptor>& styles, std::size_t epochs,
                            double lr, std::size_t batch_size, Rng& rng) {
    Rng init_rng = rng.split("pretrain-init");
    ModelParams params = init_model_params(mcfg, init_rng);
    Rng train_rng = rng.split("pretrain");
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        auto order = train_rng.permutation(source.size());
        for (std::size_t from = 0; from < order.size(); from += batch_size) {
            std::size_t to = std::min(from + batch_size, order.size());
            Batch batch;
            batch.inputs = Matrix(to - from, source.inputs.cols);
            for (std::size_t i = from; i < to; ++i) {
                for (std::size_t j = 0; j < source.inputs.cols; ++j)
                    batch.inputs.at(i - from, j) = source.inputs.at(order[i], j);
                batch.labels.push_back(source.labels[order[i]]);
            }
            if (!styles.empty())
                batch.inputs =
                    apply_style(batch.inputs, styles[train_rng.next_below(styles.size())]);
            auto lg = loss_and_grad(mcfg, params, batch);
            sgd_step(params, lg.grad, lr);
        }
    }
    return params;
}

SfdaPhase::SfdaPhase(const ModelConfig& mcfg, const SfdaConfig& cfg, const ModelParams& pretrained,
                     std::size_t num_clients)
    : mcfg_(mcfg), cfg_(cfg) {
    students_.assign(num_clients, pretrained);
    TeacherState t;
    t.weights = pretrained;
    t.omega = cfg.omega;
    t.t_start = cfg.t_start;
    teachers_.assign(num_clients, t);
}

std::vector<SfdaRoundStats> SfdaPhase::run_round(const std::vector<Matrix>& target_inputs,
                                                 double lr, std::size_t batch_size,
                                                 std::uint64_t seed, std::size_t t) {
    if (target_inputs.size() != students_.size())
        throw std::invalid_argument("SfdaPhase::run_round: wrong number of client shards");
    std::vector<SfdaRoundStats> stats;
    for (std::size_t c = 0; c < students_.size(); ++c) {
        Rng rng = Rng(seed).split("sfda-round", t).split("client", c);
        stats.push_back(sfda_round(mcfg_, students_[c], teachers_[c], target_inputs[c], cfg_, lr,
                                   batch_size, rng, t));
    }
    return stats;
}

std::size_t SfdaPhase::resident_scalars() const {
    std::size_t total = 0;
    for (const auto& s : students_) total += s.scalar_count();
    for (const auto& t : teachers_) total += t.weights.scalar_count();
    return total;
}

}  // namespace adaptfed
