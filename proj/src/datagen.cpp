#include "adaptfed/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace adaptfed {

int LabeledPool::num_classes() const {
    int max_label = -1;
    for (int l : labels) max_label = std::max(max_label, l);
    return max_label + 1;
}

std::string LabeledPool::to_csv() const {
    std::ostringstream out;
    bool coarse = !coarse_labels.empty();
    out << "label";
    if (coarse) out << ",coarse";
    for (std::size_t j = 0; j < inputs.cols; ++j) out << ",f" << j;
    out << "\n";
    for (std::size_t i = 0; i < size(); ++i) {
        out << labels[i];
        if (coarse) out << "," << coarse_labels[i];
        for (std::size_t j = 0; j < inputs.cols; ++j) out << "," << inputs.at(i, j);
        out << "\n";
    }
    return out.str();
}

std::vector<std::size_t> PartitionPlan::client_counts() const {
    std::vector<std::size_t> counts(num_clients, 0);
    for (std::size_t c : assignments) counts[c]++;
    return counts;
}

std::vector<std::vector<std::size_t>> PartitionPlan::client_indices() const {
    std::vector<std::vector<std::size_t>> out(num_clients);
    for (std::size_t i = 0; i < assignments.size(); ++i) out[assignments[i]].push_back(i);
    return out;
}

std::string PartitionPlan::to_json() const {
    nlohmann::json j;
    j["num_clients"] = num_clients;
    auto idx = client_indices();
    for (std::size_t c = 0; c < num_clients; ++c) j["clients"][std::to_string(c)] = idx[c];
    return j.dump(2);
}

namespace {

// Assign each sample of each class multinomially by the class's client
// weights; retry the whole draw while any client comes up empty.
PartitionPlan assign_by_weights(
    const LabeledPool& pool, std::size_t num_clients, Rng& rng,
    const std::function<std::vector<double>(int cls, Rng&)>& draw_shares) {
    if (num_clients < 1) throw std::invalid_argument("partition: need at least one client");
    int classes = pool.num_classes();
    for (int attempt = 0; attempt < 100; ++attempt) {
        PartitionPlan plan;
        plan.num_clients = num_clients;
        plan.assignments.resize(pool.size());
        std::vector<std::vector<double>> cum(classes);
        for (int c = 0; c < classes; ++c) {
            auto shares = draw_shares(c, rng);
            double total = 0;
            for (double s : shares) total += s;
            cum[c].resize(num_clients);
            double acc = 0;
            for (std::size_t i = 0; i < num_clients; ++i) {
                acc += shares[i] / total;
                cum[c][i] = acc;
            }
        }
        for (std::size_t s = 0; s < pool.size(); ++s) {
            double u = rng.next_double();
            const auto& c = cum[pool.labels[s]];
            plan.assignments[s] =
                std::lower_bound(c.begin(), c.end(), u) - c.begin();
            if (plan.assignments[s] >= num_clients) plan.assignments[s] = num_clients - 1;
        }
        auto counts = plan.client_counts();
        if (std::find(counts.begin(), counts.end(), std::size_t{0}) == counts.end()) return plan;
    }
    throw std::runtime_error("partition: a client stayed empty after 100 redraws");
}

}  // namespace

PartitionPlan pathological_partition(const LabeledPool& pool, std::size_t num_clients, Rng& rng) {
    return assign_by_weights(pool, num_clients, rng, [&](int, Rng& r) {
        return r.sample_uniform(0.4, 0.6, num_clients);
    });
}

PartitionPlan dirichlet_partition(const LabeledPool& pool, std::size_t num_clients, double alpha,
                                  Rng& rng) {
    std::vector<double> a(num_clients, alpha);
    return assign_by_weights(pool, num_clients, rng,
                             [&](int, Rng& r) { return r.sample_dirichlet(a); });
}

PartitionPlan pachinko_partition(const LabeledPool& pool, std::size_t num_clients, double alpha,
                                 double beta, Rng& rng) {
    if (pool.coarse_labels.size() != pool.size())
        throw std::invalid_argument("pachinko_partition: pool has no coarse labels");
    int classes = pool.num_classes();
    // coarse -> list of fine classes under it
    std::map<int, std::vector<int>> fine_of;
    std::vector<int> coarse_of(classes, -1);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        int f = pool.labels[i], c = pool.coarse_labels[i];
        if (coarse_of[f] == -1) {
            coarse_of[f] = c;
            fine_of[c].push_back(f);
        } else if (coarse_of[f] != c) {
            throw std::invalid_argument("pachinko_partition: fine class under two coarse classes");
        }
    }
    // Per attempt, draw each client's hierarchical shares once, then hand the
    // resulting per-class client weights to the common assignment loop.
    std::vector<std::vector<double>> weight;  // [class][client], rebuilt per attempt
    auto draw = [&](int cls, Rng& r) {
        if (cls == 0) {
            weight.assign(classes, std::vector<double>(num_clients, 0.0));
            for (std::size_t i = 0; i < num_clients; ++i) {
                std::vector<double> ca(fine_of.size(), alpha);
                auto coarse_shares = r.sample_dirichlet(ca);
                std::size_t k = 0;
                for (const auto& [coarse, fines] : fine_of) {
                    std::vector<double> fa(fines.size(), beta);
                    auto fine_shares = r.sample_dirichlet(fa);
                    for (std::size_t j = 0; j < fines.size(); ++j)
                        weight[fines[j]][i] = coarse_shares[k] * fine_shares[j];
                    ++k;
                }
            }
        }
        return weight[cls];
    };
    return assign_by_weights(pool, num_clients, rng, draw);
}

std::vector<std::size_t> skew_permutation(const SyntheticTaskSpec& spec, std::size_t group) {
    std::vector<std::size_t> perm(spec.num_classes);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    if (group == 0) return perm;
    Rng r = Rng(spec.seed).split("skew", group);
    return r.permutation(spec.num_classes);
}

namespace {

// Orthogonalize a square Gaussian matrix by Gram-Schmidt.
Matrix random_rotation(std::size_t n, Rng& rng) {
    Matrix q(n, n);
    q.data = rng.sample_gaussian(0, 1, n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0;
            for (std::size_t k = 0; k < n; ++k) dot += q.at(i, k) * q.at(j, k);
            for (std::size_t k = 0; k < n; ++k) q.at(i, k) -= dot * q.at(j, k);
        }
        double norm = 0;
        for (std::size_t k = 0; k < n; ++k) norm += q.at(i, k) * q.at(i, k);
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw std::runtime_error("random_rotation: degenerate draw");
        for (std::size_t k = 0; k < n; ++k) q.at(i, k) /= norm;
    }
    return q;
}

}  // namespace

ClientData make_novel_shard(const SyntheticTaskSpec& spec, std::uint64_t shard_seed,
                            std::size_t group) {
    if (spec.skew_groups < 1) throw std::invalid_argument("make_novel_shard: skew_groups >= 1");
    if (group >= spec.skew_groups)
        throw std::invalid_argument("make_novel_shard: group out of range");
    // Same task as make_synthetic with this spec (identical class centers and
    // group permutations), but a fresh sampling stream: the shard a client
    // outside the training federation would hold.
    Rng center_rng = Rng(spec.seed).split("centers");
    Matrix centers(spec.num_classes, spec.input_dim);
    centers.data = center_rng.sample_gaussian(0, 1, spec.num_classes * spec.input_dim);
    auto perm = skew_permutation(spec, group);

    Rng rng = Rng(shard_seed).split("novel-shard");
    std::size_t n = spec.samples_per_client;
    Matrix inputs(n, spec.input_dim);
    std::vector<int> labels(n);
    for (std::size_t s = 0; s < n; ++s) {
        int label = int(rng.next_below(spec.num_classes));
        labels[s] = label;
        std::size_t cluster = perm[label];
        auto noise = rng.sample_gaussian(0, spec.cluster_std, spec.input_dim);
        for (std::size_t j = 0; j < spec.input_dim; ++j)
            inputs.at(s, j) = centers.at(cluster, j) + noise[j];
    }

    std::size_t n_train = n * 4 / 5;
    ClientData cd;
    cd.group = group;
    cd.train.inputs = Matrix(n_train, spec.input_dim);
    cd.test.inputs = Matrix(n - n_train, spec.input_dim);
    for (std::size_t s = 0; s < n; ++s) {
        auto& pool = s < n_train ? cd.train : cd.test;
        std::size_t row = s < n_train ? s : s - n_train;
        for (std::size_t j = 0; j < spec.input_dim; ++j) pool.inputs.at(row, j) = inputs.at(s, j);
        pool.labels.push_back(labels[s]);
    }
    return cd;
}

std::vector<ClientData> make_synthetic(const SyntheticTaskSpec& spec) {
    if (spec.skew_groups < 1) throw std::invalid_argument("make_synthetic: skew_groups >= 1");
    Rng root(spec.seed);
    Rng center_rng = root.split("centers");
    Matrix centers(spec.num_classes, spec.input_dim);
    centers.data = center_rng.sample_gaussian(0, 1, spec.num_classes * spec.input_dim);

    std::vector<ClientData> out(spec.clients);
    for (std::size_t i = 0; i < spec.clients; ++i) {
        Rng rng = root.split("client", i);
        std::size_t group =
            spec.shift == ShiftMode::LabelSkew ? i * spec.skew_groups / spec.clients : 0;
        auto perm = skew_permutation(spec, group);

        Matrix rot;
        if (spec.shift == ShiftMode::Rotation && i > 0) {
            Rng rot_rng = root.split("rotation", i);  // own stream: the base samples
            rot = random_rotation(spec.input_dim, rot_rng);  // stay comparable across modes
        }
        double sigma = 0.0;
        if (spec.shift == ShiftMode::Noise && spec.clients > 1)
            sigma = spec.noise_sigma * double(i) / double(spec.clients - 1);

        std::size_t n = spec.samples_per_client;
        Matrix inputs(n, spec.input_dim);
        std::vector<int> labels(n);
        for (std::size_t s = 0; s < n; ++s) {
            int label = int(rng.next_below(spec.num_classes));
            labels[s] = label;
            std::size_t cluster = perm[label];
            auto noise = rng.sample_gaussian(0, spec.cluster_std, spec.input_dim);
            for (std::size_t j = 0; j < spec.input_dim; ++j)
                inputs.at(s, j) = centers.at(cluster, j) + noise[j];
        }
        if (rot.rows > 0) inputs = matmul(inputs, rot);
        if (sigma > 0) {
            auto noise = rng.sample_gaussian(0, sigma, n * spec.input_dim);
            for (std::size_t k = 0; k < inputs.data.size(); ++k) inputs.data[k] += noise[k];
        }

        std::size_t n_train = n * 4 / 5;
        ClientData& cd = out[i];
        cd.group = group;
        cd.train.inputs = Matrix(n_train, spec.input_dim);
        cd.test.inputs = Matrix(n - n_train, spec.input_dim);
        for (std::size_t s = 0; s < n; ++s) {
            auto& pool = s < n_train ? cd.train : cd.test;
            std::size_t row = s < n_train ? s : s - n_train;
            for (std::size_t j = 0; j < spec.input_dim; ++j)
                pool.inputs.at(row, j) = inputs.at(s, j);
            pool.labels.push_back(labels[s]);
        }
    }
    return out;
}

}  // namespace adaptfed
