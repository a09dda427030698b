#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "adaptfed/analysis.hpp"
#include "adaptfed/experiment.hpp"
#include "adaptfed/gradcheck.hpp"

namespace py = pybind11;
using namespace adaptfed;

namespace {

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Matrix(0, 0);
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols)
            throw std::invalid_argument("matrix rows must all have the same length");
        for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = rows[i][j];
    }
    return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "deterministic federated-learning simulation core";

    py::enum_<Strategy>(m, "Strategy")
        .value("ADAPTFED", Strategy::AdaptFed)
        .value("VANILLA_TAILORED", Strategy::VanillaTailored)
        .value("FEDAVG", Strategy::FedAvg)
        .value("LOCAL_ONLY", Strategy::LocalOnly);

    py::enum_<ShiftMode>(m, "ShiftMode")
        .value("NONE", ShiftMode::None)
        .value("LABEL_SKEW", ShiftMode::LabelSkew)
        .value("ROTATION", ShiftMode::Rotation)
        .value("NOISE", ShiftMode::Noise);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("input_dim", &ModelConfig::input_dim)
        .def_readwrite("d", &ModelConfig::d)
        .def_readwrite("blocks", &ModelConfig::blocks)
        .def_readwrite("focal_levels", &ModelConfig::focal_levels)
        .def_readwrite("tokens", &ModelConfig::tokens)
        .def_readwrite("num_classes", &ModelConfig::num_classes);

    py::class_<HyperNetConfig>(m, "HyperNetConfig")
        .def(py::init<>())
        .def_readwrite("embed_dim", &HyperNetConfig::embed_dim)
        .def_readwrite("hidden", &HyperNetConfig::hidden)
        .def_readwrite("trunk_depth", &HyperNetConfig::trunk_depth)
        .def_readwrite("rank", &HyperNetConfig::rank);

    py::class_<SyntheticTaskSpec>(m, "SyntheticTaskSpec")
        .def(py::init<>())
        .def_readwrite("num_classes", &SyntheticTaskSpec::num_classes)
        .def_readwrite("input_dim", &SyntheticTaskSpec::input_dim)
        .def_readwrite("clients", &SyntheticTaskSpec::clients)
        .def_readwrite("samples_per_client", &SyntheticTaskSpec::samples_per_client)
        .def_readwrite("shift", &SyntheticTaskSpec::shift)
        .def_readwrite("skew_groups", &SyntheticTaskSpec::skew_groups)
        .def_readwrite("noise_sigma", &SyntheticTaskSpec::noise_sigma)
        .def_readwrite("cluster_std", &SyntheticTaskSpec::cluster_std)
        .def_readwrite("seed", &SyntheticTaskSpec::seed);

    py::class_<RoundConfig>(m, "RoundConfig")
        .def(py::init<>())
        .def_readwrite("rounds", &RoundConfig::rounds)
        .def_readwrite("local_epochs", &RoundConfig::local_epochs)
        .def_readwrite("local_lr", &RoundConfig::local_lr)
        .def_readwrite("global_lr", &RoundConfig::global_lr)
        .def_readwrite("sample_fraction", &RoundConfig::sample_fraction)
        .def_readwrite("batch_size", &RoundConfig::batch_size)
        .def_readwrite("eval_every", &RoundConfig::eval_every)
        .def_readwrite("workers", &RoundConfig::workers)
        .def_readwrite("seed", &RoundConfig::seed);

    py::class_<SfdaConfig>(m, "SfdaConfig")
        .def(py::init<>())
        .def_readwrite("lambda_kd", &SfdaConfig::lambda_kd)
        .def_readwrite("tau_conf", &SfdaConfig::tau_conf)
        .def_readwrite("kd_temperature", &SfdaConfig::kd_temperature)
        .def_readwrite("omega", &SfdaConfig::omega)
        .def_readwrite("t_start", &SfdaConfig::t_start);

    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def(py::init<>())
        .def_readwrite("seed", &ExperimentConfig::seed)
        .def_readwrite("output_dir", &ExperimentConfig::output_dir)
        .def_readwrite("strategy", &ExperimentConfig::strategy)
        .def_readwrite("task", &ExperimentConfig::task)
        .def_readwrite("partition_scheme", &ExperimentConfig::partition_scheme)
        .def_readwrite("partition_alpha", &ExperimentConfig::partition_alpha)
        .def_readwrite("partition_beta", &ExperimentConfig::partition_beta)
        .def_readwrite("rounds", &ExperimentConfig::rounds)
        .def_readwrite("model", &ExperimentConfig::model)
        .def_readwrite("hypernet", &ExperimentConfig::hypernet)
        .def_readwrite("run_sfda", &ExperimentConfig::run_sfda)
        .def_readwrite("sfda", &ExperimentConfig::sfda)
        .def_readwrite("sfda_rounds", &ExperimentConfig::sfda_rounds)
        .def_readwrite("sfda_lr", &ExperimentConfig::sfda_lr)
        .def_readwrite("pretrain_epochs", &ExperimentConfig::pretrain_epochs);

    py::class_<MetricRecord>(m, "MetricRecord")
        .def_readonly("round", &MetricRecord::round)
        .def_readonly("client", &MetricRecord::client)
        .def_readonly("strategy", &MetricRecord::strategy)
        .def_readonly("loss", &MetricRecord::loss)
        .def_readonly("acc", &MetricRecord::acc)
        .def_readonly("tx_scalars", &MetricRecord::tx_scalars)
        .def("to_jsonl", &MetricRecord::to_jsonl);

    py::class_<ServerState>(m, "ServerState")
        .def_readonly("round", &ServerState::round)
        .def_property_readonly("strategy",
                               [](const ServerState& s) { return strategy_name(s.strategy); })
        .def("resident_scalars",
             [](const ServerState& s) { return s.serialize().scalar_count(); });

    py::class_<ExperimentResult>(m, "ExperimentResult")
        .def_readonly("metrics", &ExperimentResult::metrics)
        .def_readonly("final_acc", &ExperimentResult::final_acc)
        .def_readonly("final_loss", &ExperimentResult::final_loss)
        .def_property_readonly(
            "server", [](ExperimentResult& r) -> ServerState& { return r.server; },
            py::return_value_policy::reference_internal);

    py::class_<SfdaExperimentResult>(m, "SfdaExperimentResult")
        .def_readonly("pretrained_acc", &SfdaExperimentResult::pretrained_acc)
        .def_readonly("adapted_acc", &SfdaExperimentResult::adapted_acc)
        .def_readonly("resident_scalars", &SfdaExperimentResult::resident_scalars)
        .def_readonly("expected_resident_scalars",
                      &SfdaExperimentResult::expected_resident_scalars);

    py::class_<LabeledPool>(m, "LabeledPool")
        .def_property_readonly("size", &LabeledPool::size)
        .def_readonly("labels", &LabeledPool::labels)
        .def("to_csv", &LabeledPool::to_csv);

    py::class_<ClientData>(m, "ClientData")
        .def_readonly("train", &ClientData::train)
        .def_readonly("test", &ClientData::test)
        .def_readonly("group", &ClientData::group);

    py::class_<AdaptResult>(m, "AdaptResult")
        .def_readonly("acc_per_epoch", &AdaptResult::acc_per_epoch)
        .def_property_readonly("z", [](const AdaptResult& r) { return r.z.z; });

    py::class_<BoundInputs>(m, "BoundInputs")
        .def(py::init<>())
        .def_readwrite("total_samples", &BoundInputs::total_samples)
        .def_readwrite("clients", &BoundInputs::clients)
        .def_readwrite("d_vc", &BoundInputs::d_vc)
        .def_readwrite("delta", &BoundInputs::delta)
        .def_readwrite("l_h", &BoundInputs::l_h)
        .def_readwrite("l_phi", &BoundInputs::l_phi)
        .def_readwrite("l_z", &BoundInputs::l_z)
        .def_readwrite("l_xi", &BoundInputs::l_xi)
        .def_readwrite("r_h", &BoundInputs::r_h)
        .def_readwrite("r_t", &BoundInputs::r_t);

    py::class_<BoundTerms>(m, "BoundTerms")
        .def_readonly("client_term", &BoundTerms::client_term)
        .def_readonly("capacity_term", &BoundTerms::capacity_term)
        .def_readonly("hypernet_term", &BoundTerms::hypernet_term)
        .def_readonly("drift_term", &BoundTerms::drift_term)
        .def_readonly("total", &BoundTerms::total)
        .def("pretty", &BoundTerms::pretty);

    py::class_<CostReport>(m, "CostReport")
        .def_readonly("strategy", &CostReport::strategy)
        .def_readonly("server_resident", &CostReport::server_resident)
        .def_readonly("tx_down", &CostReport::tx_down)
        .def_readonly("tx_up", &CostReport::tx_up)
        .def_readonly("per_client_personalized", &CostReport::per_client_personalized);

    py::class_<GradCheckReport>(m, "GradCheckReport")
        .def_readonly("passed", &GradCheckReport::passed)
        .def_readonly("max_rel", &GradCheckReport::max_rel)
        .def_readonly("lines", &GradCheckReport::lines);

    m.def("parse_experiment_config", &parse_experiment_config, py::arg("json_text"));
    m.def("run_experiment", &run_experiment, py::arg("config"),
          py::call_guard<py::gil_scoped_release>());
    m.def("run_sfda_experiment", &run_sfda_experiment, py::arg("config"),
          py::call_guard<py::gil_scoped_release>());
    m.def("make_novel_shard", &make_novel_shard, py::arg("task"), py::arg("shard_seed"),
          py::arg("group"));
    m.def(
        "adapt_new_client",
        [](const ServerState& server, const LabeledPool& shard, const LabeledPool& eval_pool,
           std::size_t epochs, double alpha, const RoundConfig& cfg) {
            return adapt_new_client(server, shard, eval_pool, epochs, alpha, cfg);
        },
        py::arg("server"), py::arg("shard"), py::arg("eval_pool"), py::arg("epochs"),
        py::arg("alpha"), py::arg("round_config"));

    m.def("generalization_bound", &generalization_bound, py::arg("inputs"));
    m.def("bound_inputs_from_json", &bound_inputs_from_json, py::arg("json_text"));
    m.def("cost_report", &cost_report, py::arg("model"), py::arg("hypernet"), py::arg("clients"),
          py::arg("strategy"));
    m.def("crossover_clients", &crossover_clients, py::arg("model"), py::arg("hypernet"));
    m.def("run_gradcheck", &run_gradcheck, py::arg("seed") = 0,
          py::call_guard<py::gil_scoped_release>());

    m.def(
        "kd_loss",
        [](const std::vector<std::vector<double>>& student,
           const std::vector<std::vector<double>>& teacher, double t_kd) {
            return kd_loss(to_matrix(student), to_matrix(teacher), t_kd);
        },
        py::arg("student_logits"), py::arg("teacher_logits"), py::arg("t_kd") = 2.0);
    m.def(
        "pseudo_labels",
        [](const std::vector<std::vector<double>>& teacher_logits, double tau_conf) {
            auto p = pseudo_labels(to_matrix(teacher_logits), tau_conf);
            return py::make_tuple(p.indices, p.labels);
        },
        py::arg("teacher_logits"), py::arg("tau_conf"));
}
