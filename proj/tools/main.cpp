#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "adaptfed/analysis.hpp"
#include "adaptfed/experiment.hpp"
#include "adaptfed/gradcheck.hpp"

using namespace adaptfed;

namespace {

ExperimentConfig load_config(const std::string& path, std::uint64_t* seed_override,
                             const std::string& output_override) {
    auto cfg = load_experiment_config(path);
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.task.seed = *seed_override;
        cfg.rounds.seed = *seed_override;
    }
    if (!output_override.empty()) cfg.output_dir = output_override;
    if (const char* env = std::getenv("ADAPTFED_OUTPUT_DIR")) cfg.output_dir = env;
    return cfg;
}

int cmd_run(const std::string& config_path, std::uint64_t* seed_override,
            const std::string& output_override, std::size_t* workers, bool verbose) {
    auto cfg = load_config(config_path, seed_override, output_override);
    if (workers) cfg.rounds.workers = *workers;
    if (cfg.run_sfda) {
        auto result = run_sfda_experiment(cfg);
        if (result.resident_scalars != result.expected_resident_scalars)
            throw std::runtime_error("sfda state audit failed: adaptation phase holds "
                                     "more than per-client model state");
        std::filesystem::create_directories(cfg.output_dir);
        std::ostringstream out;
        out.precision(17);
        out << "pretrained_acc,adapted_acc\n"
            << result.pretrained_acc << "," << result.adapted_acc << "\n";
        atomic_write_text(cfg.output_dir + "/sfda_summary.csv", out.str());
        std::printf("sfda: pretrained %.4f -> adapted %.4f\n", result.pretrained_acc,
                    result.adapted_acc);
        return 0;
    }
    auto result = run_experiment(cfg);
    auto path = write_outputs(result, cfg);
    if (verbose)
        for (const auto& r : result.metrics) std::puts(r.to_jsonl().c_str());
    std::printf("%s: %zu rounds, final acc %.4f, metrics at %s\n",
                strategy_name(cfg.strategy).c_str(), cfg.rounds.rounds, result.final_acc,
                path.c_str());
    return 0;
}

int cmd_partition(const std::string& config_path, const std::string& output_override) {
    auto cfg = load_config(config_path, nullptr, output_override);
    auto clients = build_clients(cfg);
    std::filesystem::create_directories(cfg.output_dir);

    std::ostringstream csv;
    csv << "client,class,count\n";
    for (const auto& c : clients) {
        std::vector<std::size_t> hist(cfg.task.num_classes, 0);
        for (int l : c.train.labels) hist[std::size_t(l)]++;
        for (std::size_t k = 0; k < hist.size(); ++k)
            csv << c.id << "," << k << "," << hist[k] << "\n";
    }
    atomic_write_text(cfg.output_dir + "/class_histogram.csv", csv.str());

    if (cfg.partition_scheme != "per-client") {
        // re-derive the plan on the same stream the experiment would use
        SyntheticTaskSpec pooled = cfg.task;
        pooled.clients = 1;
        pooled.samples_per_client = cfg.task.clients * cfg.task.samples_per_client;
        pooled.shift = ShiftMode::None;
        auto data = make_synthetic(pooled);
        LabeledPool pool;
        pool.inputs = Matrix(0, 0);
        pool.labels = data[0].train.labels;
        pool.labels.insert(pool.labels.end(), data[0].test.labels.begin(),
                           data[0].test.labels.end());
        pool.inputs = Matrix(pool.labels.size(), 1);
        Rng rng = Rng(cfg.seed).split("partition");
        PartitionPlan plan;
        if (cfg.partition_scheme == "pathological")
            plan = pathological_partition(pool, cfg.task.clients, rng);
        else if (cfg.partition_scheme == "dirichlet")
            plan = dirichlet_partition(pool, cfg.task.clients, cfg.partition_alpha, rng);
        else
            plan = pachinko_partition(pool, cfg.task.clients, cfg.partition_alpha,
                                      cfg.partition_beta, rng);
        atomic_write_text(cfg.output_dir + "/partition.json", plan.to_json());
    }
    std::printf("partition outputs written to %s\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    auto report = run_gradcheck(seed);
    for (const auto& line : report.lines) std::puts(line.c_str());
    std::printf("gradcheck %s (max relative error %.3e)\n", report.passed ? "PASS" : "FAIL",
                report.max_rel);
    return report.passed ? 0 : 1;
}

int cmd_bound(const std::string& inputs_path) {
    std::ifstream in(inputs_path);
    if (!in) throw std::invalid_argument("bound: cannot open " + inputs_path);
    std::stringstream buf;
    buf << in.rdbuf();
    auto terms = generalization_bound(bound_inputs_from_json(buf.str()));
    std::fputs(terms.pretty().c_str(), stdout);
    return 0;
}

int cmd_adapt(const std::string& config_path, const std::string& checkpoint_path,
              std::size_t epochs, double lr, std::uint64_t shard_seed, std::size_t group,
              const std::string& output_override) {
    auto cfg = load_config(config_path, nullptr, output_override);
    auto ckpt = load_checkpoint(checkpoint_path);
    if (ckpt.kind != "adaptfed")
        throw std::runtime_error("adapt: checkpoint is for strategy \"" + ckpt.kind +
                                 "\", need adaptfed");
    Rng rng(cfg.seed);
    auto server =
        init_server(cfg.model, cfg.hypernet, Strategy::AdaptFed, cfg.task.clients, rng);
    server.global.xi.unflatten(ckpt.section("xi"));
    server.gen->unflatten(ckpt.section("phi"));

    // a fresh client on the same task: shared centers and group permutation,
    // samples drawn from the shard seed
    auto shard = make_novel_shard(cfg.task, shard_seed, group);
    auto result = adapt_new_client(server, shard.train, shard.test, epochs, lr, cfg.rounds);

    std::filesystem::create_directories(cfg.output_dir);
    std::ostringstream csv;
    csv.precision(17);
    csv << "epoch,accuracy\n";
    for (std::size_t e = 0; e < result.acc_per_epoch.size(); ++e)
        csv << e << "," << result.acc_per_epoch[e] << "\n";
    atomic_write_text(cfg.output_dir + "/adapt_trajectory.csv", csv.str());
    std::printf("adapt: accuracy %.4f -> %.4f over %zu epochs\n", result.acc_per_epoch.front(),
                result.acc_per_epoch.back(), epochs);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptfed: deterministic federated learning simulation"};
    app.require_subcommand(1);

    std::string config_path, inputs_path, checkpoint_path, output_dir;
    std::uint64_t seed = 0, shard_seed = 1000;
    bool seed_given = false;
    std::size_t workers = 1, epochs = 5, group = 0;
    double lr = 0.5;
    bool verbose = false;

    auto* run = app.add_subcommand("run", "run an experiment from a config file");
    run->add_option("config", config_path, "experiment JSON")->required();
    run->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });
    run->add_option("--workers", workers, "parallel cohort workers (default 1)");
    run->add_option("--output-dir", output_dir);
    run->add_flag("--verbose", verbose);

    auto* part = app.add_subcommand("partition", "write partition plan and class histogram");
    part->add_option("config", config_path, "experiment JSON")->required();
    part->add_option("--output-dir", output_dir);

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suites");
    grad->add_option("--seed", seed);

    auto* bound = app.add_subcommand("bound", "evaluate the generalization bound");
    bound->add_option("inputs", inputs_path, "bound inputs JSON")->required();

    auto* adapt = app.add_subcommand("adapt", "novel-client embedding adaptation");
    adapt->add_option("config", config_path, "experiment JSON")->required();
    adapt->add_option("checkpoint", checkpoint_path, "adaptfed checkpoint")->required();
    adapt->add_option("--epochs", epochs);
    adapt->add_option("--lr", lr);
    adapt->add_option("--shard-seed", shard_seed);
    adapt->add_option("--group", group);
    adapt->add_option("--output-dir", output_dir);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(config_path, seed_given ? &seed : nullptr, output_dir,
                           run->count("--workers") ? &workers : nullptr, verbose);
        if (part->parsed()) return cmd_partition(config_path, output_dir);
        if (grad->parsed()) return cmd_gradcheck(seed);
        if (bound->parsed()) return cmd_bound(inputs_path);
        if (adapt->parsed())
            return cmd_adapt(config_path, checkpoint_path, epochs, lr, shard_seed, group,
                             output_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
