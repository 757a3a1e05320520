// Command-line entry point: fl-run, theory-run, partition-inspect, sweep, grad-check.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fedbug/config.hpp"
#include "fedbug/error.hpp"
#include "fedbug/experiment.hpp"
#include "fedbug/gradcheck.hpp"
#include "fedbug/parallel.hpp"
#include "fedbug/sweep.hpp"
#include "fedbug/theory.hpp"

namespace fs = std::filesystem;
using namespace fedbug;

namespace {

struct FlRunArgs {
    std::string config;
    std::string out;
    std::size_t threads = 1;
    bool record_timing = false;
    bool quiet = false;
};

int fl_run(const FlRunArgs& args) {
    const ExperimentConfig cfg = parse_config_file(args.config);
    const fs::path out = args.out.empty() ? fs::path("runs") / fs::path(args.config).stem() : fs::path(args.out);
    fs::create_directories(out);
    {
        std::ofstream echo(out / "resolved_config.json");
        echo << resolved_json(cfg).dump(2) << "\n";
    }
    RunOptions options;
    options.threads = resolve_threads(args.threads);
    options.record_timing = args.record_timing;
    if (!args.quiet) {
        options.on_round = [](const RoundMetrics& m) {
            std::fprintf(stderr, "round %zu  acc %.4f  loss %.4f  drift %.4f\n", m.round, m.test_accuracy,
                         m.test_loss, m.client_drift);
        };
    }
    const RunResult result = run_experiment(cfg, options);
    const std::string id = write_run_directory(out, cfg, result.rounds);
    save_checkpoint(result.final_model, (out / "final_model.bin").string());
    const auto& last = result.rounds.back();
    std::printf("final test_accuracy=%.6f test_loss=%.6f config=%s out=%s\n", last.test_accuracy, last.test_loss,
                id.c_str(), out.string().c_str());
    return 0;
}

struct TheoryArgs {
    theory::TheoryConfig cfg;
    std::string out = "theory_out";
    std::size_t threads = 1;
};

int theory_run(const TheoryArgs& args) {
    const auto rows = theory::run_figure2(args.cfg, resolve_threads(args.threads));
    const fs::path out(args.out);
    fs::create_directories(out);
    {
        std::ofstream csv(out / "theory_log.csv");
        theory::write_theory_csv(csv, rows);
    }
    const auto summary = theory::summarize(rows);
    {
        std::ofstream js(out / "theory_summary.json");
        js << theory::summary_json(summary, args.cfg) << "\n";
    }
    auto flag = [](bool ok) { return ok ? "pass" : "FAIL"; };
    std::printf("pearson(bound, r)        %.4f  over %zu pairs  %s\n", summary.pearson_bound_vs_r, summary.n_pairs,
                flag(summary.pass_correlation));
    std::printf("fedbug r < fedavg r      %.4f  over %zu pairs  %s\n", summary.fedbug_lt_fedavg_fraction,
                summary.n_compared, flag(summary.pass_ratio_ordering));
    std::printf("loss ordering (round>=5) %s\n", flag(summary.loss_ordering_ok));
    std::printf("bound coverage (a=0.2)   %.4f  %s\n", summary.bound_coverage, flag(summary.pass_bound_coverage));
    std::printf("fedbabu |r-0.5| max      %.3g  over %zu rounds  %s\n", summary.fedbabu_max_deviation,
                summary.fedbabu_converged_rounds, flag(summary.pass_fedbabu));
    return 0;
}

struct InspectArgs {
    std::string config;
    std::string out;
    std::optional<double> alpha;
    std::optional<std::size_t> n_clients;
    std::optional<std::string> mode;
    std::optional<std::uint64_t> seed;
};

int partition_inspect(const InspectArgs& args) {
    ExperimentConfig cfg = parse_config_file(args.config);
    if (args.alpha) {
        if (!(*args.alpha > 0.0)) throw ConfigError("--alpha must be > 0");
        cfg.partition.alpha = *args.alpha;
    }
    if (args.n_clients) cfg.partition.n_clients = *args.n_clients;
    if (args.mode) {
        if (*args.mode == "iid") {
            cfg.partition.mode = PartitionMode::kIID;
        } else if (*args.mode == "dirichlet") {
            cfg.partition.mode = PartitionMode::kDirichlet;
        } else {
            throw ConfigError("--mode must be 'iid' or 'dirichlet'");
        }
    }
    if (args.seed) cfg.partition.seed = *args.seed;
    const TrainTest data = load_data(cfg);
    const auto shards = partition(data.train, cfg.partition);
    const auto counts = class_counts(data.train, shards);

    std::ostringstream csv;
    csv << "client_id,n";
    for (int c = 0; c < data.train.num_classes; ++c) csv << ",class_" << c;
    csv << '\n';
    for (std::size_t i = 0; i < shards.size(); ++i) {
        csv << shards[i].client_id << ',' << shards[i].indices.size();
        for (auto n : counts[i]) csv << ',' << n;
        csv << '\n';
    }
    if (args.out.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(args.out);
        if (!out) throw ConfigError("cannot write '" + args.out + "'");
        out << csv.str();
    }
    return 0;
}

struct SweepArgs {
    std::string spec;
    std::string out = "sweep_out";
    std::size_t threads = 1;
};

int sweep(const SweepArgs& args) {
    const SweepSpec spec = parse_sweep_file(args.spec);
    const SweepResult result = run_sweep(spec, args.out, args.threads);
    std::size_t failed = 0;
    for (const auto& row : result.summary) {
        std::printf("%s=%s  runs %zu  ok %zu  mean acc %.4f  std %.4f  %s\n", spec.axis.c_str(),
                    row.axis_value.c_str(), row.n_runs, row.n_ok, row.mean_final_accuracy, row.std_final_accuracy,
                    row.status.c_str());
        failed += row.n_runs - row.n_ok;
    }
    std::printf("summary: %s\n", (fs::path(args.out) / "sweep_summary.csv").string().c_str());
    return failed == 0 ? 0 : static_cast<int>(ExitCode::kData);
}

struct GradArgs {
    std::size_t cases = 100;
    std::uint64_t seed = 0;
    double tolerance = 1e-5;
};

int grad_check(const GradArgs& args) {
    const GradCheckReport report = run_gradcheck(args.cases, args.seed);
    for (const auto& c : report.cases) {
        std::printf("%-22s entries %-7zu max rel error %.3e\n", c.name.c_str(), c.n_entries, c.max_rel_error);
    }
    std::printf("max relative error: %.3e (tolerance %.0e)\n", report.max_rel_error, args.tolerance);
    return report.max_rel_error <= args.tolerance ? 0 : static_cast<int>(ExitCode::kNumeric);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning with gradual unfreezing"};
    app.require_subcommand(1);

    FlRunArgs fl;
    auto* fl_cmd = app.add_subcommand("fl-run", "Run one federated experiment from a JSON config");
    fl_cmd->add_option("--config", fl.config, "Experiment config")->required();
    fl_cmd->add_option("--out", fl.out, "Output directory (default runs/<config name>)");
    fl_cmd->add_option("--threads", fl.threads, "Client worker threads (0 = all cores)");
    fl_cmd->add_flag("--record-timing", fl.record_timing, "Fill wall_time_ms (makes metrics.csv run-dependent)");
    fl_cmd->add_flag("--quiet", fl.quiet, "No per-round progress on stderr");

    TheoryArgs th;
    std::vector<std::size_t> frozen{1, 5, 10};
    bool no_fedbabu = false;
    auto* th_cmd = app.add_subcommand("theory-run", "Simulate the two-client scalar model");
    th_cmd->add_option("--seeds", th.cfg.n_seeds, "Number of random initialisations")->check(CLI::PositiveNumber);
    th_cmd->add_option("--rounds", th.cfg.rounds, "Server rounds")->check(CLI::PositiveNumber);
    th_cmd->add_option("--local-iters", th.cfg.local_iters, "Local SGD steps per round");
    th_cmd->add_option("--lr", th.cfg.eta_local, "Local step size")->check(CLI::PositiveNumber);
    th_cmd->add_option("--frozen-steps", frozen, "FedBug frozen-step counts")->delimiter(',');
    th_cmd->add_option("--base-seed", th.cfg.base_seed, "Seed of the initial-state stream");
    th_cmd->add_flag("--no-fedbabu", no_fedbabu, "Skip the always-frozen variant");
    th_cmd->add_option("--threads", th.threads, "Worker threads (0 = all cores)");
    th_cmd->add_option("--out", th.out, "Output directory");

    InspectArgs pi;
    auto* pi_cmd = app.add_subcommand("partition-inspect", "Print the per-client class-count matrix as CSV");
    pi_cmd->add_option("--config", pi.config, "Experiment config")->required();
    pi_cmd->add_option("--alpha", pi.alpha, "Override partition.alpha");
    pi_cmd->add_option("--n-clients", pi.n_clients, "Override partition.n_clients");
    pi_cmd->add_option("--mode", pi.mode, "Override partition.mode (iid|dirichlet)");
    pi_cmd->add_option("--seed", pi.seed, "Override the partition seed");
    pi_cmd->add_option("--out", pi.out, "Write to file instead of stdout");

    SweepArgs sw;
    auto* sw_cmd = app.add_subcommand("sweep", "Run a one-axis sweep over a base config");
    sw_cmd->add_option("--spec", sw.spec, "Sweep spec JSON")->required();
    sw_cmd->add_option("--out", sw.out, "Output directory");
    sw_cmd->add_option("--threads", sw.threads, "Concurrent cells (0 = all cores)");

    GradArgs gc;
    auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference check of every layer and loss gradient");
    gc_cmd->add_option("--cases", gc.cases, "Random cases per kind")->check(CLI::PositiveNumber);
    gc_cmd->add_option("--seed", gc.seed, "RNG seed");
    gc_cmd->add_option("--tolerance", gc.tolerance, "Pass threshold on relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ExitCode::kConfig);
    }

    try {
        if (*fl_cmd) return fl_run(fl);
        if (*th_cmd) {
            th.cfg.frozen_steps = frozen;
            th.cfg.include_fedbabu = !no_fedbabu;
            return theory_run(th);
        }
        if (*pi_cmd) return partition_inspect(pi);
        if (*sw_cmd) return sweep(sw);
        if (*gc_cmd) return grad_check(gc);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
