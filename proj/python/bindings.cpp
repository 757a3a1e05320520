#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "fedbug/config.hpp"
#include "fedbug/error.hpp"
#include "fedbug/experiment.hpp"
#include "fedbug/gradcheck.hpp"
#include "fedbug/schedule.hpp"
#include "fedbug/theory.hpp"

namespace py = pybind11;
using namespace fedbug;

namespace {

py::dict round_dict(const RoundMetrics& m) {
    py::dict d;
    d["round"] = m.round;
    d["sampled_clients"] = m.sampled_clients;
    d["test_accuracy"] = m.test_accuracy;
    d["test_loss"] = m.test_loss;
    d["mean_train_loss"] = m.mean_train_loss;
    d["client_drift"] = m.client_drift;
    d["wall_time_ms"] = m.wall_time_ms;
    return d;
}

ExperimentConfig config_from(const py::object& cfg) {
    if (py::isinstance<py::str>(cfg)) return parse_config_file(cfg.cast<std::string>());
    const std::string text = py::module_::import("json").attr("dumps")(cfg).cast<std::string>();
    return parse_config(nlohmann::json::parse(text));
}

theory::TheoryConfig theory_config(std::size_t seeds, std::size_t rounds, std::size_t local_iters, double lr,
                                   std::vector<std::size_t> frozen_steps, bool fedbabu) {
    theory::TheoryConfig cfg;
    cfg.n_seeds = seeds;
    cfg.rounds = rounds;
    cfg.local_iters = local_iters;
    cfg.eta_local = lr;
    cfg.frozen_steps = std::move(frozen_steps);
    cfg.include_fedbabu = fedbabu;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_fedbug, m) {
    m.doc() = "Federated learning with gradual unfreezing";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);

    m.def("unfreeze_count", &unfreeze_count, py::arg("k"), py::arg("K"), py::arg("M"), py::arg("P"));
    m.def(
        "trainable_set",
        [](const std::string& kind, double param, std::size_t k, std::size_t K, std::size_t M) {
            const TrainableMask mask = trainable_set(make_schedule(kind, param), k, K, M);
            std::vector<std::size_t> out;
            for (std::size_t i = 0; i < mask.size(); ++i) {
                if (mask[i]) out.push_back(i + 1);
            }
            return out;
        },
        py::arg("kind"), py::arg("param"), py::arg("k"), py::arg("K"), py::arg("M"),
        "One-based indices of the trainable modules at local iteration k.");

    m.def("analytic_minimizer", &theory::analytic_minimizer, py::arg("a0"), py::arg("v0"));
    m.def("contraction_ratio", &theory::contraction_ratio, py::arg("d_prev"), py::arg("d_next"),
          py::arg("threshold") = 1e-9);
    m.def("theorem1_bound", &theory::theorem1_bound, py::arg("cos2_theta"), py::arg("alpha_approx") = 0.0);
    m.def("theorem2_bound", &theory::theorem2_bound, py::arg("cos2_theta"), py::arg("alpha_approx"),
          py::arg("eta"), py::arg("v"), py::arg("frozen_steps") = 1);
    m.def("step_size_window", &theory::step_size_window, py::arg("beta1"), py::arg("beta2"), py::arg("m"));
    m.def(
        "estimate_cos2_theta",
        [](double a, double b, double v, double eta) { return theory::estimate_cos2_theta({a, b, v}, eta); },
        py::arg("a"), py::arg("b"), py::arg("v"), py::arg("eta"));
    m.def(
        "theory_round",
        [](double a, double b, double v, double eta, std::size_t local_iters, std::optional<std::size_t> frozen) {
            theory::TheoryConfig cfg;
            cfg.eta_local = eta;
            cfg.local_iters = local_iters;
            const auto [s, log] = theory::simulate_round({a, b, v}, cfg, frozen.value_or(theory::kAlwaysFrozen));
            py::dict d;
            d["a"] = s.a;
            d["b"] = s.b;
            d["v"] = s.v;
            d["d"] = log.d;
            d["r"] = log.r;
            d["cos2_theta"] = log.cos2_theta;
            return d;
        },
        py::arg("a"), py::arg("b"), py::arg("v"), py::arg("eta") = 0.1, py::arg("local_iters") = 50,
        py::arg("frozen_steps") = 0, "One server round; frozen_steps=None keeps v frozen throughout.");
    m.def(
        "theory_run",
        [](std::size_t seeds, std::size_t rounds, std::size_t local_iters, double lr,
           std::vector<std::size_t> frozen_steps, bool fedbabu) {
            const auto cfg = theory_config(seeds, rounds, local_iters, lr, std::move(frozen_steps), fedbabu);
            const auto rows = theory::run_figure2(cfg);
            std::ostringstream csv;
            theory::write_theory_csv(csv, rows);
            const auto summary = theory::summarize(rows);
            return py::make_tuple(csv.str(), theory::summary_json(summary, cfg));
        },
        py::arg("seeds") = 50, py::arg("rounds") = 80, py::arg("local_iters") = 50, py::arg("lr") = 0.1,
        py::arg("frozen_steps") = std::vector<std::size_t>{1, 5, 10}, py::arg("fedbabu") = true,
        "Returns (theory_log CSV text, summary JSON text).");

    m.def(
        "resolve_config",
        [](const py::object& cfg) { return resolved_json(config_from(cfg)).dump(); },
        py::arg("config"), "Path or dict in; resolved config JSON text out.");
    m.def(
        "fl_run",
        [](const py::object& cfg, std::size_t threads) {
            const ExperimentConfig c = config_from(cfg);
            RunOptions opts;
            opts.threads = threads;
            opts.record_timing = false;
            RunResult result;
            {
                py::gil_scoped_release release;
                result = run_experiment(c, opts);
            }
            py::list rounds;
            for (const auto& r : result.rounds) rounds.append(round_dict(r));
            std::ostringstream csv;
            write_metrics_csv(csv, c.fl, result.rounds);
            return py::make_tuple(rounds, csv.str());
        },
        py::arg("config"), py::arg("threads") = 1, "Returns (list of per-round dicts, metrics CSV text).");
    m.def(
        "partition_counts",
        [](const py::object& cfg) {
            const ExperimentConfig c = config_from(cfg);
            const TrainTest data = load_data(c);
            const auto shards = partition(data.train, c.partition);
            return class_counts(data.train, shards);
        },
        py::arg("config"), "Per-client class-count matrix of the training split.");
    m.def(
        "grad_check",
        [](std::size_t cases, std::uint64_t seed) {
            const GradCheckReport r = run_gradcheck(cases, seed);
            py::dict d;
            for (const auto& c : r.cases) d[py::str(c.name)] = c.max_rel_error;
            return py::make_tuple(r.max_rel_error, d);
        },
        py::arg("cases") = 100, py::arg("seed") = 0);
    m.def("git_blob_sha1", &git_blob_sha1, py::arg("content"));
}
