#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedbug/config.hpp"
#include "fedbug/error.hpp"
#include "fedbug/experiment.hpp"
#include "fedbug/gradcheck.hpp"
#include "fedbug/sweep.hpp"

using namespace fedbug;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json minimal() {
    return json::parse(R"({
      "dataset": {"kind": "blobs", "n_per_class": 20, "num_classes": 3, "dim": 4, "spread": 0.5},
      "partition": {"mode": "dirichlet", "alpha": 0.5, "n_clients": 4},
      "model": {"modules": [
        {"name": "body", "layers": [{"type": "dense", "in": 4, "out": 6}, {"type": "relu"}]},
        {"name": "head", "layers": [{"type": "dense", "in": 6, "out": 3}]}
      ]},
      "fl": {"rounds": 3, "batch_size": 8, "participation_rate": 0.5, "seed": 2}
    })");
}

std::string error_of(const json& doc) {
    try {
        parse_config(doc);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST(ConfigParse, DefaultsAreFilled) {
    const ExperimentConfig cfg = parse_config(minimal());
    EXPECT_EQ(cfg.fl.eta_g, 1.0);
    EXPECT_EQ(cfg.fl.weight_decay, 0.001);
    EXPECT_EQ(cfg.partition.seed, 2u);
    const json resolved = resolved_json(cfg);
    EXPECT_EQ(resolved["fl"]["eta_g"], 1.0);
    EXPECT_EQ(resolved["fl"]["weight_decay"], 0.001);
    EXPECT_EQ(resolved["fl"]["schedule"]["kind"], "vanilla");
    const ExperimentConfig again = parse_config(resolved);
    EXPECT_EQ(resolved_json(again), resolved);
}

TEST(ConfigParse, RangeErrorsNameTheField) {
    json doc = minimal();
    doc["fl"]["schedule"] = {{"kind", "fedbug"}, {"P", 1.3}};
    EXPECT_NE(error_of(doc).find("schedule.P"), std::string::npos);
    doc = minimal();
    doc["fl"]["rounds"] = 0;
    EXPECT_NE(error_of(doc).find("fl.rounds"), std::string::npos);
    doc = minimal();
    doc["partition"]["alpha"] = -1;
    EXPECT_NE(error_of(doc).find("partition.alpha"), std::string::npos);
    doc = minimal();
    doc["fl"]["schedule"] = {{"kind", "fixlast"}, {"k_fix", 2}};
    EXPECT_NE(error_of(doc).find("k_fix"), std::string::npos);
    doc = minimal();
    doc["fl"]["eta_l"] = "fast";
    EXPECT_NE(error_of(doc).find("fl.eta_l"), std::string::npos);
}

TEST(ConfigParse, UnknownKeysSuggest) {
    json doc = minimal();
    doc["fl"]["lr"] = 0.1;
    const std::string msg = error_of(doc);
    EXPECT_NE(msg.find("fl.lr"), std::string::npos) << msg;
    EXPECT_NE(msg.find("fl.eta_l"), std::string::npos) << msg;
    doc = minimal();
    doc["lr"] = 0.1;
    doc["partition"]["n_client"] = 3;
    const std::string both = error_of(doc);
    EXPECT_NE(both.find("fl.eta_l"), std::string::npos) << both;
    EXPECT_NE(both.find("partition.n_clients"), std::string::npos) << both;
}

TEST(ConfigParse, ModelChainIsChecked) {
    json doc = minimal();
    doc["model"]["modules"][1]["layers"][0]["in"] = 5;
    EXPECT_FALSE(error_of(doc).empty());
    doc = minimal();
    doc["model"]["modules"][0]["layers"][0]["in"] = 7;
    const ExperimentConfig cfg = parse_config(doc);
    EXPECT_THROW(run_experiment(cfg), ConfigError);
}

TEST(ConfigParse, FileErrors) {
    EXPECT_THROW(parse_config_file("/nonexistent/config.json"), ConfigError);
    const auto path = fs::temp_directory_path() / "fedbug_bad.json";
    std::ofstream(path) << "{not json";
    EXPECT_THROW(parse_config_file(path.string()), ConfigError);
}

TEST(Experiment, GitBlobHash) {
    // git hash-object of an empty file and of "hello\n".
    EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Experiment, RunDirectoryIsReproducible) {
    const ExperimentConfig cfg = parse_config(minimal());
    const auto a = fresh_dir("fedbug_run_a"), b = fresh_dir("fedbug_run_b");
    RunOptions opts;
    opts.record_timing = false;
    write_run_directory(a, cfg, run_experiment(cfg, opts).rounds);
    opts.threads = 3;
    write_run_directory(b, cfg, run_experiment(cfg, opts).rounds);
    for (const char* f : {"metrics.csv", "resolved_config.json", "inputs.sha1"}) {
        std::ifstream fa(a / f), fb(b / f);
        std::stringstream sa, sb;
        sa << fa.rdbuf();
        sb << fb.rdbuf();
        EXPECT_FALSE(sa.str().empty());
        EXPECT_EQ(sa.str(), sb.str()) << f;
    }
}

TEST(Sweep, EmptyAxisIsConfigError) {
    SweepSpec spec;
    spec.base = minimal();
    spec.axis = "alpha";
    EXPECT_THROW(spec.validate(), ConfigError);
    spec.values = {0.3};
    spec.axis = "temperature";
    EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Sweep, GuAxisWithSeedsAndFailureRow) {
    SweepSpec spec;
    spec.base = minimal();
    spec.axis = "gu_percentage";
    spec.values = {0.0, 0.5};
    spec.seeds = {1, 2};
    EXPECT_EQ(cell_config(spec, 0.5, 2)["fl"]["schedule"]["P"], 0.5);
    EXPECT_EQ(cell_config(spec, 0.5, 2)["fl"]["seed"], 2);

    const auto out = fresh_dir("fedbug_sweep");
    const SweepResult r = run_sweep(spec, out, 2);
    ASSERT_EQ(r.summary.size(), 2u);
    for (const auto& row : r.summary) {
        EXPECT_EQ(row.n_runs, 2u);
        EXPECT_EQ(row.status, "ok");
    }
    double sum = 0;
    for (const auto& c : r.cells) {
        if (c.axis_value == r.summary[1].axis_value) sum += c.final_accuracy;
    }
    EXPECT_DOUBLE_EQ(r.summary[1].mean_final_accuracy, sum / 2);
    EXPECT_TRUE(fs::exists(out / "sweep_summary.csv"));
    EXPECT_TRUE(fs::exists(out / r.cells[0].dir / "metrics.csv"));

    // A bad value fails its own cells but not the sweep.
    spec.axis = "participation_rate";
    spec.values = {0.5, 2.0};
    const SweepResult bad = run_sweep(spec, fresh_dir("fedbug_sweep_bad"), 1);
    EXPECT_EQ(bad.summary[0].status, "ok");
    EXPECT_EQ(bad.summary[1].n_ok, 0u);
    EXPECT_NE(bad.summary[1].status.find("participation_rate"), std::string::npos);
}

TEST(GradCheck, LibrarySuitePasses) {
    const GradCheckReport r = run_gradcheck(20, 3);
    EXPECT_EQ(r.cases.size(), 5u);
    EXPECT_LT(r.max_rel_error, 1e-5);
}
