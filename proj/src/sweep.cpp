#include "fedbug/sweep.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "fedbug/config.hpp"
#include "fedbug/error.hpp"
#include "fedbug/experiment.hpp"
#include "fedbug/parallel.hpp"

namespace fedbug {

namespace {

using nlohmann::json;

const std::vector<std::string> kAxes{"gu_percentage", "schedule", "alpha", "participation_rate", "seed"};

std::string slug(const json& value) {
    std::string s = value.is_string() ? value.get<std::string>() : value.dump();
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') {
            out += c;
        } else if (!out.empty() && out.back() != '_') {
            out += '_';
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out.empty() ? "value" : out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void SweepSpec::validate() const {
    if (std::find(kAxes.begin(), kAxes.end(), axis) == kAxes.end()) {
        throw ConfigError("sweep.axis must be one of gu_percentage, schedule, alpha, participation_rate, seed; got '" +
                          axis + "'");
    }
    if (values.empty()) throw ConfigError("sweep.axis." + axis + " must not be empty");
    for (const auto& v : values) {
        if (axis == "gu_percentage" || axis == "alpha" || axis == "participation_rate") {
            if (!v.is_number()) throw ConfigError("sweep.axis." + axis + " values must be numbers");
        }
        if (axis == "gu_percentage" && !(v.get<double>() >= 0.0 && v.get<double>() <= 1.0)) {
            throw ConfigError("sweep.axis.gu_percentage values must lie in [0, 1]");
        }
        if (axis == "seed" && !v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
            throw ConfigError("sweep.axis.seed values must be non-negative integers");
        }
        if (axis == "schedule" && !v.is_object() && !v.is_string()) {
            throw ConfigError("sweep.axis.schedule values must be schedule objects or names");
        }
    }
    if (axis == "seed" && !seeds.empty()) throw ConfigError("sweep.seeds cannot be combined with a seed axis");
}

SweepSpec parse_sweep_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open sweep file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("sweep '" + path + "' is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("sweep file must hold an object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (it.key() != "base" && it.key() != "axis" && it.key() != "seeds") {
            throw ConfigError("unknown sweep key: " + it.key());
        }
    }
    const auto dir = std::filesystem::path(path).parent_path();
    SweepSpec spec;
    spec.base_dir = dir.empty() ? "." : dir.string();
    if (!doc.contains("base")) throw ConfigError("sweep.base is required");
    if (doc["base"].is_string()) {
        std::filesystem::path base = doc["base"].get<std::string>();
        if (base.is_relative()) base = std::filesystem::path(spec.base_dir) / base;
        std::ifstream bin(base);
        if (!bin) throw ConfigError("cannot open base config '" + base.string() + "'");
        try {
            spec.base = json::parse(bin);
        } catch (const json::parse_error& e) {
            throw ConfigError("base config is not valid JSON: " + std::string(e.what()));
        }
        spec.base_dir = base.parent_path().empty() ? "." : base.parent_path().string();
    } else {
        spec.base = doc["base"];
    }
    if (!doc.contains("axis") || !doc["axis"].is_object() || doc["axis"].size() != 1) {
        throw ConfigError("sweep.axis must be an object with exactly one axis");
    }
    spec.axis = doc["axis"].begin().key();
    const json& values = doc["axis"].begin().value();
    if (!values.is_array()) throw ConfigError("sweep.axis." + spec.axis + " must be a list");
    spec.values.assign(values.begin(), values.end());
    if (doc.contains("seeds")) {
        if (!doc["seeds"].is_array()) throw ConfigError("sweep.seeds must be a list");
        for (const auto& s : doc["seeds"]) {
            if (!s.is_number_unsigned()) throw ConfigError("sweep.seeds must hold non-negative integers");
            spec.seeds.push_back(s.get<std::uint64_t>());
        }
        if (spec.seeds.empty()) throw ConfigError("sweep.seeds must not be empty");
    }
    spec.validate();
    return spec;
}

json cell_config(const SweepSpec& spec, const json& value, std::uint64_t seed) {
    json cfg = spec.base;
    if (spec.axis == "gu_percentage") {
        cfg["fl"]["schedule"] = {{"kind", "fedbug"}, {"P", value}};
    } else if (spec.axis == "schedule") {
        cfg["fl"]["schedule"] = value.is_string() ? json{{"kind", value}} : value;
    } else if (spec.axis == "alpha") {
        cfg["partition"]["alpha"] = value;
    } else if (spec.axis == "participation_rate") {
        cfg["fl"]["participation_rate"] = value;
    }
    if (spec.axis == "seed") {
        cfg["fl"]["seed"] = value;
    } else if (!spec.seeds.empty()) {
        cfg["fl"]["seed"] = seed;
    }
    return cfg;
}

SweepResult run_sweep(const SweepSpec& spec, const std::filesystem::path& out_dir, std::size_t threads) {
    spec.validate();
    struct Job {
        std::size_t value_index;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t v = 0; v < spec.values.size(); ++v) {
        if (spec.axis == "seed") {
            jobs.push_back({v, spec.values[v].get<std::uint64_t>()});
        } else if (spec.seeds.empty()) {
            jobs.push_back({v, spec.base.value("fl", json::object()).value("seed", std::uint64_t{0})});
        } else {
            for (auto s : spec.seeds) jobs.push_back({v, s});
        }
    }

    std::filesystem::create_directories(out_dir);
    SweepResult result;
    result.cells.resize(jobs.size());
    parallel_for(jobs.size(), resolve_threads(threads), [&](std::size_t i) {
        const auto& job = jobs[i];
        const json& value = spec.values[job.value_index];
        SweepCell& cell = result.cells[i];
        cell.axis_value = value.dump();
        cell.seed = job.seed;
        cell.dir = spec.axis + "=" + slug(value) + "/seed=" + std::to_string(job.seed);
        try {
            const ExperimentConfig cfg = parse_config(cell_config(spec, value, job.seed), spec.base_dir);
            RunOptions options;
            options.record_timing = false;
            const RunResult run = run_experiment(cfg, options);
            write_run_directory(out_dir / cell.dir, cfg, run.rounds);
            cell.final_accuracy = run.rounds.back().test_accuracy;
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    });

    for (std::size_t v = 0; v < spec.values.size(); ++v) {
        SweepSummaryRow row;
        row.axis_value = spec.values[v].dump();
        std::vector<double> acc;
        std::string first_error;
        for (const auto& cell : result.cells) {
            if (cell.axis_value != row.axis_value) continue;
            ++row.n_runs;
            if (cell.ok) {
                acc.push_back(cell.final_accuracy);
            } else if (first_error.empty()) {
                first_error = cell.error;
            }
        }
        row.n_ok = acc.size();
        if (!acc.empty()) {
            double sum = 0.0;
            for (double a : acc) sum += a;
            row.mean_final_accuracy = sum / static_cast<double>(acc.size());
            if (acc.size() > 1) {
                double ss = 0.0;
                for (double a : acc) ss += (a - row.mean_final_accuracy) * (a - row.mean_final_accuracy);
                row.std_final_accuracy = std::sqrt(ss / static_cast<double>(acc.size() - 1));
            }
        }
        if (row.n_ok == row.n_runs) {
            row.status = "ok";
        } else {
            row.status = "failed " + std::to_string(row.n_runs - row.n_ok) + "/" + std::to_string(row.n_runs) +
                         ": " + first_error;
        }
        result.summary.push_back(std::move(row));
    }

    std::ofstream runs(out_dir / "sweep_runs.csv");
    runs << spec.axis << ",seed,dir,status,final_accuracy\n";
    for (const auto& c : result.cells) {
        runs << csv_field(c.axis_value) << ',' << c.seed << ',' << c.dir << ','
             << csv_field(c.ok ? "ok" : "failed: " + c.error) << ',' << (c.ok ? num(c.final_accuracy) : "") << '\n';
    }
    std::ofstream summary(out_dir / "sweep_summary.csv");
    summary << spec.axis << ",n_runs,n_ok,mean_final_accuracy,std_final_accuracy,status\n";
    for (const auto& r : result.summary) {
        summary << csv_field(r.axis_value) << ',' << r.n_runs << ',' << r.n_ok << ','
                << (r.n_ok ? num(r.mean_final_accuracy) : "") << ',' << (r.n_ok ? num(r.std_final_accuracy) : "")
                << ',' << csv_field(r.status) << '\n';
    }
    if (!runs || !summary) throw ConfigError("cannot write sweep outputs to '" + out_dir.string() + "'");
    return result;
}

}  // namespace fedbug
