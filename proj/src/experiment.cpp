#include "fedbug/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "fedbug/error.hpp"

namespace fedbug {

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
    const TrainTest data = load_data(cfg);
    check_model_fits(cfg, data.train);
    return run(cfg.fl, cfg.modules, data.train, data.test, cfg.partition, options);
}

std::string git_blob_sha1(const std::string& content) {
    std::string blob = "blob " + std::to_string(content.size());
    blob.push_back('\0');
    blob += content;
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
        throw Error(ExitCode::kData, "SHA-1 digest failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        const unsigned char b = digest[i];
        std::snprintf(buf, sizeof(buf), "%02x", b);
        hex += buf;
    }
    return hex;
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << content;
}

}  // namespace

std::string write_run_directory(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                                const std::vector<RoundMetrics>& rounds) {
    std::filesystem::create_directories(dir);
    const std::string resolved = resolved_json(cfg).dump(2) + "\n";
    write_file(dir / "resolved_config.json", resolved);

    std::ostringstream metrics;
    write_metrics_csv(metrics, cfg.fl, rounds);
    write_file(dir / "metrics.csv", metrics.str());

    const std::string config_id = git_blob_sha1(resolved);
    std::string inputs = config_id + "  resolved_config.json\n";
    if (cfg.dataset.kind == "csv") {
        inputs += git_blob_sha1(read_file(cfg.dataset.train_path)) + "  " + cfg.dataset.train_path + "\n";
        inputs += git_blob_sha1(read_file(cfg.dataset.test_path)) + "  " + cfg.dataset.test_path + "\n";
    }
    write_file(dir / "inputs.sha1", inputs);
    return config_id;
}

}  // namespace fedbug
