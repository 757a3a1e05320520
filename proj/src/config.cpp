#include "fedbug/config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "fedbug/error.hpp"

namespace fedbug {

namespace {

using nlohmann::json;

const std::vector<std::string>& known_paths() {
    static const std::vector<std::string> paths{
        "dataset.kind", "dataset.n_per_class", "dataset.num_classes", "dataset.dim",
        "dataset.spread", "dataset.seed", "dataset.train_path", "dataset.test_path",
        "partition.mode", "partition.alpha", "partition.n_clients",
        "model.modules", "model.modules[].name", "model.modules[].layers",
        "model.modules[].layers[].type", "model.modules[].layers[].in",
        "model.modules[].layers[].out", "model.modules[].layers[].bias",
        "fl.rounds", "fl.local_epochs", "fl.batch_size", "fl.eta_l", "fl.eta_g",
        "fl.weight_decay", "fl.participation_rate", "fl.algo", "fl.mu", "fl.schedule",
        "fl.seed", "fl.schedule.kind", "fl.schedule.P", "fl.schedule.k_fix",
    };
    return paths;
}

const std::map<std::string, std::string>& aliases() {
    static const std::map<std::string, std::string> table{
        {"lr", "fl.eta_l"},
        {"learning_rate", "fl.eta_l"},
        {"local_lr", "fl.eta_l"},
        {"global_lr", "fl.eta_g"},
        {"server_lr", "fl.eta_g"},
        {"epochs", "fl.local_epochs"},
        {"wd", "fl.weight_decay"},
        {"batch", "fl.batch_size"},
        {"clients", "partition.n_clients"},
        {"num_clients", "partition.n_clients"},
        {"participation", "fl.participation_rate"},
        {"gu_percentage", "fl.schedule.P"},
        {"p", "fl.schedule.P"},
    };
    return table;
}

std::size_t edit_distance(const std::string& x, const std::string& y) {
    std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
    for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= x.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= y.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[y.size()];
}

std::string suggest(const std::string& key) {
    std::string lower = key;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (auto it = aliases().find(lower); it != aliases().end()) return it->second;
    std::string best;
    std::size_t best_d = 3;
    for (const auto& p : known_paths()) {
        const std::string leaf = p.substr(p.find_last_of('.') + 1);
        const std::size_t d = edit_distance(lower, leaf);
        if (d < best_d) {
            best_d = d;
            best = p;
        }
    }
    return best;
}

// Reads one JSON object, remembering which keys were consumed.
class Reader {
public:
    Reader(const json& obj, std::string path, std::vector<std::string>& unknown)
        : obj_(obj), path_(std::move(path)), unknown_(unknown) {
        if (!obj_.is_object()) throw ConfigError(where() + " must be an object");
    }

    bool has(const char* key) const { return obj_.contains(key); }

    const json* raw(const char* key) {
        used_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    double number(const char* key, double def) {
        const json* v = raw(key);
        if (!v) return def;
        if (!v->is_number()) throw ConfigError(field(key) + " must be a number");
        return v->get<double>();
    }

    std::uint64_t integer(const char* key, std::uint64_t def, std::uint64_t min = 0) {
        const json* v = raw(key);
        if (!v) return def;
        if (v->is_number_unsigned()) {
            const auto x = v->get<std::uint64_t>();
            if (x < min) throw ConfigError(field(key) + " must be >= " + std::to_string(min));
            return x;
        }
        if (v->is_number_integer() || (v->is_number_float() && std::floor(v->get<double>()) == v->get<double>())) {
            const double x = v->get<double>();
            if (x < static_cast<double>(min)) {
                throw ConfigError(field(key) + " must be >= " + std::to_string(min));
            }
            return static_cast<std::uint64_t>(x);
        }
        throw ConfigError(field(key) + " must be a non-negative integer");
    }

    std::string string(const char* key, const std::string& def) {
        const json* v = raw(key);
        if (!v) return def;
        if (!v->is_string()) throw ConfigError(field(key) + " must be a string");
        return v->get<std::string>();
    }

    bool boolean(const char* key, bool def) {
        const json* v = raw(key);
        if (!v) return def;
        if (!v->is_boolean()) throw ConfigError(field(key) + " must be true or false");
        return v->get<bool>();
    }

    void finish() {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!used_.count(it.key())) unknown_.push_back(field(it.key().c_str()));
        }
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    const json& obj_;
    std::string path_;
    std::vector<std::string>& unknown_;
    std::set<std::string> used_;
};

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

DatasetConfig read_dataset(Reader& r, const std::string& base_dir, std::vector<std::string>& unknown) {
    DatasetConfig d;
    const json* node = r.raw("dataset");
    if (!node) return d;
    Reader in(*node, "dataset", unknown);
    d.kind = lowercase(in.string("kind", d.kind));
    if (d.kind != "blobs" && d.kind != "csv") throw ConfigError("dataset.kind must be 'blobs' or 'csv'");
    d.n_per_class = in.integer("n_per_class", d.n_per_class, 2);
    d.num_classes = static_cast<int>(in.integer("num_classes", static_cast<std::uint64_t>(d.num_classes),
                                                d.kind == "csv" ? 0 : 1));
    d.dim = in.integer("dim", d.dim, 1);
    d.spread = in.number("spread", d.spread);
    if (!(d.spread > 0.0)) throw ConfigError("dataset.spread must be > 0");
    d.seed = in.integer("seed", d.seed);
    d.train_path = in.string("train_path", "");
    d.test_path = in.string("test_path", "");
    if (d.kind == "csv") {
        if (d.train_path.empty()) throw ConfigError("dataset.train_path is required for csv datasets");
        if (d.test_path.empty()) throw ConfigError("dataset.test_path is required for csv datasets");
        namespace fs = std::filesystem;
        auto resolve = [&](const std::string& p) {
            return fs::path(p).is_absolute() ? p : (fs::path(base_dir) / p).lexically_normal().string();
        };
        d.train_path = resolve(d.train_path);
        d.test_path = resolve(d.test_path);
    }
    in.finish();
    return d;
}

PartitionSpec read_partition(Reader& r, std::vector<std::string>& unknown) {
    PartitionSpec p;
    p.n_clients = 20;
    p.mode = PartitionMode::kDirichlet;
    const json* node = r.raw("partition");
    if (!node) return p;
    Reader in(*node, "partition", unknown);
    const std::string mode = lowercase(in.string("mode", "dirichlet"));
    if (mode == "iid") {
        p.mode = PartitionMode::kIID;
    } else if (mode == "dirichlet") {
        p.mode = PartitionMode::kDirichlet;
    } else {
        throw ConfigError("partition.mode must be 'iid' or 'dirichlet'");
    }
    p.alpha = in.number("alpha", p.alpha);
    if (!(p.alpha > 0.0) || !std::isfinite(p.alpha)) throw ConfigError("partition.alpha must be > 0");
    p.n_clients = in.integer("n_clients", p.n_clients, 1);
    in.finish();
    return p;
}

std::vector<ModuleDesc> read_model(Reader& r, std::vector<std::string>& unknown) {
    const json* node = r.raw("model");
    if (!node) throw ConfigError("model is required");
    Reader in(*node, "model", unknown);
    const json* modules = in.raw("modules");
    if (!modules || !modules->is_array() || modules->empty()) {
        throw ConfigError("model.modules must be a non-empty list");
    }
    std::vector<ModuleDesc> out;
    for (std::size_t m = 0; m < modules->size(); ++m) {
        const std::string mpath = "model.modules[" + std::to_string(m) + "]";
        Reader mod((*modules)[m], mpath, unknown);
        ModuleDesc desc;
        desc.name = mod.string("name", "module" + std::to_string(m + 1));
        const json* layers = mod.raw("layers");
        if (!layers || !layers->is_array() || layers->empty()) {
            throw ConfigError(mpath + ".layers must be a non-empty list");
        }
        for (std::size_t l = 0; l < layers->size(); ++l) {
            Reader layer((*layers)[l], mpath + ".layers[" + std::to_string(l) + "]", unknown);
            const std::string type = lowercase(layer.string("type", ""));
            if (type == "dense") {
                const auto in_dim = layer.integer("in", 0, 1);
                const auto out_dim = layer.integer("out", 0, 1);
                if (in_dim == 0) throw ConfigError(layer.field("in") + " is required");
                if (out_dim == 0) throw ConfigError(layer.field("out") + " is required");
                desc.layers.push_back(LayerDesc::dense(in_dim, out_dim, layer.boolean("bias", true)));
            } else if (type == "relu") {
                desc.layers.push_back(LayerDesc::relu());
            } else {
                throw ConfigError(layer.field("type") + " must be 'dense' or 'relu'");
            }
            layer.finish();
        }
        mod.finish();
        out.push_back(std::move(desc));
    }
    in.finish();
    return out;
}

UnfreezeSchedule read_schedule(Reader& fl, std::vector<std::string>& unknown) {
    const json* node = fl.raw("schedule");
    if (!node) return Vanilla{};
    if (node->is_string()) {
        const std::string kind = lowercase(node->get<std::string>());
        if (kind != "vanilla") throw ConfigError("fl.schedule needs an object with kind and P or k_fix");
        return Vanilla{};
    }
    Reader in(*node, "fl.schedule", unknown);
    const std::string kind = lowercase(in.string("kind", "vanilla"));
    UnfreezeSchedule schedule;
    if (kind == "vanilla" || kind == "fedavg") {
        schedule = Vanilla{};
    } else if (kind == "fedbug" || kind == "bottomup" || kind == "topdown") {
        const double P = in.number("P", 0.0);
        if (!(P >= 0.0 && P <= 1.0)) {
            throw ConfigError("fl.schedule.P must lie in [0, 1], got " + nlohmann::json(P).dump());
        }
        schedule = kind == "topdown" ? UnfreezeSchedule{TopDownGU{P}} : UnfreezeSchedule{BottomUpGU{P}};
    } else if (kind == "fixlast") {
        schedule = FixLastK{static_cast<std::size_t>(in.integer("k_fix", 1, 1))};
    } else {
        throw ConfigError("fl.schedule.kind must be one of vanilla, fedbug, topdown, fixlast; got '" + kind + "'");
    }
    in.finish();
    return schedule;
}

FLConfig read_fl(Reader& r, std::vector<std::string>& unknown) {
    FLConfig c;
    const json* node = r.raw("fl");
    if (!node) return c;
    Reader in(*node, "fl", unknown);
    c.rounds = in.integer("rounds", c.rounds);
    c.local_epochs = in.integer("local_epochs", c.local_epochs);
    c.batch_size = in.integer("batch_size", c.batch_size);
    c.eta_l = in.number("eta_l", c.eta_l);
    c.eta_g = in.number("eta_g", c.eta_g);
    c.weight_decay = in.number("weight_decay", c.weight_decay);
    c.participation_rate = in.number("participation_rate", c.participation_rate);
    const std::string algo = lowercase(in.string("algo", "fedavg"));
    if (algo == "fedavg") {
        c.algo = Algo::kFedAvg;
    } else if (algo == "fedprox") {
        c.algo = Algo::kFedProx;
    } else {
        throw ConfigError("fl.algo must be 'fedavg' or 'fedprox'");
    }
    c.mu = in.number("mu", c.mu);
    c.schedule = read_schedule(in, unknown);
    c.seed = in.integer("seed", c.seed);
    in.finish();
    c.validate();
    return c;
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& doc, const std::string& base_dir) {
    std::vector<std::string> unknown;
    Reader root(doc, "", unknown);
    ExperimentConfig cfg;
    cfg.dataset = read_dataset(root, base_dir, unknown);
    cfg.partition = read_partition(root, unknown);
    cfg.modules = read_model(root, unknown);
    cfg.fl = read_fl(root, unknown);
    cfg.partition.seed = cfg.fl.seed;
    root.finish();

    if (!unknown.empty()) {
        std::string msg = "unknown config key";
        msg += unknown.size() > 1 ? "s: " : ": ";
        for (std::size_t i = 0; i < unknown.size(); ++i) {
            if (i) msg += ", ";
            msg += unknown[i];
            const std::string leaf = unknown[i].substr(unknown[i].find_last_of('.') + 1);
            if (const std::string s = suggest(leaf); !s.empty()) msg += " (did you mean " + s + "?)";
        }
        throw ConfigError(msg);
    }

    // Builds the model once so a broken layer chain fails at parse time.
    try {
        (void)init_model(cfg.modules, 0);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    if (const auto* s = std::get_if<FixLastK>(&cfg.fl.schedule); s && s->k_fix >= cfg.modules.size()) {
        throw ConfigError("fl.schedule.k_fix must be smaller than the number of modules (" +
                          std::to_string(cfg.modules.size()) + ")");
    }
    if (cfg.dataset.kind == "blobs") {
        const std::size_t n_train =
            (cfg.dataset.n_per_class - std::max<std::size_t>(1, cfg.dataset.n_per_class / 5)) *
            static_cast<std::size_t>(cfg.dataset.num_classes);
        if (n_train < cfg.partition.n_clients) {
            throw ConfigError("partition.n_clients (" + std::to_string(cfg.partition.n_clients) +
                              ") exceeds the number of training samples (" + std::to_string(n_train) + ")");
        }
    }
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    const auto dir = std::filesystem::path(path).parent_path();
    return parse_config(doc, dir.empty() ? "." : dir.string());
}

nlohmann::json resolved_json(const ExperimentConfig& cfg) {
    json j;
    const auto& d = cfg.dataset;
    if (d.kind == "blobs") {
        j["dataset"] = {{"kind", "blobs"}, {"n_per_class", d.n_per_class}, {"num_classes", d.num_classes},
                        {"dim", d.dim},    {"spread", d.spread},           {"seed", d.seed}};
    } else {
        j["dataset"] = {{"kind", "csv"},
                        {"train_path", d.train_path},
                        {"test_path", d.test_path},
                        {"num_classes", d.num_classes}};
    }
    j["partition"] = {{"mode", cfg.partition.mode == PartitionMode::kIID ? "iid" : "dirichlet"},
                      {"alpha", cfg.partition.alpha},
                      {"n_clients", cfg.partition.n_clients}};
    json modules = json::array();
    for (const auto& m : cfg.modules) {
        json layers = json::array();
        for (const auto& l : m.layers) {
            if (l.kind == LayerKind::kDense) {
                layers.push_back({{"type", "dense"}, {"in", l.in_dim}, {"out", l.out_dim}, {"bias", l.has_bias}});
            } else {
                layers.push_back({{"type", "relu"}});
            }
        }
        modules.push_back({{"name", m.name}, {"layers", layers}});
    }
    j["model"] = {{"modules", modules}};

    const auto& f = cfg.fl;
    json schedule = {{"kind", schedule_kind(f.schedule)}};
    if (std::holds_alternative<BottomUpGU>(f.schedule) || std::holds_alternative<TopDownGU>(f.schedule)) {
        schedule["P"] = schedule_parameter(f.schedule);
    } else if (const auto* s = std::get_if<FixLastK>(&f.schedule)) {
        schedule["k_fix"] = s->k_fix;
    }
    j["fl"] = {{"rounds", f.rounds},
               {"local_epochs", f.local_epochs},
               {"batch_size", f.batch_size},
               {"eta_l", f.eta_l},
               {"eta_g", f.eta_g},
               {"weight_decay", f.weight_decay},
               {"participation_rate", f.participation_rate},
               {"algo", to_string(f.algo)},
               {"mu", f.mu},
               {"schedule", schedule},
               {"seed", f.seed}};
    return j;
}

TrainTest load_data(const ExperimentConfig& cfg) {
    const auto& d = cfg.dataset;
    TrainTest data;
    if (d.kind == "blobs") {
        data = make_blobs(d.n_per_class, d.num_classes, d.dim, d.spread, d.seed);
    } else {
        data.train = load_csv(d.train_path, d.num_classes);
        data.test = load_csv(d.test_path, d.num_classes == 0 ? data.train.num_classes : d.num_classes);
        const int classes = std::max(data.train.num_classes, data.test.num_classes);
        data.train.num_classes = data.test.num_classes = classes;
        if (data.train.dim() != data.test.dim()) {
            throw DataError("train and test feature dimensions differ (" + std::to_string(data.train.dim()) +
                            " vs " + std::to_string(data.test.dim()) + ")");
        }
    }
    data.train.validate();
    data.test.validate();
    return data;
}

void check_model_fits(const ExperimentConfig& cfg, const LabeledDataset& train) {
    const ModularModel probe = init_model(cfg.modules, 0);
    if (probe.input_dim() != train.dim()) {
        throw ConfigError("model input dimension " + std::to_string(probe.input_dim()) +
                          " does not match the dataset dimension " + std::to_string(train.dim()));
    }
    if (probe.output_dim() != static_cast<std::size_t>(train.num_classes)) {
        throw ConfigError("model output dimension " + std::to_string(probe.output_dim()) +
                          " does not match the class count " + std::to_string(train.num_classes));
    }
}

}  // namespace fedbug
