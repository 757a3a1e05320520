#include "fedbug/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "fedbug/error.hpp"

namespace fedbug {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// ParamTree

std::size_t ParamTree::num_values() const {
    std::size_t n = 0;
    for (const auto& m : modules)
        for (const auto& l : m)
            for (const auto& t : l) n += t.size();
    return n;
}

double ParamTree::squared_norm() const {
    double s = 0.0;
    for (const auto& m : modules)
        for (const auto& l : m)
            for (const auto& t : l)
                for (double v : t.values()) s += v * v;
    return s;
}

bool ParamTree::all_finite() const {
    for (const auto& m : modules)
        for (const auto& l : m)
            for (const auto& t : l)
                if (!t.all_finite()) return false;
    return true;
}

bool ParamTree::bit_equal(const ParamTree& other) const {
    if (modules.size() != other.modules.size()) return false;
    for (std::size_t m = 0; m < modules.size(); ++m) {
        if (modules[m].size() != other.modules[m].size()) return false;
        for (std::size_t l = 0; l < modules[m].size(); ++l) {
            if (modules[m][l].size() != other.modules[m][l].size()) return false;
            for (std::size_t p = 0; p < modules[m][l].size(); ++p) {
                if (!modules[m][l][p].bit_equal(other.modules[m][l][p])) return false;
            }
        }
    }
    return true;
}

bool ParamTree::module_is_zero(std::size_t index) const {
    for (const auto& l : modules.at(index))
        for (const auto& t : l)
            for (double v : t.values())
                if (std::bit_cast<std::uint64_t>(v) != 0) return false;
    return true;
}

double l2_distance(const ParamTree& x, const ParamTree& y) {
    if (x.modules.size() != y.modules.size()) throw ConfigError("l2_distance: module count mismatch");
    double s = 0.0;
    for (std::size_t m = 0; m < x.modules.size(); ++m) {
        for (std::size_t l = 0; l < x.modules[m].size(); ++l) {
            for (std::size_t p = 0; p < x.modules[m][l].size(); ++p) {
                const auto& a = x.modules[m][l][p];
                const auto& b = y.modules.at(m).at(l).at(p);
                if (!a.same_shape(b)) throw ConfigError("l2_distance: shape mismatch");
                for (std::size_t i = 0; i < a.size(); ++i) {
                    const double d = a[i] - b[i];
                    s += d * d;
                }
            }
        }
    }
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// ModularModel

ModularModel::ModularModel(std::vector<Module> modules) : modules_(std::move(modules)) {
    if (modules_.empty()) throw ConfigError("model must have at least one module");
    std::size_t width = 0;  // 0 until the first dense layer fixes it
    for (std::size_t m = 0; m < modules_.size(); ++m) {
        if (modules_[m].layers.empty()) {
            throw ConfigError("module " + std::to_string(m) + " ('" + modules_[m].name +
                              "') has no layers");
        }
        for (std::size_t l = 0; l < modules_[m].layers.size(); ++l) {
            const Layer& layer = modules_[m].layers[l];
            if (layer.kind != LayerKind::kDense) continue;
            if (width == 0) {
                input_dim_ = layer.in_dim;
            } else if (layer.in_dim != width) {
                throw ConfigError("module " + std::to_string(m) + " layer " + std::to_string(l) +
                                  ": dense in_dim " + std::to_string(layer.in_dim) +
                                  " does not match incoming width " + std::to_string(width));
            }
            const std::size_t expected = layer.has_bias ? 2 : 1;
            if (layer.params.size() != expected ||
                layer.weight().shape() != std::vector<std::size_t>{layer.out_dim, layer.in_dim} ||
                (layer.has_bias && layer.params[1].shape() != std::vector<std::size_t>{layer.out_dim})) {
                throw ConfigError("module " + std::to_string(m) + " layer " + std::to_string(l) +
                                  ": parameter shapes do not match dense dimensions");
            }
            width = layer.out_dim;
        }
    }
    if (width == 0) throw ConfigError("model must contain at least one dense layer");
    output_dim_ = width;
    trainable_.assign(modules_.size(), true);
}

std::size_t ModularModel::num_params() const { return parameters().num_values(); }

void ModularModel::set_trainable_prefix(std::size_t m) {
    if (m > modules_.size()) {
        throw ConfigError("trainable prefix " + std::to_string(m) + " exceeds module count " +
                          std::to_string(modules_.size()));
    }
    for (std::size_t i = 0; i < modules_.size(); ++i) trainable_[i] = i < m;
}

void ModularModel::set_trainable_set(std::span<const std::size_t> indices) {
    std::vector<bool> mask(modules_.size(), false);
    for (auto i : indices) {
        if (i >= modules_.size()) {
            throw ConfigError("module index " + std::to_string(i) + " out of range [0, " +
                              std::to_string(modules_.size()) + ")");
        }
        mask[i] = true;
    }
    trainable_ = std::move(mask);
}

void ModularModel::set_trainable_mask(const std::vector<bool>& mask) {
    if (mask.size() != modules_.size()) {
        throw ConfigError("trainable mask has " + std::to_string(mask.size()) + " entries for " +
                          std::to_string(modules_.size()) + " modules");
    }
    trainable_ = mask;
}

Tensor ModularModel::forward(const Tensor& input) const {
    Tensor x = input;
    for (const auto& module : modules_)
        for (const auto& layer : module.layers) x = fedbug::forward(layer, x);
    return x;
}

ForwardTrace ModularModel::forward_trace(const Tensor& input) const {
    ForwardTrace trace;
    trace.inputs.resize(modules_.size());
    Tensor x = input;
    for (std::size_t m = 0; m < modules_.size(); ++m) {
        for (const auto& layer : modules_[m].layers) {
            Tensor y = fedbug::forward(layer, x);
            trace.inputs[m].push_back(std::move(x));
            x = std::move(y);
        }
    }
    trace.output = std::move(x);
    return trace;
}

ParamTree ModularModel::backward(const ForwardTrace& trace, const Tensor& grad_output,
                                 bool all_modules) const {
    ParamTree grads = zeros_like();
    std::size_t lowest = 0;
    if (!all_modules) {
        lowest = modules_.size();
        for (std::size_t m = 0; m < modules_.size(); ++m) {
            if (trainable_[m]) {
                lowest = m;
                break;
            }
        }
        if (lowest == modules_.size()) return grads;
    }
    Tensor g = grad_output;
    for (std::size_t m = modules_.size(); m-- > lowest;) {
        const bool want = all_modules || trainable_[m];
        const auto& layers = modules_[m].layers;
        for (std::size_t l = layers.size(); l-- > 0;) {
            // The input gradient of the lowest layer we visit is never used.
            const bool last = (m == lowest && l == 0);
            if (last && !want) break;
            LayerGrads lg = fedbug::backward(layers[l], trace.inputs[m][l], g, want);
            if (want) grads.modules[m][l] = std::move(lg.params);
            g = std::move(lg.input);
        }
    }
    return grads;
}

Tensor ModularModel::input_gradient(const ForwardTrace& trace, const Tensor& grad_output) const {
    Tensor g = grad_output;
    for (std::size_t m = modules_.size(); m-- > 0;) {
        const auto& layers = modules_[m].layers;
        for (std::size_t l = layers.size(); l-- > 0;) {
            g = fedbug::backward(layers[l], trace.inputs[m][l], g, false).input;
        }
    }
    return g;
}

ParamTree ModularModel::parameters() const {
    ParamTree tree;
    tree.modules.resize(modules_.size());
    for (std::size_t m = 0; m < modules_.size(); ++m)
        for (const auto& layer : modules_[m].layers) tree.modules[m].push_back(layer.params);
    return tree;
}

ParamTree ModularModel::zeros_like() const {
    ParamTree tree;
    tree.modules.resize(modules_.size());
    for (std::size_t m = 0; m < modules_.size(); ++m) {
        for (const auto& layer : modules_[m].layers) {
            std::vector<Tensor> zeros;
            for (const auto& p : layer.params) zeros.push_back(Tensor::zeros_like(p));
            tree.modules[m].push_back(std::move(zeros));
        }
    }
    return tree;
}

void ModularModel::check_compatible(const ParamTree& tree, const char* what) const {
    auto fail = [&](const std::string& detail) {
        throw ConfigError(std::string(what) + ": " + detail);
    };
    if (tree.modules.size() != modules_.size()) fail("module count mismatch");
    for (std::size_t m = 0; m < modules_.size(); ++m) {
        const auto& layers = modules_[m].layers;
        if (tree.modules[m].size() != layers.size()) fail("layer count mismatch in module " + std::to_string(m));
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (tree.modules[m][l].size() != layers[l].params.size()) {
                fail("parameter count mismatch in module " + std::to_string(m));
            }
            for (std::size_t p = 0; p < layers[l].params.size(); ++p) {
                if (!tree.modules[m][l][p].same_shape(layers[l].params[p])) {
                    fail("shape " + tree.modules[m][l][p].shape_string() + " vs " +
                         layers[l].params[p].shape_string() + " in module " + std::to_string(m));
                }
            }
        }
    }
}

bool ModularModel::bit_equal(const ModularModel& other) const {
    if (modules_.size() != other.modules_.size()) return false;
    for (std::size_t m = 0; m < modules_.size(); ++m) {
        if (modules_[m].name != other.modules_[m].name) return false;
        const auto& a = modules_[m].layers;
        const auto& b = other.modules_[m].layers;
        if (a.size() != b.size()) return false;
        for (std::size_t l = 0; l < a.size(); ++l) {
            if (a[l].kind != b[l].kind || a[l].params.size() != b[l].params.size()) return false;
            for (std::size_t p = 0; p < a[l].params.size(); ++p) {
                if (!a[l].params[p].bit_equal(b[l].params[p])) return false;
            }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Construction and delta algebra

ModularModel init_model(std::span<const ModuleDesc> arch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Module> modules;
    for (const auto& desc : arch) {
        Module module{desc.name, {}};
        for (const auto& ld : desc.layers) {
            if (ld.kind == LayerKind::kReLU) {
                module.layers.push_back(Layer::relu());
                continue;
            }
            Layer layer = Layer::dense(ld.in_dim, ld.out_dim, ld.has_bias);
            const double s = std::sqrt(6.0 / static_cast<double>(ld.in_dim + ld.out_dim));
            std::uniform_real_distribution<double> dist(-s, s);
            for (double& w : layer.weight().values()) w = dist(rng);
            module.layers.push_back(std::move(layer));
        }
        modules.push_back(std::move(module));
    }
    return ModularModel(std::move(modules));
}

ParamDelta delta(const ModularModel& after, const ModularModel& before) {
    ParamTree a = after.parameters();
    before.check_compatible(a, "delta");
    for (std::size_t m = 0; m < a.modules.size(); ++m) {
        for (std::size_t l = 0; l < a.modules[m].size(); ++l) {
            for (std::size_t p = 0; p < a.modules[m][l].size(); ++p) {
                auto out = a.modules[m][l][p].values();
                auto b = before.module(m).layers[l].params[p].values();
                for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
            }
        }
    }
    return a;
}

void apply_scaled_deltas(ModularModel& model, std::span<const ParamDelta> deltas, double scale) {
    if (deltas.empty()) return;
    for (const auto& d : deltas) model.check_compatible(d, "apply_scaled_deltas");
    ParamTree sum = deltas.front();
    for (std::size_t k = 1; k < deltas.size(); ++k) {
        for (std::size_t m = 0; m < sum.modules.size(); ++m)
            for (std::size_t l = 0; l < sum.modules[m].size(); ++l)
                for (std::size_t p = 0; p < sum.modules[m][l].size(); ++p) {
                    auto acc = sum.modules[m][l][p].values();
                    auto add = deltas[k].modules[m][l][p].values();
                    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
                }
    }
    for (std::size_t m = 0; m < sum.modules.size(); ++m) {
        auto& layers = model.module(m).layers;
        for (std::size_t l = 0; l < layers.size(); ++l)
            for (std::size_t p = 0; p < layers[l].params.size(); ++p) {
                auto dst = layers[l].params[p].values();
                auto src = sum.modules[m][l][p].values();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
            }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'F', 'B', 'U', 'G', 'C', 'K', 'P', 'T'};

void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8)) throw DataError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const ModularModel& model, std::ostream& out) {
    json header;
    header["format"] = "fedbug-checkpoint";
    header["version"] = 1;
    json modules = json::array();
    std::uint64_t count = 0;
    for (std::size_t m = 0; m < model.num_modules(); ++m) {
        const auto& module = model.module(m);
        json layers = json::array();
        for (const auto& layer : module.layers) {
            json lj{{"kind", to_string(layer.kind)}};
            if (layer.kind == LayerKind::kDense) {
                lj["in_dim"] = layer.in_dim;
                lj["out_dim"] = layer.out_dim;
                lj["has_bias"] = layer.has_bias;
            }
            json shapes = json::array();
            for (const auto& p : layer.params) {
                shapes.push_back(p.shape());
                count += p.size();
            }
            lj["shapes"] = shapes;
            layers.push_back(lj);
        }
        modules.push_back({{"name", module.name},
                           {"trainable", static_cast<bool>(model.trainable(m))},
                           {"layers", layers}});
    }
    header["modules"] = modules;
    header["value_count"] = count;
    const std::string text = header.dump();

    out.write(kMagic, sizeof(kMagic));
    write_u64_le(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& module : model.modules())
        for (const auto& layer : module.layers)
            for (const auto& p : layer.params)
                for (double v : p.values()) write_u64_le(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw DataError("failed writing checkpoint");
}

ModularModel load_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("not a fedbug checkpoint (bad magic)");
    }
    const std::uint64_t header_len = read_u64_le(in);
    if (header_len > (1u << 26)) throw DataError("checkpoint header too large");
    std::string text(header_len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
        throw DataError("checkpoint header truncated");
    }
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    std::vector<Module> modules;
    std::vector<bool> trainable;
    try {
        for (const auto& mj : header.at("modules")) {
            Module module{mj.at("name").get<std::string>(), {}};
            for (const auto& lj : mj.at("layers")) {
                const auto kind = lj.at("kind").get<std::string>();
                if (kind == "relu") {
                    module.layers.push_back(Layer::relu());
                } else if (kind == "dense") {
                    module.layers.push_back(Layer::dense(lj.at("in_dim").get<std::size_t>(),
                                                         lj.at("out_dim").get<std::size_t>(),
                                                         lj.at("has_bias").get<bool>()));
                } else {
                    throw DataError("checkpoint: unknown layer kind '" + kind + "'");
                }
                const auto& shapes = lj.at("shapes");
                const auto& params = module.layers.back().params;
                if (shapes.size() != params.size()) throw DataError("checkpoint: parameter count mismatch");
                for (std::size_t p = 0; p < params.size(); ++p) {
                    if (shapes[p].get<std::vector<std::size_t>>() != params[p].shape()) {
                        throw DataError("checkpoint: shape mismatch in module '" + module.name + "'");
                    }
                }
            }
            trainable.push_back(mj.value("trainable", true));
            modules.push_back(std::move(module));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint header malformed: ") + e.what());
    }

    for (auto& module : modules)
        for (auto& layer : module.layers)
            for (auto& p : layer.params)
                for (double& v : p.values()) v = std::bit_cast<double>(read_u64_le(in));

    ModularModel model(std::move(modules));
    model.set_trainable_mask(trainable);
    if (header.value("value_count", std::uint64_t{0}) != model.num_params()) {
        throw DataError("checkpoint: value count mismatch");
    }
    return model;
}

void save_checkpoint(const ModularModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    save_checkpoint(model, out);
}

ModularModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    return load_checkpoint(in);
}

}  // namespace fedbug
