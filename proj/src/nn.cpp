#include "fedbug/nn.hpp"

#include <algorithm>
#include <cmath>

#include "fedbug/error.hpp"

namespace fedbug {

namespace {

// Interprets a rank-1 or rank-2 tensor as (rows, cols).
struct Rows {
    std::size_t rows;
    std::size_t cols;
};

Rows as_rows(const Tensor& t, const char* what) {
    if (t.rank() == 1) return {1, t.dim(0)};
    if (t.rank() == 2) return {t.dim(0), t.dim(1)};
    throw ConfigError(std::string(what) + " must be rank 1 or 2, got shape " + t.shape_string());
}

std::vector<std::size_t> with_trailing(const Tensor& like, std::size_t trailing) {
    auto shape = like.shape();
    shape.back() = trailing;
    return shape;
}

}  // namespace

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::kDense: return "dense";
        case LayerKind::kReLU: return "relu";
    }
    return "unknown";
}

Layer Layer::dense(std::size_t in_dim, std::size_t out_dim, bool has_bias) {
    if (in_dim == 0 || out_dim == 0) {
        throw ConfigError("dense layer dimensions must be positive");
    }
    Layer layer;
    layer.kind = LayerKind::kDense;
    layer.in_dim = in_dim;
    layer.out_dim = out_dim;
    layer.has_bias = has_bias;
    layer.params.emplace_back(std::vector<std::size_t>{out_dim, in_dim});
    if (has_bias) layer.params.emplace_back(std::vector<std::size_t>{out_dim});
    return layer;
}

Layer Layer::relu() { return Layer{}; }

Tensor forward(const Layer& layer, const Tensor& input) {
    if (layer.kind == LayerKind::kReLU) {
        Tensor out = input;
        for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
        return out;
    }

    const auto [rows, cols] = as_rows(input, "dense input");
    if (cols != layer.in_dim) {
        throw ConfigError("dense forward: input shape " + input.shape_string() +
                          " incompatible with weight shape " + layer.weight().shape_string());
    }
    const Tensor& w = layer.weight();
    Tensor out(with_trailing(input, layer.out_dim));
    const double* x = input.data();
    double* y = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = y + r * layer.out_dim;
        for (std::size_t o = 0; o < layer.out_dim; ++o) {
            const double* wo = w.data() + o * cols;
            double acc = layer.has_bias ? layer.params[1][o] : 0.0;
            for (std::size_t i = 0; i < cols; ++i) acc += wo[i] * xr[i];
            yr[o] = acc;
        }
    }
    return out;
}

LayerGrads backward(const Layer& layer, const Tensor& input, const Tensor& grad_output,
                    bool want_param_grads) {
    if (layer.kind == LayerKind::kReLU) {
        if (!input.same_shape(grad_output)) {
            throw ConfigError("relu backward: input shape " + input.shape_string() +
                              " vs grad_output shape " + grad_output.shape_string());
        }
        LayerGrads g{grad_output, {}};
        auto gi = g.input.values();
        auto x = input.values();
        for (std::size_t i = 0; i < gi.size(); ++i) {
            if (!(x[i] > 0.0)) gi[i] = 0.0;
        }
        return g;
    }

    const auto [rows, cols] = as_rows(input, "dense input");
    const auto [grows, gcols] = as_rows(grad_output, "dense grad_output");
    if (cols != layer.in_dim || grows != rows || gcols != layer.out_dim) {
        throw ConfigError("dense backward: input shape " + input.shape_string() +
                          " and grad_output shape " + grad_output.shape_string() +
                          " incompatible with weight shape " + layer.weight().shape_string());
    }

    const Tensor& w = layer.weight();
    LayerGrads g{Tensor(input.shape()), {}};
    double* gx = g.input.data();
    const double* go = grad_output.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* gor = go + r * gcols;
        double* gxr = gx + r * cols;
        for (std::size_t o = 0; o < gcols; ++o) {
            const double scale = gor[o];
            if (scale == 0.0) continue;
            const double* wo = w.data() + o * cols;
            for (std::size_t i = 0; i < cols; ++i) gxr[i] += scale * wo[i];
        }
    }

    if (want_param_grads) {
        Tensor gw(w.shape());
        const double* x = input.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = x + r * cols;
            const double* gor = go + r * gcols;
            for (std::size_t o = 0; o < gcols; ++o) {
                const double scale = gor[o];
                if (scale == 0.0) continue;
                double* gwo = gw.data() + o * cols;
                for (std::size_t i = 0; i < cols; ++i) gwo[i] += scale * xr[i];
            }
        }
        g.params.push_back(std::move(gw));
        if (layer.has_bias) {
            Tensor gb({layer.out_dim});
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t o = 0; o < gcols; ++o) gb[o] += go[r * gcols + o];
            }
            g.params.push_back(std::move(gb));
        }
    }
    return g;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    const auto [rows, classes] = as_rows(logits, "logits");
    if (labels.size() != rows) {
        throw ConfigError("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(rows) + " rows");
    }
    LossResult result{0.0, Tensor(logits.shape())};
    const double inv_rows = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw DataError("cross entropy: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(classes) + ")");
        }
        const double* z = logits.data() + r * classes;
        double* g = result.grad.data() + r * classes;
        const double zmax = *std::max_element(z, z + classes);
        double denom = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            g[c] = std::exp(z[c] - zmax);
            denom += g[c];
        }
        const double log_denom = std::log(denom);
        result.loss += (log_denom - (z[label] - zmax)) * inv_rows;
        for (std::size_t c = 0; c < classes; ++c) g[c] = g[c] / denom * inv_rows;
        g[label] -= inv_rows;
    }
    return result;
}

LossResult squared_error(const Tensor& prediction, const Tensor& target) {
    if (!prediction.same_shape(target)) {
        throw ConfigError("squared error: prediction shape " + prediction.shape_string() +
                          " vs target shape " + target.shape_string());
    }
    const double rows = prediction.rank() >= 2 ? static_cast<double>(prediction.dim(0)) : 1.0;
    LossResult result{0.0, Tensor(prediction.shape())};
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double diff = prediction[i] - target[i];
        result.loss += diff * diff / rows;
        result.grad[i] = 2.0 * diff / rows;
    }
    return result;
}

LossResult loss_and_grad(LossKind kind, const Tensor& prediction, const LossTarget& target) {
    switch (kind) {
        case LossKind::kSoftmaxCrossEntropy:
            if (const auto* labels = std::get_if<std::vector<int>>(&target)) {
                return softmax_cross_entropy(prediction, *labels);
            }
            throw ConfigError("softmax cross entropy requires integer class labels");
        case LossKind::kSquaredError:
            if (const auto* t = std::get_if<Tensor>(&target)) return squared_error(prediction, *t);
            throw ConfigError("squared error requires a target tensor");
    }
    throw ConfigError("unknown loss kind");
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr,
              double weight_decay, bool frozen) {
    if (params.size() != grads.size()) {
        throw ConfigError("sgd_step: " + std::to_string(params.size()) + " params vs " +
                          std::to_string(grads.size()) + " grads");
    }
    if (!(lr > 0.0) || !(weight_decay >= 0.0)) {
        throw ConfigError("sgd_step: lr must be > 0 and weight_decay >= 0");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].same_shape(grads[i])) {
            throw ConfigError("sgd_step: param " + std::to_string(i) + " shape " +
                              params[i].shape_string() + " vs grad shape " +
                              grads[i].shape_string());
        }
    }
    if (frozen) return;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].all_finite()) {
            throw NumericError("sgd_step: non-finite gradient in tensor " + std::to_string(i));
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].values();
        auto g = grads[i].values();
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * (g[j] + weight_decay * p[j]);
    }
}

}  // namespace fedbug
