#include "fedbug/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "fedbug/model.hpp"
#include "fedbug/nn.hpp"

namespace fedbug {

namespace {

double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

// Normal entries pushed away from zero so ReLU kinks are never straddled.
Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape), 0.0);
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        double x = n(rng);
        if (std::abs(x) < 0.05) x = x < 0 ? -0.05 : 0.05;
        t[i] = x;
    }
    return t;
}

double dot(const Tensor& x, const Tensor& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

// Checks `analytic` against central differences of `objective` w.r.t. `x`.
void compare(Tensor& x, const Tensor& analytic, const std::function<double()>& objective, double h,
             GradCheckCase& out) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = objective();
        x[i] = saved - h;
        const double down = objective();
        x[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        out.max_rel_error = std::max(out.max_rel_error, rel_error(analytic[i], numeric));
        ++out.n_entries;
    }
}

void check_dense(std::mt19937_64& rng, double h, GradCheckCase& out) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    const std::size_t in = dim(rng), outd = dim(rng), rows = dim(rng);
    const bool bias = rng() % 2 == 0;
    Layer layer = Layer::dense(in, outd, bias);
    for (auto& p : layer.params) p = random_tensor(p.shape(), rng);
    Tensor x = rng() % 3 == 0 ? random_tensor({in}, rng) : random_tensor({rows, in}, rng);
    const Tensor w = random_tensor(forward(layer, x).shape(), rng);
    auto objective = [&] { return dot(forward(layer, x), w); };
    const LayerGrads g = backward(layer, x, w);
    compare(x, g.input, objective, h, out);
    for (std::size_t p = 0; p < layer.params.size(); ++p) compare(layer.params[p], g.params[p], objective, h, out);
}

void check_relu(std::mt19937_64& rng, double h, GradCheckCase& out) {
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    Layer layer = Layer::relu();
    Tensor x = random_tensor({dim(rng), dim(rng)}, rng);
    const Tensor w = random_tensor(x.shape(), rng);
    auto objective = [&] { return dot(forward(layer, x), w); };
    compare(x, backward(layer, x, w).input, objective, h, out);
}

void check_cross_entropy(std::mt19937_64& rng, double h, GradCheckCase& out) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    const std::size_t rows = dim(rng), classes = dim(rng) + 1;
    Tensor logits = random_tensor({rows, classes}, rng);
    std::vector<int> labels(rows);
    std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
    for (auto& l : labels) l = label(rng);
    auto objective = [&] { return softmax_cross_entropy(logits, labels).loss; };
    compare(logits, softmax_cross_entropy(logits, labels).grad, objective, h, out);
}

void check_squared_error(std::mt19937_64& rng, double h, GradCheckCase& out) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    const std::vector<std::size_t> shape{dim(rng), dim(rng)};
    Tensor pred = random_tensor(shape, rng);
    const Tensor target = random_tensor(shape, rng);
    auto objective = [&] { return squared_error(pred, target).loss; };
    compare(pred, squared_error(pred, target).grad, objective, h, out);
}

void check_model(std::mt19937_64& rng, double h, GradCheckCase& out) {
    std::uniform_int_distribution<std::size_t> dim(2, 5);
    const std::size_t d0 = dim(rng), d1 = dim(rng), d2 = dim(rng), classes = dim(rng), rows = dim(rng);
    const std::vector<ModuleDesc> arch{
        {"m1", {LayerDesc::dense(d0, d1), LayerDesc::relu()}},
        {"m2", {LayerDesc::dense(d1, d2), LayerDesc::relu()}},
        {"m3", {LayerDesc::dense(d2, classes)}},
    };
    ModularModel model = init_model(arch, 0);
    Tensor x({rows, d0}, 0.0);
    // Redraw until no ReLU input sits within reach of the kink.
    for (bool near_kink = true; near_kink;) {
        for (std::size_t m = 0; m < model.num_modules(); ++m) {
            for (auto& layer : model.module(m).layers) {
                for (auto& p : layer.params) p = random_tensor(p.shape(), rng);
            }
        }
        x = random_tensor({rows, d0}, rng);
        const ForwardTrace trace = model.forward_trace(x);
        near_kink = false;
        for (std::size_t m = 0; m < model.num_modules(); ++m) {
            for (std::size_t l = 0; l < model.module(m).layers.size(); ++l) {
                if (model.module(m).layers[l].kind != LayerKind::kReLU) continue;
                for (double z : trace.inputs[m][l].values()) near_kink = near_kink || std::abs(z) < 1e-3;
            }
        }
    }
    std::vector<int> labels(rows);
    std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
    for (auto& l : labels) l = label(rng);

    auto objective = [&] { return softmax_cross_entropy(model.forward(x), labels).loss; };
    const ForwardTrace trace = model.forward_trace(x);
    const ParamTree grads =
        model.backward(trace, softmax_cross_entropy(trace.output, labels).grad, true);
    for (std::size_t m = 0; m < model.num_modules(); ++m) {
        for (std::size_t l = 0; l < model.module(m).layers.size(); ++l) {
            auto& params = model.module(m).layers[l].params;
            for (std::size_t p = 0; p < params.size(); ++p) {
                compare(params[p], grads.modules[m][l][p], objective, h, out);
            }
        }
    }
}

}  // namespace

GradCheckReport run_gradcheck(std::size_t n_cases, std::uint64_t seed, double step) {
    using Check = void (*)(std::mt19937_64&, double, GradCheckCase&);
    const std::vector<std::pair<const char*, Check>> checks{
        {"dense", check_dense},
        {"relu", check_relu},
        {"softmax_cross_entropy", check_cross_entropy},
        {"squared_error", check_squared_error},
        {"model", check_model},
    };
    GradCheckReport report;
    std::mt19937_64 rng(seed);
    for (const auto& [name, check] : checks) {
        GradCheckCase c;
        c.name = name;
        for (std::size_t i = 0; i < n_cases; ++i) check(rng, step, c);
        report.max_rel_error = std::max(report.max_rel_error, c.max_rel_error);
        report.cases.push_back(std::move(c));
    }
    return report;
}

}  // namespace fedbug
