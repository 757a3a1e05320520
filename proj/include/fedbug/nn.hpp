#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedbug/tensor.hpp"

namespace fedbug {

enum class LayerKind { kDense, kReLU };

std::string to_string(LayerKind kind);

/// One layer of a feed-forward stack.
///
/// Dense layers compute `y = x W^T + b` with `W` of shape (out_dim, in_dim) and
/// `b` of shape (out_dim). ReLU layers carry no parameters and leave
/// in_dim/out_dim at zero; they preserve whatever shape they receive.
struct Layer {
    LayerKind kind = LayerKind::kReLU;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    bool has_bias = false;
    std::vector<Tensor> params;

    /// Dense layer with zero-initialised parameters.
    static Layer dense(std::size_t in_dim, std::size_t out_dim, bool has_bias = true);
    static Layer relu();

    const Tensor& weight() const { return params.at(0); }
    Tensor& weight() { return params.at(0); }
};

Tensor forward(const Layer& layer, const Tensor& input);

struct LayerGrads {
    Tensor input;
    std::vector<Tensor> params;
};

/// Gradients of a layer given the upstream gradient. When `want_param_grads` is
/// false the parameter gradients are left empty (used for frozen layers).
LayerGrads backward(const Layer& layer, const Tensor& input, const Tensor& grad_output,
                    bool want_param_grads = true);

enum class LossKind { kSoftmaxCrossEntropy, kSquaredError };

struct LossResult {
    double loss = 0.0;
    Tensor grad;
};

/// Mean cross entropy over the batch. `logits` is (n, C) or (C) with n labels.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Sum of squared errors per row, averaged over rows: a rank-1 prediction is a
/// single row, so pred=0.8, target=1 gives 0.04 with gradient 2*(pred-target).
LossResult squared_error(const Tensor& prediction, const Tensor& target);

using LossTarget = std::variant<Tensor, std::vector<int>>;

LossResult loss_and_grad(LossKind kind, const Tensor& prediction, const LossTarget& target);

/// In-place `p <- p - lr * (g + weight_decay * p)`. A frozen step leaves every
/// parameter untouched. Throws NumericError naming the first non-finite gradient.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr,
              double weight_decay, bool frozen);

}  // namespace fedbug
