#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedbug/nn.hpp"
#include "fedbug/tensor.hpp"

namespace fedbug {

struct LayerDesc {
    LayerKind kind = LayerKind::kReLU;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    bool has_bias = true;

    static LayerDesc dense(std::size_t in, std::size_t out, bool bias = true) {
        return {LayerKind::kDense, in, out, bias};
    }
    static LayerDesc relu() { return {LayerKind::kReLU, 0, 0, false}; }
};

struct ModuleDesc {
    std::string name;
    std::vector<LayerDesc> layers;
};

struct Module {
    std::string name;
    std::vector<Layer> layers;
};

/// Per-module, per-layer, per-parameter tensors shaped like a ModularModel.
/// Used both for gradients and for client deltas.
struct ParamTree {
    std::vector<std::vector<std::vector<Tensor>>> modules;

    std::size_t num_values() const;
    double squared_norm() const;
    bool all_finite() const;
    bool bit_equal(const ParamTree& other) const;
    /// True when every tensor of module `index` is exactly zero.
    bool module_is_zero(std::size_t index) const;
};

using ParamDelta = ParamTree;

/// Cached activations of one forward pass; `inputs[m][l]` is the input fed to
/// layer l of module m and `output` the final activation.
struct ForwardTrace {
    std::vector<std::vector<Tensor>> inputs;
    Tensor output;
};

/// An ordered stack of M modules (input module first) with a trainable flag per
/// module. Freeze state only affects updates, never the forward pass.
class ModularModel {
public:
    ModularModel() = default;
    /// Validates that the dense layers form a consistent shape chain.
    explicit ModularModel(std::vector<Module> modules);

    std::size_t num_modules() const noexcept { return modules_.size(); }
    const Module& module(std::size_t i) const { return modules_.at(i); }
    Module& module(std::size_t i) { return modules_.at(i); }
    std::span<const Module> modules() const noexcept { return modules_; }

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t output_dim() const noexcept { return output_dim_; }
    std::size_t num_params() const;

    bool trainable(std::size_t i) const { return trainable_.at(i); }
    const std::vector<bool>& trainable_mask() const noexcept { return trainable_; }

    /// Modules [0, m) trainable, [m, M) frozen. Requires 0 <= m <= M.
    void set_trainable_prefix(std::size_t m);
    /// Exactly the given zero-based module indices become trainable.
    void set_trainable_set(std::span<const std::size_t> indices);
    void set_trainable_mask(const std::vector<bool>& mask);

    Tensor forward(const Tensor& input) const;
    ForwardTrace forward_trace(const Tensor& input) const;

    /// Backpropagates `grad_output` through the trace. Parameter gradients of
    /// frozen modules are returned as zero tensors and backpropagation stops
    /// below the lowest trainable module. With `all_modules` set, every module
    /// receives gradients regardless of freeze state.
    ParamTree backward(const ForwardTrace& trace, const Tensor& grad_output,
                       bool all_modules = false) const;

    /// Gradient with respect to the model input (always full backprop).
    Tensor input_gradient(const ForwardTrace& trace, const Tensor& grad_output) const;

    ParamTree parameters() const;
    ParamTree zeros_like() const;
    void check_compatible(const ParamTree& tree, const char* what) const;

    /// Bit-exact comparison of architecture and parameters (ignores freeze state).
    bool bit_equal(const ModularModel& other) const;

private:
    std::vector<Module> modules_;
    std::vector<bool> trainable_;
    std::size_t input_dim_ = 0;
    std::size_t output_dim_ = 0;
};

/// Glorot-uniform weights in [-s, s], s = sqrt(6 / (in + out)), zero biases.
/// Deterministic in `seed`; all modules start trainable.
ModularModel init_model(std::span<const ModuleDesc> arch, std::uint64_t seed);

/// Element-wise `after - before`.
ParamDelta delta(const ModularModel& after, const ModularModel& before);

/// `model += scale * sum(deltas)`. Deltas are summed in the order given before
/// scaling, which makes the result independent of how they were produced.
void apply_scaled_deltas(ModularModel& model, std::span<const ParamDelta> deltas, double scale);

/// L2 distance between two trees of identical layout.
double l2_distance(const ParamTree& x, const ParamTree& y);

// Checkpoint container: 8-byte magic "FBUGCKPT", little-endian u64 header
// length, UTF-8 JSON header describing modules/layers/shapes, then every
// parameter value as little-endian f64 in module/layer/param order.
void save_checkpoint(const ModularModel& model, std::ostream& out);
ModularModel load_checkpoint(std::istream& in);
void save_checkpoint(const ModularModel& model, const std::string& path);
ModularModel load_checkpoint(const std::string& path);

}  // namespace fedbug
