#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fedbug/error.hpp"
#include "fedbug/model.hpp"

using namespace fedbug;

namespace {

std::vector<ModuleDesc> mlp() {
    return {
        {"m1", {LayerDesc::dense(6, 8), LayerDesc::relu()}},
        {"m2", {LayerDesc::dense(8, 8), LayerDesc::relu()}},
        {"m3", {LayerDesc::dense(8, 5), LayerDesc::relu()}},
        {"m4", {LayerDesc::dense(5, 3)}},
    };
}

ModularModel scalar_model(double w) {
    ModularModel m = init_model(std::vector<ModuleDesc>{{"only", {LayerDesc::dense(1, 1, false)}}}, 0);
    m.module(0).layers[0].params[0][0] = w;
    return m;
}

}  // namespace

TEST(Model, InitIsDeterministic) {
    const auto arch = mlp();
    EXPECT_TRUE(init_model(arch, 3).bit_equal(init_model(arch, 3)));
    EXPECT_FALSE(init_model(arch, 3).bit_equal(init_model(arch, 4)));
}

TEST(Model, GlorotBound) {
    const auto arch = mlp();
    const ModularModel m = init_model(arch, 9);
    for (const auto& mod : m.modules()) {
        for (const auto& layer : mod.layers) {
            if (layer.kind != LayerKind::kDense) continue;
            const double bound = std::sqrt(6.0 / static_cast<double>(layer.in_dim + layer.out_dim));
            for (double w : layer.params[0].values()) EXPECT_LE(std::abs(w), bound);
            for (double b : layer.params[1].values()) EXPECT_EQ(b, 0.0);
        }
    }
}

TEST(Model, RejectsBrokenChain) {
    const std::vector<ModuleDesc> arch{{"a", {LayerDesc::dense(4, 3)}}, {"b", {LayerDesc::dense(4, 2)}}};
    EXPECT_THROW(init_model(arch, 0), ConfigError);
    EXPECT_THROW(init_model(std::vector<ModuleDesc>{}, 0), ConfigError);
}

TEST(Model, TrainablePrefix) {
    ModularModel m = init_model(mlp(), 0);
    m.set_trainable_prefix(4);
    EXPECT_EQ(m.trainable_mask(), (std::vector<bool>{true, true, true, true}));
    m.set_trainable_prefix(0);
    EXPECT_EQ(m.trainable_mask(), (std::vector<bool>{false, false, false, false}));
    m.set_trainable_prefix(2);
    EXPECT_EQ(m.trainable_mask(), (std::vector<bool>{true, true, false, false}));
    EXPECT_THROW(m.set_trainable_prefix(5), ConfigError);
}

TEST(Model, TrainableSet) {
    ModularModel m = init_model(mlp(), 0);
    m.set_trainable_set(std::vector<std::size_t>{});
    EXPECT_EQ(m.trainable_mask(), (std::vector<bool>{false, false, false, false}));
    m.set_trainable_set(std::vector<std::size_t>{3});
    EXPECT_EQ(m.trainable_mask(), (std::vector<bool>{false, false, false, true}));
    m.set_trainable_set(std::vector<std::size_t>{2, 3});
    EXPECT_EQ(m.trainable_mask(), (std::vector<bool>{false, false, true, true}));
    EXPECT_THROW(m.set_trainable_set(std::vector<std::size_t>{4}), ConfigError);
}

TEST(Model, DeltaOfSelfIsZero) {
    const ModularModel m = init_model(mlp(), 1);
    const ParamDelta d = delta(m, m);
    for (std::size_t i = 0; i < m.num_modules(); ++i) EXPECT_TRUE(d.module_is_zero(i));
}

TEST(Model, ApplySingleDeltaReproducesClient) {
    const ModularModel global = init_model(mlp(), 1);
    const ModularModel client = init_model(mlp(), 2);
    ModularModel server = global;
    const std::vector<ParamDelta> deltas{delta(client, global)};
    apply_scaled_deltas(server, deltas, 1.0);
    EXPECT_LT(l2_distance(server.parameters(), client.parameters()), 1e-14);
}

TEST(Model, ScalarDeltaAveraging) {
    ModularModel server = scalar_model(1.0);
    const std::vector<ParamDelta> deltas{delta(scalar_model(1.2), server), delta(scalar_model(1.4), server)};
    apply_scaled_deltas(server, deltas, 0.5);
    EXPECT_NEAR(server.module(0).layers[0].params[0][0], 1.3, 1e-15);
}

TEST(Model, FrozenModulesGetZeroGradsAndStopBackprop) {
    ModularModel m = init_model(mlp(), 5);
    const Tensor x({2, 6}, 0.3);
    const ForwardTrace trace = m.forward_trace(x);
    m.set_trainable_set(std::vector<std::size_t>{2});
    const ParamTree g = m.backward(trace, Tensor({2, 3}, 1.0));
    EXPECT_TRUE(g.module_is_zero(0));
    EXPECT_TRUE(g.module_is_zero(1));
    EXPECT_TRUE(g.module_is_zero(3));
    EXPECT_FALSE(g.module_is_zero(2));
}

TEST(Model, CheckpointRoundTripIsBitExact) {
    const ModularModel m = init_model(mlp(), 21);
    std::stringstream buf;
    save_checkpoint(m, buf);
    EXPECT_EQ(buf.str().substr(0, 8), "FBUGCKPT");
    const ModularModel back = load_checkpoint(buf);
    EXPECT_TRUE(m.bit_equal(back));
    EXPECT_EQ(back.modules()[3].name, "m4");
}

TEST(Model, CheckpointRejectsGarbage) {
    std::stringstream buf("not a checkpoint");
    EXPECT_THROW(load_checkpoint(buf), DataError);
}
