#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "biclstm/network.hpp"
#include "biclstm/train.hpp"
#include "oracles.hpp"

using namespace biclstm;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.patch = 8;
    cfg.bands = 3;
    cfg.hidden = 2;
    cfg.kernel = 3;
    cfg.dropout = 0.0;
    cfg.group = 1;
    cfg.classes = 2;
    return cfg;
}

PatchSequence random_sample(Rng& rng, const ModelConfig& cfg, std::uint16_t label) {
    PatchSequence s;
    s.label = label;
    for (std::size_t k = 0; k < cfg.steps(); ++k)
        s.steps.push_back(rng_uniform(rng, {cfg.group, cfg.patch, cfg.patch}, -1.0, 1.0));
    return s;
}

// direction-swapped twin: parameters exchanged, head feature halves exchanged
BiClstmModel swap_directions(const BiClstmModel& m) {
    BiClstmModel out = m;
    out.forward_params = m.backward_params;
    out.backward_params = m.forward_params;
    const std::size_t c = m.config.classes;
    const std::size_t half = m.config.feature_len() / 2;
    for (std::size_t row = 0; row < c; ++row)
        for (std::size_t col = 0; col < half; ++col) {
            out.head.weights.at({row, col}) = m.head.weights.at({row, col + half});
            out.head.weights.at({row, col + half}) = m.head.weights.at({row, col});
        }
    return out;
}

PatchSequence reverse_bands(const PatchSequence& s) {
    PatchSequence out = s;
    std::reverse(out.steps.begin(), out.steps.end());
    return out;
}

} // namespace

TEST_CASE("zero model gives uniform softmax and ln(c) loss") {
    ModelConfig cfg = tiny_config();
    cfg.classes = 4;
    BiClstmModel model;
    model.config = cfg;
    model.forward_params = make_clstm_params(cfg.group, cfg.hidden, cfg.kernel);
    model.backward_params = make_clstm_params(cfg.group, cfg.hidden, cfg.kernel);
    model.head.weights = Tensor({cfg.classes, cfg.feature_len()});
    model.head.bias = Tensor({cfg.classes});

    Rng rng(1);
    PatchSequence s = random_sample(rng, cfg, 1);
    Rng drop(0);
    ModelForward fwd = model_forward(s, model, drop, false);
    CHECK(fwd.logits.sqnorm() == 0.0);
    SoftmaxXent sx = softmax_xent(fwd.logits, 0);
    CHECK(std::abs(sx.loss - std::log(4.0)) < 1e-12);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(sx.probs[i] - 0.25) < 1e-15);

    Prediction pred = predict(s, model);
    CHECK(pred.class_index == 0); // tie broken by lowest index
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(pred.probs[i] - 0.25) < 1e-15);
}

TEST_CASE("single step with shared parameters yields identical feature halves") {
    ModelConfig cfg = tiny_config();
    cfg.bands = 1;
    cfg.feature_mode = FeatureMode::last_state;
    Rng init(3);
    BiClstmModel model = init_model(cfg, init);
    model.backward_params = model.forward_params;

    Rng rng(4);
    PatchSequence s = random_sample(rng, cfg, 1);
    Rng drop(0);
    ModelForward fwd = model_forward(s, model, drop, false);
    const std::size_t half = cfg.feature_len() / 2;
    for (std::size_t i = 0; i < half; ++i)
        CHECK(fwd.tape.feature[i] == fwd.tape.feature[half + i]);
}

TEST_CASE("feature lengths follow the config") {
    ModelConfig cfg = tiny_config();
    cfg.bands = 6;
    cfg.group = 2;
    cfg.hidden = 3;
    CHECK(cfg.feature_len() == 2 * 3 * 3 * 4 * 4); // 2 * l/g * hidden * (p/2)^2

    cfg.feature_mode = FeatureMode::last_state;
    CHECK(cfg.feature_len() == 2 * 3 * 4 * 4);

    Rng init(5);
    BiClstmModel model = init_model(cfg, init);
    Rng rng(6);
    PatchSequence s = random_sample(rng, cfg, 1);
    Rng drop(0);
    ModelForward fwd = model_forward(s, model, drop, false);
    CHECK(fwd.tape.feature.size() == cfg.feature_len());
    CHECK(model.head.weights.dim(1) == cfg.feature_len());
}

TEST_CASE("direction-swap twin on band-reversed input matches") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ModelConfig cfg = tiny_config();
        cfg.bands = 4;
        cfg.feature_mode = seed % 2 == 0 ? FeatureMode::last_state : FeatureMode::full_sequence;
        Rng init(seed);
        BiClstmModel model = init_model(cfg, init);
        BiClstmModel twin = swap_directions(model);

        Rng rng(seed * 100);
        PatchSequence s = random_sample(rng, cfg, 1);
        Rng drop(0);
        Tensor logits = model_forward(s, model, drop, false).logits;
        Tensor twin_logits = model_forward(reverse_bands(s), twin, drop, false).logits;
        CHECK(max_abs_diff(logits, twin_logits) < 1e-12);
    }
}

TEST_CASE("inference consumes no rng and is bit-deterministic") {
    ModelConfig cfg = tiny_config();
    cfg.dropout = 0.6;
    Rng init(7);
    BiClstmModel model = init_model(cfg, init);
    Rng rng(8);
    PatchSequence s = random_sample(rng, cfg, 1);

    Rng drop_a(1), drop_b(999999);
    Tensor a = model_forward(s, model, drop_a, false).logits;
    Tensor b = model_forward(s, model, drop_b, false).logits;
    CHECK(max_abs_diff(a, b) == 0.0);

    Prediction p1 = predict(s, model);
    Prediction p2 = predict(s, model);
    CHECK(p1.class_index == p2.class_index);
    CHECK(max_abs_diff(p1.probs, p2.probs) == 0.0);
}

TEST_CASE("config and sample shape mismatches are rejected") {
    ModelConfig cfg = tiny_config();
    Rng init(9);
    BiClstmModel model = init_model(cfg, init);
    Rng rng(10);
    PatchSequence bad = random_sample(rng, cfg, 1);
    bad.steps.pop_back();
    Rng drop(0);
    CHECK_THROWS_AS(model_forward(bad, model, drop, false), shape_error);

    PatchSequence wrong_patch;
    wrong_patch.label = 1;
    for (std::size_t k = 0; k < cfg.steps(); ++k) wrong_patch.steps.push_back(Tensor({1, 4, 4}));
    CHECK_THROWS_AS(model_forward(wrong_patch, model, drop, false), shape_error);
}

TEST_CASE("model config validation") {
    ModelConfig cfg = tiny_config();
    cfg.patch = 12;
    CHECK_THROWS_AS(cfg.validate(), argument_error);
    cfg = tiny_config();
    cfg.group = 2; // does not divide bands=3
    CHECK_THROWS_AS(cfg.validate(), argument_error);
    cfg = tiny_config();
    cfg.classes = 1;
    CHECK_THROWS_AS(cfg.validate(), argument_error);
    cfg = tiny_config();
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), argument_error);
}

TEST_CASE("model_backward zero grad and head-only wiring") {
    ModelConfig cfg = tiny_config();
    Rng init(11);
    BiClstmModel model = init_model(cfg, init);
    Rng rng(12);
    PatchSequence s = random_sample(rng, cfg, 1);
    Rng drop(0);
    ModelForward fwd = model_forward(s, model, drop, false);

    ModelGrads zero = model_backward(fwd.tape, model, Tensor({cfg.classes}));
    zero.for_each_param([&](const std::string&, Tensor& t) { CHECK(t.sqnorm() == 0.0); });
    for (const Tensor& g : zero.input) CHECK(g.sqnorm() == 0.0);

    Tensor gl({cfg.classes}, {0.3, -0.7});
    ModelGrads grads = model_backward(fwd.tape, model, gl);
    auto [gx, gw, gb] = dense_backward(fwd.tape.feature, model.head, gl);
    CHECK(max_abs_diff(grads.head.weights, gw) == 0.0);
    CHECK(max_abs_diff(grads.head.bias, gb) == 0.0);
}

TEST_CASE("full model gradients pass finite differences on the tiny config") {
    GradcheckConfig gc;
    gc.model = tiny_config();
    gc.seed = 21;
    gc.batch = 2;
    GradcheckReport report = gradcheck(gc);
    for (const BlockCheck& b : report.blocks) {
        INFO(b.name << " max rel err " << b.max_rel_err);
        CHECK(b.pass);
    }
    CHECK(report.pass);
}

TEST_CASE("crafted head bias saturates the prediction") {
    ModelConfig cfg = tiny_config();
    cfg.classes = 3;
    BiClstmModel model;
    model.config = cfg;
    model.forward_params = make_clstm_params(cfg.group, cfg.hidden, cfg.kernel);
    model.backward_params = make_clstm_params(cfg.group, cfg.hidden, cfg.kernel);
    model.head.weights = Tensor({cfg.classes, cfg.feature_len()});
    model.head.bias = Tensor({cfg.classes}, {10.0, 0.0, 0.0});

    Rng rng(13);
    PatchSequence s = random_sample(rng, cfg, 1);
    Prediction pred = predict(s, model);
    CHECK(pred.class_index == 0);
    CHECK(pred.probs[0] > 0.9999);
    CHECK(std::abs(pred.probs.sum() - 1.0) < 1e-12);
}

TEST_CASE("forward-only mode zeroes the backward contribution") {
    ModelConfig cfg = tiny_config();
    Rng init(14);
    BiClstmModel bi = init_model(cfg, init);
    BiClstmModel fwd_only = bi;
    fwd_only.config.bidirectional = false;

    Rng rng(15);
    PatchSequence s = random_sample(rng, cfg, 1);
    Rng drop(0);
    ModelForward a = model_forward(s, fwd_only, drop, false);
    const std::size_t half = cfg.feature_len() / 2;
    for (std::size_t i = half; i < cfg.feature_len(); ++i) CHECK(a.tape.feature[i] == 0.0);

    // gradients to the backward branch vanish as well
    Tensor gl({cfg.classes}, {1.0, -1.0});
    ModelGrads grads = model_backward(a.tape, fwd_only, gl);
    grads.bw.for_each([&](const char*, Tensor& t) { CHECK(t.sqnorm() == 0.0); });
}
