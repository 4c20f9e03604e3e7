#ifndef BICLSTM_NETWORK_HPP
#define BICLSTM_NETWORK_HPP

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "biclstm/clstm.hpp"
#include "biclstm/hsi.hpp"
#include "biclstm/nn_ops.hpp"
#include "biclstm/rng.hpp"
#include "biclstm/tensor.hpp"

// The complete bidirectional classifier: one CLSTM layer over the spectral
// sequence, another over the reversed sequence, 2x2 max-pool + dropout on each
// emitted hidden state, feature concatenation, dense head, softmax.

namespace biclstm {

enum class FeatureMode { full_sequence, last_state };

struct ModelConfig {
    std::size_t patch = 8;       // p, power of two in {8,16,32,64}
    std::size_t bands = 0;       // l
    std::size_t hidden = 32;     // channels per CLSTM layer
    std::size_t kernel = 3;      // odd
    double dropout = 0.6;
    std::size_t group = 1;       // g, bands per step; must divide bands
    FeatureMode feature_mode = FeatureMode::full_sequence;
    std::size_t classes = 0;     // c
    bool bidirectional = true;   // false zeroes the backward branch's features

    std::size_t steps() const { return bands / group; }
    std::size_t pooled() const { return patch / 2; }

    std::size_t feature_len() const {
        const std::size_t per_state = hidden * pooled() * pooled();
        return feature_mode == FeatureMode::full_sequence ? 2 * steps() * per_state : 2 * per_state;
    }

    void validate() const {
        if (patch < 8 || (patch & (patch - 1)) != 0)
            throw argument_error("config: patch size must be a power of two >= 8, got " + std::to_string(patch));
        if (bands == 0) throw argument_error("config: bands must be positive");
        if (hidden == 0) throw argument_error("config: hidden channels must be positive");
        if (kernel % 2 == 0) throw argument_error("config: kernel size must be odd, got " + std::to_string(kernel));
        if (!(dropout >= 0.0 && dropout < 1.0))
            throw argument_error("config: dropout must be in [0,1), got " + std::to_string(dropout));
        if (group == 0 || bands % group != 0)
            throw argument_error("config: band group " + std::to_string(group) + " must divide " +
                                 std::to_string(bands) + " bands");
        if (classes < 2) throw argument_error("config: need >= 2 classes, got " + std::to_string(classes));
    }
};

struct BiClstmModel {
    ModelConfig config;
    ClstmParams forward_params;
    ClstmParams backward_params;
    DenseParams head;

    // Traversal order is the checkpoint/optimizer parameter order.
    template <typename F>
    void for_each_param(F&& fn) {
        forward_params.for_each([&](const char* n, Tensor& t) { fn(std::string("fw.") + n, t); });
        backward_params.for_each([&](const char* n, Tensor& t) { fn(std::string("bw.") + n, t); });
        fn(std::string("head.weights"), head.weights);
        fn(std::string("head.bias"), head.bias);
    }
    template <typename F>
    void for_each_param(F&& fn) const {
        const_cast<BiClstmModel*>(this)->for_each_param(
            [&](const std::string& n, Tensor& t) { fn(n, static_cast<const Tensor&>(t)); });
    }
};

namespace detail {

// Uniform in +-sqrt(6/(fan_in+fan_out)); biases stay zero.
inline void glorot_fill(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
}

inline void init_clstm(ClstmParams& p, std::size_t kernel, Rng& rng) {
    p.for_each([&](const char* name, Tensor& t) {
        if (name[0] != 'w') return;
        const std::size_t taps = kernel * kernel;
        glorot_fill(t, t.dim(1) * taps, t.dim(0) * taps, rng);
    });
}

} // namespace detail

inline BiClstmModel init_model(const ModelConfig& config, Rng& rng) {
    config.validate();
    BiClstmModel model;
    model.config = config;
    model.forward_params = make_clstm_params(config.group, config.hidden, config.kernel);
    model.backward_params = make_clstm_params(config.group, config.hidden, config.kernel);
    detail::init_clstm(model.forward_params, config.kernel, rng);
    detail::init_clstm(model.backward_params, config.kernel, rng);
    model.head.weights = Tensor(Shape{config.classes, config.feature_len()});
    model.head.bias = Tensor(Shape{config.classes});
    detail::glorot_fill(model.head.weights, config.feature_len(), config.classes, rng);
    return model;
}

// Everything model_backward needs, per branch: the recurrence tape plus the
// pooling/dropout records of each emitted hidden state.
struct BranchTape {
    StepTape steps;
    std::vector<Tensor> hidden;
    std::vector<PoolTape> pool;
    std::vector<Tensor> pooled;       // pre-dropout pooled states
    std::vector<Tensor> dropout_mask; // multiplier masks
};

struct ModelTape {
    std::vector<Tensor> input;  // the sample's steps, in band order
    BranchTape fw, bw;
    Tensor feature;
};

struct ModelForward {
    Tensor logits;
    ModelTape tape;
};

struct ModelGrads {
    ClstmParams fw, bw;
    DenseParams head;
    std::vector<Tensor> input; // d loss / d sample steps, in band order

    template <typename F>
    void for_each_param(F&& fn) {
        fw.for_each([&](const char* n, Tensor& t) { fn(std::string("fw.") + n, t); });
        bw.for_each([&](const char* n, Tensor& t) { fn(std::string("bw.") + n, t); });
        fn(std::string("head.weights"), head.weights);
        fn(std::string("head.bias"), head.bias);
    }
};

namespace detail {

inline void check_sample(const PatchSequence& sample, const ModelConfig& cfg) {
    if (sample.steps.size() != cfg.steps())
        throw shape_error("sample has " + std::to_string(sample.steps.size()) + " steps, config expects " +
                          std::to_string(cfg.steps()));
    const Shape expect{cfg.group, cfg.patch, cfg.patch};
    if (sample.steps[0].shape() != expect)
        throw shape_error("sample step shape " + shape_str(sample.steps[0].shape()) + ", config expects " +
                          shape_str(expect));
}

inline BranchTape run_branch(const std::vector<Tensor>& seq, const ClstmParams& params, double dropout,
                             Rng& rng, bool training) {
    BranchTape tape;
    LayerForward fwd = clstm_layer_forward(seq, params);
    tape.steps = std::move(fwd.tape);
    tape.hidden = std::move(fwd.hidden);
    tape.pool.reserve(tape.hidden.size());
    tape.pooled.reserve(tape.hidden.size());
    tape.dropout_mask.reserve(tape.hidden.size());
    for (Tensor& h : tape.hidden) {
        auto [pooled, ptape] = maxpool2x2_forward(h);
        auto [dropped, mask] = dropout_forward(pooled, dropout, rng, training);
        tape.pool.push_back(std::move(ptape));
        tape.pooled.push_back(std::move(dropped));
        tape.dropout_mask.push_back(std::move(mask));
    }
    return tape;
}

inline void append_flat(Tensor& feature, std::size_t& off, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) feature[off + i] = t[i];
    off += t.size();
}

} // namespace detail

// Forward branch consumes x^1..x^L, backward branch x^L..x^1, both from zero
// states. Features concatenate in processing order: all forward states, then
// all backward states (or just the final state of each, per feature_mode).
// Inference (training=false) never touches the rng.
inline ModelForward model_forward(const PatchSequence& sample, const BiClstmModel& model, Rng& rng,
                                  bool training) {
    const ModelConfig& cfg = model.config;
    detail::check_sample(sample, cfg);

    ModelForward out;
    out.tape.input = sample.steps;

    std::vector<Tensor> reversed(sample.steps.rbegin(), sample.steps.rend());
    out.tape.fw = detail::run_branch(sample.steps, model.forward_params, cfg.dropout, rng, training);
    out.tape.bw = detail::run_branch(reversed, model.backward_params, cfg.dropout, rng, training);
    if (!cfg.bidirectional)
        for (Tensor& t : out.tape.bw.pooled) t = Tensor(t.shape());

    Tensor feature(Shape{cfg.feature_len()});
    std::size_t off = 0;
    if (cfg.feature_mode == FeatureMode::full_sequence) {
        for (const Tensor& t : out.tape.fw.pooled) detail::append_flat(feature, off, t);
        for (const Tensor& t : out.tape.bw.pooled) detail::append_flat(feature, off, t);
    } else {
        detail::append_flat(feature, off, out.tape.fw.pooled.back());
        detail::append_flat(feature, off, out.tape.bw.pooled.back());
    }
    out.tape.feature = feature;
    out.logits = dense_forward(feature, model.head);
    return out;
}

namespace detail {

inline std::vector<Tensor> branch_backward(const BranchTape& tape, const ClstmParams& params,
                                           const std::vector<Tensor>& grad_pooled, ClstmParams& grads_out) {
    std::vector<Tensor> grad_hidden(tape.hidden.size());
    for (std::size_t k = 0; k < tape.hidden.size(); ++k) {
        Tensor g = dropout_backward(tape.dropout_mask[k], grad_pooled[k]);
        grad_hidden[k] = maxpool2x2_backward(tape.pool[k], g);
    }
    LayerBackward back = clstm_layer_backward(tape.steps, params, grad_hidden);
    grads_out = std::move(back.grads);
    return std::move(back.grad_input);
}

} // namespace detail

inline ModelGrads model_backward(const ModelTape& tape, const BiClstmModel& model, const Tensor& grad_logits) {
    const ModelConfig& cfg = model.config;
    if (tape.feature.size() != cfg.feature_len())
        throw argument_error("model_backward: tape does not match model config");

    ModelGrads grads;
    auto [grad_feature, gw, gb] = dense_backward(tape.feature, model.head, grad_logits);
    grads.head.weights = std::move(gw);
    grads.head.bias = std::move(gb);

    const std::size_t L = cfg.steps();
    const Shape pooled_shape{cfg.hidden, cfg.pooled(), cfg.pooled()};
    const std::size_t per_state = shape_numel(pooled_shape);

    auto slice = [&](std::size_t off) {
        Tensor t(pooled_shape);
        for (std::size_t i = 0; i < per_state; ++i) t[i] = grad_feature[off + i];
        return t;
    };

    std::vector<Tensor> grad_fw(L, Tensor(pooled_shape)), grad_bw(L, Tensor(pooled_shape));
    if (cfg.feature_mode == FeatureMode::full_sequence) {
        for (std::size_t k = 0; k < L; ++k) grad_fw[k] = slice(k * per_state);
        for (std::size_t k = 0; k < L; ++k) grad_bw[k] = slice((L + k) * per_state);
    } else {
        grad_fw[L - 1] = slice(0);
        grad_bw[L - 1] = slice(per_state);
    }
    if (!cfg.bidirectional)
        for (Tensor& t : grad_bw) t = Tensor(t.shape());

    std::vector<Tensor> gin_fw = detail::branch_backward(tape.fw, model.forward_params, grad_fw, grads.fw);
    std::vector<Tensor> gin_bw = detail::branch_backward(tape.bw, model.backward_params, grad_bw, grads.bw);

    grads.input = std::move(gin_fw);
    for (std::size_t k = 0; k < L; ++k) add_inplace(grads.input[k], gin_bw[L - 1 - k]);
    return grads;
}

struct Prediction {
    std::size_t class_index; // 0-based; raster label = class_index + 1
    Tensor probs;
};

// Deterministic inference: dropout off, no rng consumption, ties broken by the
// lowest class index.
inline Prediction predict(const PatchSequence& sample, const BiClstmModel& model) {
    Rng unused(0);
    ModelForward fwd = model_forward(sample, model, unused, false);
    const Tensor& z = fwd.logits;
    double zmax = z[0];
    std::size_t arg = 0;
    for (std::size_t i = 1; i < z.size(); ++i)
        if (z[i] > zmax) {
            zmax = z[i];
            arg = i;
        }
    double denom = 0.0;
    Tensor probs(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        probs[i] = std::exp(z[i] - zmax);
        denom += probs[i];
    }
    for (std::size_t i = 0; i < z.size(); ++i) probs[i] /= denom;
    return {arg, std::move(probs)};
}

} // namespace biclstm

#endif
