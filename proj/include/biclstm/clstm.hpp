#ifndef BICLSTM_CLSTM_HPP
#define BICLSTM_CLSTM_HPP

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "biclstm/nn_ops.hpp"
#include "biclstm/tensor.hpp"

/*
 * Convolutional LSTM cell and its unrolled layer.
 *
 * One step, all gate transforms 2-D same-padded convolutions:
 *
 *   F = sigmoid(W_hf * h_prev + W_xf * x + b_f)    forget gate
 *   I = sigmoid(W_hi * h_prev + W_xi * x + b_i)    input gate
 *   G = tanh   (W_hc * h_prev + W_xc * x + b_c)    candidate cell
 *   C = F . C_prev + I . G                         cell state
 *   O = sigmoid(W_ho * h_prev + W_xo * x + b_o)    output gate
 *   h = O . tanh(C)
 *
 * '*' is convolution, '.' elementwise product. No peephole connections.
 * The backward pass is hand-written reverse mode through both the h- and
 * C-recurrences (full BPTT, no truncation).
 */

namespace biclstm {

struct ClstmParams {
    // Hidden-side kernels [hidden, hidden, k, k]; input-side [hidden, c_in, k, k].
    Tensor w_hf, w_xf, w_hi, w_xi, w_hc, w_xc, w_ho, w_xo;
    Tensor b_f, b_i, b_c, b_o; // [hidden]

    std::size_t hidden_channels() const { return w_hf.dim(0); }
    std::size_t input_channels() const { return w_xf.dim(1); }

    // Fixed traversal order shared by init, optimizers, and checkpoints.
    template <typename F>
    void for_each(F&& fn) {
        fn("w_hf", w_hf); fn("w_xf", w_xf);
        fn("w_hi", w_hi); fn("w_xi", w_xi);
        fn("w_hc", w_hc); fn("w_xc", w_xc);
        fn("w_ho", w_ho); fn("w_xo", w_xo);
        fn("b_f", b_f); fn("b_i", b_i); fn("b_c", b_c); fn("b_o", b_o);
    }
    template <typename F>
    void for_each(F&& fn) const {
        const_cast<ClstmParams*>(this)->for_each([&](const char* n, Tensor& t) {
            fn(n, static_cast<const Tensor&>(t));
        });
    }
};

inline ClstmParams make_clstm_params(std::size_t input_channels, std::size_t hidden_channels,
                                     std::size_t kernel) {
    if (kernel % 2 == 0) throw argument_error("clstm kernel size must be odd, got " + std::to_string(kernel));
    ClstmParams p;
    const Shape hk{hidden_channels, hidden_channels, kernel, kernel};
    const Shape xk{hidden_channels, input_channels, kernel, kernel};
    const Shape b{hidden_channels};
    p.w_hf = Tensor(hk); p.w_hi = Tensor(hk); p.w_hc = Tensor(hk); p.w_ho = Tensor(hk);
    p.w_xf = Tensor(xk); p.w_xi = Tensor(xk); p.w_xc = Tensor(xk); p.w_xo = Tensor(xk);
    p.b_f = Tensor(b); p.b_i = Tensor(b); p.b_c = Tensor(b); p.b_o = Tensor(b);
    return p;
}

struct ClstmState {
    Tensor h; // [hidden, p, p]
    Tensor c; // same shape as h
};

inline ClstmState zero_state(std::size_t hidden_channels, std::size_t height, std::size_t width) {
    return {Tensor(Shape{hidden_channels, height, width}), Tensor(Shape{hidden_channels, height, width})};
}

// Per-step activations cached for BPTT.
struct StepEntry {
    Tensor x, h_prev, c_prev;
    Tensor f, i, o, c_tilde, c, tanh_c;
};

using StepTape = std::vector<StepEntry>;

inline std::pair<ClstmState, StepEntry> clstm_step(const Tensor& x, const ClstmState& prev,
                                                   const ClstmParams& params) {
    if (x.ndim() != 3 || x.dim(0) != params.input_channels())
        throw shape_error("clstm_step: input " + shape_str(x.shape()) + " vs input kernels " +
                          shape_str(params.w_xf.shape()));
    if (prev.h.ndim() != 3 || prev.h.dim(1) != x.dim(1) || prev.h.dim(2) != x.dim(2))
        throw shape_error("clstm_step: state " + shape_str(prev.h.shape()) +
                          " spatial dims do not match input " + shape_str(x.shape()));
    require_same_shape(prev.h, prev.c, "clstm_step state");

    auto gate = [&](const Tensor& w_h, const Tensor& w_x, const Tensor& b) {
        Tensor a = conv2d_nobias(prev.h, w_h);
        add_inplace(a, conv2d_nobias(x, w_x));
        add_channel_bias_inplace(a, b);
        return a;
    };

    StepEntry e;
    e.x = x;
    e.h_prev = prev.h;
    e.c_prev = prev.c;
    e.f = map_sigmoid(gate(params.w_hf, params.w_xf, params.b_f));
    e.i = map_sigmoid(gate(params.w_hi, params.w_xi, params.b_i));
    e.c_tilde = map_tanh(gate(params.w_hc, params.w_xc, params.b_c));
    e.c = add(hadamard(e.f, prev.c), hadamard(e.i, e.c_tilde));
    e.o = map_sigmoid(gate(params.w_ho, params.w_xo, params.b_o));
    e.tanh_c = map_tanh(e.c);

    ClstmState next{hadamard(e.o, e.tanh_c), e.c};
    return {std::move(next), std::move(e)};
}

struct LayerForward {
    std::vector<Tensor> hidden; // h^1 .. h^l
    StepTape tape;
};

inline LayerForward clstm_layer_forward(const std::vector<Tensor>& seq, const ClstmParams& params,
                                        const ClstmState& initial) {
    if (seq.empty()) throw argument_error("clstm_layer_forward: empty sequence");
    for (std::size_t k = 1; k < seq.size(); ++k)
        if (seq[k].shape() != seq[0].shape())
            throw shape_error("clstm_layer_forward: step " + std::to_string(k) + " shape " +
                              shape_str(seq[k].shape()) + " differs from step 0 " +
                              shape_str(seq[0].shape()));

    LayerForward out;
    out.hidden.reserve(seq.size());
    out.tape.reserve(seq.size());
    ClstmState state = initial;
    for (const Tensor& x : seq) {
        auto [next, entry] = clstm_step(x, state, params);
        state = std::move(next);
        out.hidden.push_back(state.h);
        out.tape.push_back(std::move(entry));
    }
    return out;
}

// State is zero-initialized unless the caller overrides.
inline LayerForward clstm_layer_forward(const std::vector<Tensor>& seq, const ClstmParams& params) {
    if (seq.empty()) throw argument_error("clstm_layer_forward: empty sequence");
    return clstm_layer_forward(seq, params,
                               zero_state(params.hidden_channels(), seq[0].dim(1), seq[0].dim(2)));
}

struct LayerBackward {
    ClstmParams grads;             // same shapes as the params
    std::vector<Tensor> grad_input; // one per step
};

// Full backpropagation through time. grad_hidden[k] is dLoss/dh^k from outside
// the recurrence (zero tensors for unused steps); the recursion adds the
// contributions flowing through h^{k+1} and C^{k+1}.
inline LayerBackward clstm_layer_backward(const StepTape& tape, const ClstmParams& params,
                                          const std::vector<Tensor>& grad_hidden) {
    if (tape.empty()) throw argument_error("clstm_layer_backward: empty tape");
    if (grad_hidden.size() != tape.size())
        throw argument_error("clstm_layer_backward: tape has " + std::to_string(tape.size()) +
                             " steps but grad_hidden has " + std::to_string(grad_hidden.size()));

    LayerBackward out;
    out.grads = make_clstm_params(params.input_channels(), params.hidden_channels(), params.w_hf.dim(2));
    out.grad_input.resize(tape.size());

    Tensor gh_rec(tape.back().h_prev.shape());
    Tensor gc_rec(tape.back().c_prev.shape());

    Tensor gi_tmp, gw_tmp;
    for (std::size_t k = tape.size(); k-- > 0;) {
        const StepEntry& e = tape[k];
        require_same_shape(grad_hidden[k], e.h_prev, "clstm_layer_backward grad_hidden");

        Tensor gh = add(grad_hidden[k], gh_rec);
        // h = O . tanh(C)
        Tensor g_o = hadamard(gh, e.tanh_c);
        Tensor gc = gc_rec;
        for (std::size_t idx = 0; idx < gc.size(); ++idx)
            gc[idx] += gh[idx] * e.o[idx] * (1.0 - e.tanh_c[idx] * e.tanh_c[idx]);
        // C = F . C_prev + I . G
        Tensor g_f = hadamard(gc, e.c_prev);
        Tensor g_i = hadamard(gc, e.c_tilde);
        Tensor g_ct = hadamard(gc, e.i);
        gc_rec = hadamard(gc, e.f);

        // back through the activations to gate pre-activations
        for (std::size_t idx = 0; idx < g_f.size(); ++idx) {
            g_f[idx] *= e.f[idx] * (1.0 - e.f[idx]);
            g_i[idx] *= e.i[idx] * (1.0 - e.i[idx]);
            g_o[idx] *= e.o[idx] * (1.0 - e.o[idx]);
            g_ct[idx] *= 1.0 - e.c_tilde[idx] * e.c_tilde[idx];
        }

        Tensor gx(e.x.shape());
        gh_rec = Tensor(e.h_prev.shape());
        auto back_gate = [&](const Tensor& ga, const Tensor& w_h, const Tensor& w_x,
                             Tensor& gw_h, Tensor& gw_x, Tensor& gb) {
            conv2d_backward_nobias(e.h_prev, w_h, ga, gi_tmp, gw_tmp);
            add_inplace(gh_rec, gi_tmp);
            add_inplace(gw_h, gw_tmp);
            conv2d_backward_nobias(e.x, w_x, ga, gi_tmp, gw_tmp);
            add_inplace(gx, gi_tmp);
            add_inplace(gw_x, gw_tmp);
            add_inplace(gb, channel_bias_grad(ga));
        };
        back_gate(g_f, params.w_hf, params.w_xf, out.grads.w_hf, out.grads.w_xf, out.grads.b_f);
        back_gate(g_i, params.w_hi, params.w_xi, out.grads.w_hi, out.grads.w_xi, out.grads.b_i);
        back_gate(g_ct, params.w_hc, params.w_xc, out.grads.w_hc, out.grads.w_xc, out.grads.b_c);
        back_gate(g_o, params.w_ho, params.w_xo, out.grads.w_ho, out.grads.w_xo, out.grads.b_o);

        out.grad_input[k] = std::move(gx);
    }
    return out;
}

} // namespace biclstm

#endif
