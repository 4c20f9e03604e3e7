#ifndef BICLSTM_NN_OPS_HPP
#define BICLSTM_NN_OPS_HPP

#include <cmath>
#include <cstddef>
#include <tuple>
#include <vector>

#include "biclstm/errors.hpp"
#include "biclstm/rng.hpp"
#include "biclstm/tensor.hpp"

// Non-recurrent operators with hand-written exact backward passes:
// same-padded 2-D cross-correlation, 2x2 max-pooling, inverted dropout,
// dense layer, softmax cross-entropy.

namespace biclstm {

struct ConvKernel {
    Tensor weights; // [out_channels, in_channels, kh, kw]
    Tensor bias;    // [out_channels]

    std::size_t out_channels() const { return weights.dim(0); }
    std::size_t in_channels() const { return weights.dim(1); }
};

inline void validate_conv_weights(const Tensor& w) {
    if (w.ndim() != 4)
        throw shape_error("conv weights must be rank 4 [out,in,kh,kw], got " + shape_str(w.shape()));
    if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0)
        throw shape_error("conv kernel spatial dims must be odd for same-padding, got " +
                          shape_str(w.shape()));
}

// Cross-correlation (no kernel flip), zero-fill same-padding. Spatial dims are
// preserved; out[oc](y,x) = sum_{ic,dy,dx} w[oc][ic](dy,dx) * in[ic](y+dy-ph, x+dx-pw).
inline Tensor conv2d_nobias(const Tensor& input, const Tensor& weights) {
    validate_conv_weights(weights);
    if (input.ndim() != 3)
        throw shape_error("conv input must be rank 3 [c,h,w], got " + shape_str(input.shape()));
    if (input.dim(0) != weights.dim(1))
        throw shape_error("conv channel mismatch: input " + shape_str(input.shape()) +
                          " vs weights " + shape_str(weights.shape()));

    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);

    Tensor out(Shape{cout, h, w});
    const double* in = input.data();
    const double* wt = weights.data();
    double* o = out.data();

    for (std::size_t oc = 0; oc < cout; ++oc) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::size_t ic = 0; ic < cin; ++ic) {
                    const double* in_c = in + ic * h * w;
                    const double* w_c = wt + ((oc * cin + ic) * kh) * kw;
                    for (std::size_t dy = 0; dy < kh; ++dy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + dy) - ph;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t dx = 0; dx < kw; ++dx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + dx) - pw;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += w_c[dy * kw + dx] * in_c[iy * static_cast<std::ptrdiff_t>(w) + ix];
                        }
                    }
                }
                o[(oc * h + y) * w + x] = acc;
            }
        }
    }
    return out;
}

// t[c](y,x) += bias[c]; bias addition is an explicit shaped op, never broadcast.
inline void add_channel_bias_inplace(Tensor& t, const Tensor& bias) {
    if (t.ndim() != 3 || bias.ndim() != 1 || bias.dim(0) != t.dim(0))
        throw shape_error("channel bias mismatch: tensor " + shape_str(t.shape()) +
                          " vs bias " + shape_str(bias.shape()));
    const std::size_t plane = t.dim(1) * t.dim(2);
    double* d = t.data();
    for (std::size_t c = 0; c < t.dim(0); ++c) {
        const double b = bias[c];
        for (std::size_t i = 0; i < plane; ++i) d[c * plane + i] += b;
    }
}

// grad_bias[c] = sum over spatial positions of grad_out[c].
inline Tensor channel_bias_grad(const Tensor& grad_out) {
    if (grad_out.ndim() != 3)
        throw shape_error("channel_bias_grad expects rank 3, got " + shape_str(grad_out.shape()));
    Tensor g(Shape{grad_out.dim(0)});
    const std::size_t plane = grad_out.dim(1) * grad_out.dim(2);
    const double* d = grad_out.data();
    for (std::size_t c = 0; c < grad_out.dim(0); ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += d[c * plane + i];
        g[c] = s;
    }
    return g;
}

inline Tensor conv2d_forward(const Tensor& input, const ConvKernel& kernel) {
    Tensor out = conv2d_nobias(input, kernel.weights);
    add_channel_bias_inplace(out, kernel.bias);
    return out;
}

// Exact gradients of conv2d_nobias; the loops mirror the forward pass.
inline void conv2d_backward_nobias(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                                   Tensor& grad_input, Tensor& grad_weights) {
    validate_conv_weights(weights);
    if (input.ndim() != 3 || input.dim(0) != weights.dim(1))
        throw shape_error("conv backward: input " + shape_str(input.shape()) +
                          " incompatible with weights " + shape_str(weights.shape()));
    Shape expect{weights.dim(0), input.dim(1), input.dim(2)};
    if (grad_out.shape() != expect)
        throw shape_error("conv backward: grad_out " + shape_str(grad_out.shape()) +
                          " expected " + shape_str(expect));

    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);

    grad_input = Tensor(input.shape());
    grad_weights = Tensor(weights.shape());
    const double* in = input.data();
    const double* wt = weights.data();
    const double* go = grad_out.data();
    double* gi = grad_input.data();
    double* gw = grad_weights.data();

    for (std::size_t oc = 0; oc < cout; ++oc) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double g = go[(oc * h + y) * w + x];
                if (g == 0.0) continue;
                for (std::size_t ic = 0; ic < cin; ++ic) {
                    const double* in_c = in + ic * h * w;
                    double* gi_c = gi + ic * h * w;
                    const std::size_t wbase = ((oc * cin + ic) * kh) * kw;
                    for (std::size_t dy = 0; dy < kh; ++dy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + dy) - ph;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t dx = 0; dx < kw; ++dx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + dx) - pw;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            const std::size_t ii = iy * static_cast<std::ptrdiff_t>(w) + ix;
                            gw[wbase + dy * kw + dx] += g * in_c[ii];
                            gi_c[ii] += g * wt[wbase + dy * kw + dx];
                        }
                    }
                }
            }
        }
    }
}

inline std::tuple<Tensor, Tensor, Tensor> conv2d_backward(const Tensor& input, const ConvKernel& kernel,
                                                          const Tensor& grad_out) {
    Tensor grad_input, grad_weights;
    conv2d_backward_nobias(input, kernel.weights, grad_out, grad_input, grad_weights);
    return {std::move(grad_input), std::move(grad_weights), channel_bias_grad(grad_out)};
}

// Argmax bookkeeping for the pooling backward pass. Ties break on the first
// position in row-major window scan.
struct PoolTape {
    Shape in_shape;
    std::vector<std::size_t> argmax; // flat index into the input, one per output entry
};

inline std::pair<Tensor, PoolTape> maxpool2x2_forward(const Tensor& input) {
    if (input.ndim() != 3)
        throw shape_error("maxpool input must be rank 3 [c,h,w], got " + shape_str(input.shape()));
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw shape_error("maxpool2x2 requires even spatial dims, got " + shape_str(input.shape()));

    Tensor out(Shape{c, h / 2, w / 2});
    PoolTape tape{input.shape(), std::vector<std::size_t>(out.size())};
    const double* in = input.data();
    double* o = out.data();

    std::size_t oi = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = ch * h * w;
        for (std::size_t y = 0; y < h; y += 2) {
            for (std::size_t x = 0; x < w; x += 2, ++oi) {
                std::size_t best = base + y * w + x;
                double bv = in[best];
                const std::size_t cand[3] = {base + y * w + x + 1, base + (y + 1) * w + x,
                                             base + (y + 1) * w + x + 1};
                for (std::size_t k = 0; k < 3; ++k) {
                    if (in[cand[k]] > bv) {
                        bv = in[cand[k]];
                        best = cand[k];
                    }
                }
                o[oi] = bv;
                tape.argmax[oi] = best;
            }
        }
    }
    return {std::move(out), std::move(tape)};
}

inline Tensor maxpool2x2_backward(const PoolTape& tape, const Tensor& grad_out) {
    if (grad_out.size() != tape.argmax.size())
        throw shape_error("maxpool backward: grad_out " + shape_str(grad_out.shape()) +
                          " does not match tape with " + std::to_string(tape.argmax.size()) + " entries");
    Tensor grad_input(tape.in_shape);
    for (std::size_t i = 0; i < grad_out.size(); ++i) grad_input[tape.argmax[i]] += grad_out[i];
    return grad_input;
}

// Inverted dropout: each entry zeroed with probability rate, survivors scaled
// by 1/(1-rate), so inference is an identity map. The returned mask holds the
// per-entry multiplier and drives the backward pass.
inline std::pair<Tensor, Tensor> dropout_forward(const Tensor& input, double rate, Rng& rng, bool training) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw argument_error("dropout rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) {
        return {input, Tensor::full(input.shape(), 1.0)};
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor mask(input.shape());
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        const double m = rng.next_double() < rate ? 0.0 : keep_scale;
        mask[i] = m;
        out[i] = input[i] * m;
    }
    return {std::move(out), std::move(mask)};
}

inline Tensor dropout_backward(const Tensor& mask, const Tensor& grad_out) {
    return hadamard(mask, grad_out);
}

struct DenseParams {
    Tensor weights; // [out_dim, in_dim]
    Tensor bias;    // [out_dim]

    std::size_t out_dim() const { return weights.dim(0); }
    std::size_t in_dim() const { return weights.dim(1); }
};

inline Tensor dense_forward(const Tensor& input, const DenseParams& params) {
    if (input.ndim() != 1 || input.dim(0) != params.in_dim())
        throw shape_error("dense: input " + shape_str(input.shape()) + " vs weights " +
                          shape_str(params.weights.shape()));
    const std::size_t out = params.out_dim(), in = params.in_dim();
    Tensor y(Shape{out});
    const double* w = params.weights.data();
    const double* x = input.data();
    for (std::size_t o = 0; o < out; ++o) {
        double acc = params.bias[o];
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
    return y;
}

inline std::tuple<Tensor, Tensor, Tensor> dense_backward(const Tensor& input, const DenseParams& params,
                                                         const Tensor& grad_out) {
    if (grad_out.ndim() != 1 || grad_out.dim(0) != params.out_dim())
        throw shape_error("dense backward: grad_out " + shape_str(grad_out.shape()) + " vs weights " +
                          shape_str(params.weights.shape()));
    const std::size_t out = params.out_dim(), in = params.in_dim();
    Tensor gx(Shape{in});
    Tensor gw(params.weights.shape());
    Tensor gb = grad_out;
    const double* w = params.weights.data();
    const double* x = input.data();
    double* gwp = gw.data();
    for (std::size_t o = 0; o < out; ++o) {
        const double g = grad_out[o];
        const double* row = w + o * in;
        double* grow = gwp + o * in;
        for (std::size_t i = 0; i < in; ++i) {
            grow[i] = g * x[i];
            gx[i] += g * row[i];
        }
    }
    return {std::move(gx), std::move(gw), std::move(gb)};
}

struct SoftmaxXent {
    double loss;
    Tensor probs;
    Tensor grad_logits; // probs - onehot(true_class)
};

// Max-shifted softmax with loss computed as logsumexp(z) - z_t, stable for
// arbitrarily large logits.
inline SoftmaxXent softmax_xent(const Tensor& logits, std::size_t true_class) {
    if (logits.ndim() != 1)
        throw shape_error("softmax_xent expects a vector, got " + shape_str(logits.shape()));
    const std::size_t c = logits.dim(0);
    if (true_class >= c)
        throw argument_error("softmax_xent: class " + std::to_string(true_class) +
                             " out of range for " + std::to_string(c) + " logits");
    double zmax = logits[0];
    for (std::size_t i = 1; i < c; ++i) zmax = std::max(zmax, logits[i]);
    double denom = 0.0;
    Tensor probs(Shape{c});
    for (std::size_t i = 0; i < c; ++i) {
        probs[i] = std::exp(logits[i] - zmax);
        denom += probs[i];
    }
    for (std::size_t i = 0; i < c; ++i) probs[i] /= denom;
    SoftmaxXent r{std::log(denom) + zmax - logits[true_class], probs, probs};
    r.grad_logits[true_class] -= 1.0;
    return r;
}

} // namespace biclstm

#endif
