#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "biclstm/clstm.hpp"
#include "biclstm/rng.hpp"
#include "oracles.hpp"

using namespace biclstm;

namespace {

ClstmParams random_params(Rng& rng, std::size_t cin, std::size_t hidden, std::size_t k, double scale = 0.5) {
    ClstmParams p = make_clstm_params(cin, hidden, k);
    p.for_each([&](const char*, Tensor& t) { t = rng_uniform(rng, t.shape(), -scale, scale); });
    return p;
}

// 1x1 spatial, 1 channel, 1x1 kernels: the cell degenerates to a scalar LSTM.
ClstmParams scalar_params(const oracles::ScalarLstm& s) {
    ClstmParams p = make_clstm_params(1, 1, 1);
    p.w_hf[0] = s.w_hf; p.w_xf[0] = s.w_xf;
    p.w_hi[0] = s.w_hi; p.w_xi[0] = s.w_xi;
    p.w_hc[0] = s.w_hc; p.w_xc[0] = s.w_xc;
    p.w_ho[0] = s.w_ho; p.w_xo[0] = s.w_xo;
    p.b_f[0] = s.b_f; p.b_i[0] = s.b_i; p.b_c[0] = s.b_c; p.b_o[0] = s.b_o;
    return p;
}

std::vector<Tensor> scalar_seq(const std::vector<double>& xs) {
    std::vector<Tensor> seq;
    for (double x : xs) seq.push_back(Tensor({1, 1, 1}, {x}));
    return seq;
}

} // namespace

TEST_CASE("zero parameters force the closed-form step") {
    Rng rng(1);
    ClstmParams p = make_clstm_params(2, 3, 3);
    Tensor x = rng_uniform(rng, {2, 4, 4}, -1.0, 1.0);
    ClstmState prev = zero_state(3, 4, 4);
    auto [state, entry] = clstm_step(x, prev, p);
    for (std::size_t i = 0; i < entry.f.size(); ++i) {
        CHECK(entry.f[i] == 0.5);
        CHECK(entry.i[i] == 0.5);
        CHECK(entry.o[i] == 0.5);
        CHECK(entry.c_tilde[i] == 0.0);
        CHECK(state.c[i] == 0.0);
        CHECK(state.h[i] == 0.0);
    }
}

TEST_CASE("saturated forget gate copies the cell state") {
    Rng rng(2);
    ClstmParams p = make_clstm_params(1, 2, 3);
    for (std::size_t i = 0; i < p.b_f.size(); ++i) p.b_f[i] = 50.0;  // F -> 1
    for (std::size_t i = 0; i < p.b_i.size(); ++i) p.b_i[i] = -50.0; // I -> 0
    Tensor c0 = rng_uniform(rng, {2, 4, 4}, -1.0, 1.0);
    ClstmState prev{Tensor({2, 4, 4}), c0};
    ClstmState state = prev;
    std::vector<Tensor> seq;
    for (int k = 0; k < 4; ++k) seq.push_back(rng_uniform(rng, {1, 4, 4}, -1.0, 1.0));
    for (const Tensor& x : seq) {
        auto [next, entry] = clstm_step(x, state, p);
        state = next;
        CHECK(max_abs_diff(state.c, c0) < 1e-12); // "keep the whole information"
    }
}

TEST_CASE("gates stay strictly inside their ranges") {
    Rng rng(3);
    // scales chosen so pre-activations stay below tanh's saturation to 1.0
    ClstmParams p = random_params(rng, 2, 3, 3, 0.2);
    Tensor x = rng_uniform(rng, {2, 4, 4}, -1.5, 1.5);
    ClstmState prev{rng_uniform(rng, {3, 4, 4}, -1.0, 1.0), rng_uniform(rng, {3, 4, 4}, -1.0, 1.0)};
    auto [state, e] = clstm_step(x, prev, p);
    for (std::size_t i = 0; i < e.f.size(); ++i) {
        CHECK((e.f[i] > 0.0 && e.f[i] < 1.0));
        CHECK((e.i[i] > 0.0 && e.i[i] < 1.0));
        CHECK((e.o[i] > 0.0 && e.o[i] < 1.0));
        CHECK((e.c_tilde[i] > -1.0 && e.c_tilde[i] < 1.0));
    }
}

TEST_CASE("step rejects mismatched shapes") {
    ClstmParams p = make_clstm_params(2, 3, 3);
    CHECK_THROWS_AS(clstm_step(Tensor({1, 4, 4}), zero_state(3, 4, 4), p), shape_error);
    CHECK_THROWS_AS(clstm_step(Tensor({2, 4, 4}), zero_state(3, 6, 6), p), shape_error);
}

TEST_CASE("scalar configuration equals the textbook LSTM") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        oracles::ScalarLstm s{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                              rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                              rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                              rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        std::vector<double> xs;
        for (int k = 0; k < 4; ++k) xs.push_back(rng.uniform(-2, 2));

        oracles::ScalarLstmTrace expect = oracles::scalar_lstm_run(s, xs);
        LayerForward got = clstm_layer_forward(scalar_seq(xs), scalar_params(s));
        for (std::size_t k = 0; k < xs.size(); ++k) {
            CHECK(std::abs(got.hidden[k][0] - expect.h[k]) < 1e-12);
            CHECK(std::abs(got.tape[k].c[0] - expect.c[k]) < 1e-12);
        }
    }
}

TEST_CASE("layer base cases") {
    Rng rng(4);
    ClstmParams p = random_params(rng, 2, 2, 3);
    Tensor x = rng_uniform(rng, {2, 4, 4}, -1.0, 1.0);

    // l = 1 equals a single step
    LayerForward one = clstm_layer_forward({x}, p);
    auto [state, entry] = clstm_step(x, zero_state(2, 4, 4), p);
    CHECK(max_abs_diff(one.hidden[0], state.h) == 0.0);

    // all-zero params propagate the zero case
    ClstmParams zeros = make_clstm_params(2, 2, 3);
    LayerForward z = clstm_layer_forward({x, x, x}, zeros);
    for (const Tensor& h : z.hidden) CHECK(h.sqnorm() == 0.0);

    CHECK_THROWS_AS(clstm_layer_forward({}, p), argument_error);
    CHECK_THROWS_AS(clstm_layer_forward({x, Tensor({2, 6, 6})}, p), shape_error);
}

TEST_CASE("layer backward trivial cases") {
    Rng rng(5);
    ClstmParams p = random_params(rng, 1, 2, 3);
    std::vector<Tensor> seq;
    for (int k = 0; k < 3; ++k) seq.push_back(rng_uniform(rng, {1, 4, 4}, -1.0, 1.0));
    LayerForward fwd = clstm_layer_forward(seq, p);

    // zero grad_hidden -> all grads zero
    std::vector<Tensor> zero_grads(3, Tensor({2, 4, 4}));
    LayerBackward back = clstm_layer_backward(fwd.tape, p, zero_grads);
    back.grads.for_each([&](const char*, Tensor& t) { CHECK(t.sqnorm() == 0.0); });
    for (const Tensor& g : back.grad_input) CHECK(g.sqnorm() == 0.0);

    // length mismatch
    std::vector<Tensor> wrong(2, Tensor({2, 4, 4}));
    CHECK_THROWS_AS(clstm_layer_backward(fwd.tape, p, wrong), argument_error);
}

namespace {

// scalar objective: sum over steps of sum(h^k . g^k)
double layer_loss(const std::vector<Tensor>& seq, const ClstmParams& p, const std::vector<Tensor>& gs) {
    LayerForward fwd = clstm_layer_forward(seq, p);
    double s = 0.0;
    for (std::size_t k = 0; k < gs.size(); ++k)
        for (std::size_t i = 0; i < gs[k].size(); ++i) s += fwd.hidden[k][i] * gs[k][i];
    return s;
}

void check_bptt_against_fd(std::size_t length, std::uint64_t seed) {
    Rng rng(seed);
    ClstmParams p = random_params(rng, 2, 2, 3);
    std::vector<Tensor> seq;
    for (std::size_t k = 0; k < length; ++k) seq.push_back(rng_uniform(rng, {2, 4, 4}, -1.0, 1.0));
    std::vector<Tensor> gs;
    for (std::size_t k = 0; k < length; ++k) gs.push_back(rng_uniform(rng, {2, 4, 4}, -1.0, 1.0));

    LayerForward fwd = clstm_layer_forward(seq, p);
    LayerBackward back = clstm_layer_backward(fwd.tape, p, gs);

    auto fd_check = [&](Tensor& target, const Tensor& analytic) {
        for (std::size_t i = 0; i < target.size(); i += 3) { // stride keeps the test fast
            const double fd = oracles::fd_derivative(
                [&](double v) {
                    const double orig = target[i];
                    target[i] = v;
                    const double l = layer_loss(seq, p, gs);
                    target[i] = orig;
                    return l;
                },
                target[i]);
            CHECK(oracles::rel_err(analytic[i], fd) < 1e-5);
        }
    };

    std::vector<std::pair<Tensor*, Tensor*>> blocks;
    Tensor* analytic[12];
    std::size_t bi = 0;
    back.grads.for_each([&](const char*, Tensor& t) { analytic[bi++] = &t; });
    bi = 0;
    p.for_each([&](const char*, Tensor& t) { blocks.push_back({&t, analytic[bi++]}); });
    for (auto& [param, grad] : blocks) fd_check(*param, *grad);
    for (std::size_t k = 0; k < length; ++k) fd_check(seq[k], back.grad_input[k]);
}

} // namespace

TEST_CASE("BPTT matches finite differences for lengths 1,2,3,5") {
    check_bptt_against_fd(1, 11);
    check_bptt_against_fd(2, 12);
    check_bptt_against_fd(3, 13);
    check_bptt_against_fd(5, 14);
}
