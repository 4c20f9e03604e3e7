#ifndef BICLSTM_TESTS_ORACLES_HPP
#define BICLSTM_TESTS_ORACLES_HPP

// Independent reference implementations the tests check the library against.
// Everything here is written from the operation definitions directly and must
// stay decoupled from the library's implementation paths.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "biclstm/tensor.hpp"

namespace oracles {

// ---- same-padded cross-correlation via an explicitly padded copy ----------
// in: [cin][h][w] nested vectors; weights [cout][cin][kh][kw]; bias [cout].
using Vol = std::vector<std::vector<std::vector<double>>>;

inline Vol make_vol(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0) {
    return Vol(c, std::vector<std::vector<double>>(h, std::vector<double>(w, fill)));
}

inline Vol conv2d_loop(const Vol& in, const std::vector<Vol>& weights, const std::vector<double>& bias) {
    const std::size_t cin = in.size(), h = in[0].size(), w = in[0][0].size();
    const std::size_t cout = weights.size(), kh = weights[0][0].size(), kw = weights[0][0][0].size();
    const std::size_t ph = kh / 2, pw = kw / 2;

    Vol padded = make_vol(cin, h + 2 * ph, w + 2 * pw, 0.0);
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) padded[c][y + ph][x + pw] = in[c][y][x];

    Vol out = make_vol(cout, h, w, 0.0);
    for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = bias[oc];
                for (std::size_t ic = 0; ic < cin; ++ic)
                    for (std::size_t dy = 0; dy < kh; ++dy)
                        for (std::size_t dx = 0; dx < kw; ++dx)
                            acc += weights[oc][ic][dy][dx] * padded[ic][y + dy][x + dx];
                out[oc][y][x] = acc;
            }
    return out;
}

inline Vol vol_from_tensor(const biclstm::Tensor& t) {
    Vol v = make_vol(t.dim(0), t.dim(1), t.dim(2));
    std::size_t i = 0;
    for (std::size_t c = 0; c < t.dim(0); ++c)
        for (std::size_t y = 0; y < t.dim(1); ++y)
            for (std::size_t x = 0; x < t.dim(2); ++x) v[c][y][x] = t[i++];
    return v;
}

// ---- textbook scalar LSTM --------------------------------------------------
struct ScalarLstm {
    double w_hf, w_xf, w_hi, w_xi, w_hc, w_xc, w_ho, w_xo;
    double b_f, b_i, b_c, b_o;
};

struct ScalarLstmTrace {
    std::vector<double> h, c;
};

inline ScalarLstmTrace scalar_lstm_run(const ScalarLstm& p, const std::vector<double>& xs) {
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    ScalarLstmTrace tr;
    double h = 0.0, c = 0.0;
    for (double x : xs) {
        const double f = sig(p.w_hf * h + p.w_xf * x + p.b_f);
        const double i = sig(p.w_hi * h + p.w_xi * x + p.b_i);
        const double g = std::tanh(p.w_hc * h + p.w_xc * x + p.b_c);
        const double o = sig(p.w_ho * h + p.w_xo * x + p.b_o);
        c = f * c + i * g;
        h = o * std::tanh(c);
        tr.h.push_back(h);
        tr.c.push_back(c);
    }
    return tr;
}

// ---- central finite differences over a scalar function --------------------
inline double fd_derivative(const std::function<double(double)>& f, double x, double step = 1e-6) {
    return (f(x + step) - f(x - step)) / (2.0 * step);
}

// relative error with an absolute floor, mirroring the acceptance tolerance
inline double rel_err(double a, double b, double floor_ = 1e-8) {
    const double diff = std::abs(a - b);
    if (diff <= floor_) return 0.0;
    return diff / std::max(std::abs(a), std::abs(b));
}

// ---- dihedral-transform coordinate maps ------------------------------------
// Source coordinates (sy,sx) each transform reads for output position (y,x),
// derived by hand from the geometric definitions.
inline std::pair<std::size_t, std::size_t> dihedral_source(std::size_t transform, std::size_t y,
                                                           std::size_t x, std::size_t p) {
    const std::size_t q = p - 1;
    switch (transform) {
        case 0: return {y, x};             // identity
        case 1: return {x, q - y};         // rotate 90 anticlockwise
        case 2: return {q - y, q - x};     // rotate 180
        case 3: return {q - x, y};         // rotate 270 anticlockwise
        case 4: return {y, q - x};         // flip horizontally (columns reversed)
        case 5: return {q - y, x};         // flip vertically (rows reversed)
        case 6: return {x, y};             // rot90 of horizontal flip = transpose
        default: return {q - x, q - y};    // rot90 of vertical flip = anti-transpose
    }
}

// ---- nearest class-signature classifier ------------------------------------
// Assigns each spectrum to the class whose mean training spectrum is closest
// in Euclidean distance.
inline std::size_t nearest_centroid(const std::vector<double>& spectrum,
                                    const std::vector<std::vector<double>>& centroids) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.size(); ++k) {
        double d = 0.0;
        for (std::size_t b = 0; b < spectrum.size(); ++b) {
            const double diff = spectrum[b] - centroids[k][b];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

} // namespace oracles

#endif
