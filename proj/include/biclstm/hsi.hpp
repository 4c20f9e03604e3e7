#ifndef BICLSTM_HSI_HPP
#define BICLSTM_HSI_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "biclstm/errors.hpp"
#include "biclstm/rng.hpp"
#include "biclstm/tensor.hpp"

// Hyperspectral cube I/O ("HSC1"/"HSL1" binary formats), patch extraction with
// spectral unfolding, 8x flip/rotate augmentation, per-band normalization,
// stratified splitting, and a synthetic cube generator for desk-scale runs.

namespace biclstm {

// m x n pixels, l bands. values is band-major [l, m, n]; labels is a row-major
// m x n raster with 0 = unlabeled and 1..c = classes.
struct HsiCube {
    std::size_t m = 0, n = 0, l = 0;
    Tensor values;
    std::vector<std::uint16_t> labels;

    std::uint16_t label_at(std::size_t i, std::size_t j) const { return labels[i * n + j]; }

    std::uint16_t num_classes() const {
        std::uint16_t c = 0;
        for (std::uint16_t v : labels) c = std::max(c, v);
        return c;
    }
};

// One sample: the spectral sequence unfolded from a p x p x l sub-cube.
// With band grouping g there are l/g steps of shape [g, p, p].
struct PatchSequence {
    std::vector<Tensor> steps;
    std::uint16_t label = 0;          // raster label, 1..c for training samples
    std::size_t origin_i = 0, origin_j = 0;
};

enum class CubeDtype : std::uint32_t { f32 = 0, f64 = 1 };

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) buf.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int k = 0; k < 8; ++k) buf.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw parse_error(std::string("truncated file: expected ") + what, pos);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + k])) << (8 * k);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + k])) << (8 * k);
        pos += 8;
        return v;
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(static_cast<unsigned char>(buf[pos]) |
                                                     (static_cast<unsigned char>(buf[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    void magic(const char* expected) {
        if (buf.size() < pos + 4 || std::memcmp(buf.data() + pos, expected, 4) != 0)
            throw parse_error(std::string("bad magic, expected \"") + expected + "\"", pos);
        pos += 4;
    }
    void done() const {
        if (pos != buf.size()) throw parse_error("trailing bytes after payload", pos);
    }
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

inline void write_file(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("write failed for " + path);
}

inline std::uint64_t f64_bits(double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    return u;
}
inline double bits_f64(std::uint64_t u) {
    double d;
    std::memcpy(&d, &u, 8);
    return d;
}
inline std::uint32_t f32_bits(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    return u;
}
inline float bits_f32(std::uint32_t u) {
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

} // namespace detail

// HSC1 layout: "HSC1", u32 m, u32 n, u32 l, u32 dtype (0=f32, 1=f64), then the
// band-major payload (little-endian). HSL1: "HSL1", u32 m, u32 n, u16 labels
// row-major. Round trips are bit-exact at the stored dtype.
inline void save_labels(const std::vector<std::uint16_t>& labels, std::size_t m, std::size_t n,
                        const std::string& path) {
    if (labels.size() != m * n)
        throw shape_error("save_labels: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(m) + "x" + std::to_string(n) + " raster");
    std::string buf;
    buf.reserve(12 + labels.size() * 2);
    buf.append("HSL1", 4);
    detail::put_u32(buf, static_cast<std::uint32_t>(m));
    detail::put_u32(buf, static_cast<std::uint32_t>(n));
    for (std::uint16_t v : labels) {
        buf.push_back(static_cast<char>(v & 0xff));
        buf.push_back(static_cast<char>(v >> 8));
    }
    detail::write_file(path, buf);
}

inline void save_cube(const HsiCube& cube, const std::string& values_path, const std::string& labels_path,
                      CubeDtype dtype = CubeDtype::f64) {
    std::string buf;
    buf.reserve(20 + cube.values.size() * (dtype == CubeDtype::f64 ? 8 : 4));
    buf.append("HSC1", 4);
    detail::put_u32(buf, static_cast<std::uint32_t>(cube.m));
    detail::put_u32(buf, static_cast<std::uint32_t>(cube.n));
    detail::put_u32(buf, static_cast<std::uint32_t>(cube.l));
    detail::put_u32(buf, static_cast<std::uint32_t>(dtype));
    for (std::size_t i = 0; i < cube.values.size(); ++i) {
        if (dtype == CubeDtype::f64)
            detail::put_u64(buf, detail::f64_bits(cube.values[i]));
        else
            detail::put_u32(buf, detail::f32_bits(static_cast<float>(cube.values[i])));
    }
    detail::write_file(values_path, buf);
    save_labels(cube.labels, cube.m, cube.n, labels_path);
}

inline HsiCube load_cube(const std::string& values_path, const std::string& labels_path) {
    const std::string buf = detail::read_file(values_path);
    detail::ByteReader r{buf};
    r.magic("HSC1");
    const std::uint64_t m = r.u32("m"), n = r.u32("n"), l = r.u32("l");
    const std::uint32_t dtype = r.u32("dtype");
    if (m == 0 || n == 0 || l == 0) throw parse_error("zero dimension in header", 4);
    if (m * n * l > (1ull << 40)) throw parse_error("dimension overflow in header", 4);
    if (dtype > 1) throw parse_error("unknown dtype code " + std::to_string(dtype), 16);

    HsiCube cube;
    cube.m = m;
    cube.n = n;
    cube.l = l;
    cube.values = Tensor(Shape{static_cast<std::size_t>(l), static_cast<std::size_t>(m),
                               static_cast<std::size_t>(n)});
    for (std::size_t i = 0; i < cube.values.size(); ++i)
        cube.values[i] = dtype == 1 ? detail::bits_f64(r.u64("payload"))
                                    : static_cast<double>(detail::bits_f32(r.u32("payload")));
    r.done();

    const std::string lbuf = detail::read_file(labels_path);
    detail::ByteReader lr{lbuf};
    lr.magic("HSL1");
    const std::uint64_t lm = lr.u32("m"), ln = lr.u32("n");
    if (lm != m || ln != n)
        throw parse_error("label raster is " + std::to_string(lm) + "x" + std::to_string(ln) +
                              " but cube is " + std::to_string(m) + "x" + std::to_string(n),
                          4);
    cube.labels.resize(m * n);
    for (std::size_t i = 0; i < cube.labels.size(); ++i) cube.labels[i] = lr.u16("labels");
    lr.done();
    return cube;
}

namespace detail {

// Mirror across the image edge, half-sample symmetric: -1 -> 0, -2 -> 1,
// m -> m-1, m+1 -> m-2. Folds repeatedly for windows wider than the image.
inline std::size_t mirror_index(std::ptrdiff_t t, std::size_t size) {
    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(size);
    while (t < 0 || t >= s) {
        if (t < 0) t = -t - 1;
        if (t >= s) t = 2 * s - 1 - t;
    }
    return static_cast<std::size_t>(t);
}

} // namespace detail

// p x p window centered at (i,j): rows [i-p/2, i+p/2-1], likewise columns.
// Out-of-bounds positions mirror across the edge. Bands are grouped g at a
// time into l/g steps.
inline PatchSequence extract_patch(const HsiCube& cube, std::size_t i, std::size_t j, std::size_t p,
                                   std::size_t g) {
    if (i >= cube.m || j >= cube.n)
        throw argument_error("extract_patch: pixel (" + std::to_string(i) + "," + std::to_string(j) +
                             ") outside " + std::to_string(cube.m) + "x" + std::to_string(cube.n));
    if (p < 2 || (p & (p - 1)) != 0)
        throw argument_error("extract_patch: patch size must be a power of two >= 2, got " + std::to_string(p));
    if (g == 0 || cube.l % g != 0)
        throw argument_error("extract_patch: band group " + std::to_string(g) + " must divide " +
                             std::to_string(cube.l) + " bands");

    const std::size_t steps = cube.l / g;
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(p / 2);
    PatchSequence seq;
    seq.steps.reserve(steps);
    seq.label = cube.label_at(i, j);
    seq.origin_i = i;
    seq.origin_j = j;

    const double* vals = cube.values.data();
    for (std::size_t s = 0; s < steps; ++s) {
        Tensor step(Shape{g, p, p});
        double* d = step.data();
        for (std::size_t b = 0; b < g; ++b) {
            const double* band = vals + (s * g + b) * cube.m * cube.n;
            for (std::size_t py = 0; py < p; ++py) {
                const std::size_t sy =
                    detail::mirror_index(static_cast<std::ptrdiff_t>(i) - half + static_cast<std::ptrdiff_t>(py), cube.m);
                for (std::size_t px = 0; px < p; ++px) {
                    const std::size_t sx =
                        detail::mirror_index(static_cast<std::ptrdiff_t>(j) - half + static_cast<std::ptrdiff_t>(px), cube.n);
                    d[(b * p + py) * p + px] = band[sy * cube.n + sx];
                }
            }
        }
        seq.steps.push_back(std::move(step));
    }
    return seq;
}

// The eight dihedral transforms, in this order: identity, rot90 (anticlockwise),
// rot180, rot270, horizontal flip, vertical flip, rot90 of the horizontal flip
// (transpose), rot90 of the vertical flip (anti-transpose).
inline std::vector<PatchSequence> augment8(const PatchSequence& seq) {
    if (seq.steps.empty()) throw argument_error("augment8: empty sequence");
    const std::size_t p = seq.steps[0].dim(1);
    if (seq.steps[0].dim(2) != p)
        throw argument_error("augment8: patches must be square, got " + shape_str(seq.steps[0].shape()));

    // out(y,x) = in(map(y,x))
    const auto maps = [&p](std::size_t t, std::size_t y, std::size_t x) -> std::pair<std::size_t, std::size_t> {
        const std::size_t q = p - 1;
        switch (t) {
            case 0: return {y, x};
            case 1: return {x, q - y};
            case 2: return {q - y, q - x};
            case 3: return {q - x, y};
            case 4: return {y, q - x};
            case 5: return {q - y, x};
            case 6: return {x, y};
            default: return {q - x, q - y};
        }
    };

    std::vector<PatchSequence> out(8);
    for (std::size_t t = 0; t < 8; ++t) {
        out[t].label = seq.label;
        out[t].origin_i = seq.origin_i;
        out[t].origin_j = seq.origin_j;
        out[t].steps.reserve(seq.steps.size());
        for (const Tensor& step : seq.steps) {
            const std::size_t g = step.dim(0);
            Tensor ts(step.shape());
            for (std::size_t b = 0; b < g; ++b)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x) {
                        const auto [sy, sx] = maps(t, y, x);
                        ts[(b * p + y) * p + x] = step[(b * p + sy) * p + sx];
                    }
            out[t].steps.push_back(std::move(ts));
        }
    }
    return out;
}

using PixelIndex = std::pair<std::size_t, std::size_t>;

// Per-band statistics over training pixels only. Population std with a 1e-8 floor.
struct BandStats {
    Tensor mean;   // [l]
    Tensor stddev; // [l]
};

inline BandStats compute_band_stats(const HsiCube& cube, const std::vector<PixelIndex>& train_pixels) {
    if (train_pixels.empty()) throw argument_error("compute_band_stats: empty training pixel set");
    BandStats st{Tensor(Shape{cube.l}), Tensor(Shape{cube.l})};
    const double* vals = cube.values.data();
    const double inv_n = 1.0 / static_cast<double>(train_pixels.size());
    for (std::size_t b = 0; b < cube.l; ++b) {
        const double* band = vals + b * cube.m * cube.n;
        double mean = 0.0;
        for (const auto& [i, j] : train_pixels) mean += band[i * cube.n + j];
        mean *= inv_n;
        double var = 0.0;
        for (const auto& [i, j] : train_pixels) {
            const double d = band[i * cube.n + j] - mean;
            var += d * d;
        }
        var *= inv_n;
        st.mean[b] = mean;
        st.stddev[b] = std::max(std::sqrt(var), 1e-8);
    }
    return st;
}

inline HsiCube normalize(const HsiCube& cube, const BandStats& stats) {
    if (stats.mean.size() != cube.l || stats.stddev.size() != cube.l)
        throw shape_error("normalize: stats for " + std::to_string(stats.mean.size()) +
                          " bands but cube has " + std::to_string(cube.l));
    HsiCube out = cube;
    double* vals = out.values.data();
    for (std::size_t b = 0; b < cube.l; ++b) {
        const double mean = stats.mean[b], inv_std = 1.0 / stats.stddev[b];
        double* band = vals + b * cube.m * cube.n;
        for (std::size_t i = 0; i < cube.m * cube.n; ++i) band[i] = (band[i] - mean) * inv_std;
    }
    return out;
}

// Per-class training fraction or absolute counts; counts win when non-empty.
struct SplitSpec {
    double fraction = 0.1;
    std::vector<std::size_t> per_class_counts;
    std::uint64_t seed = 0;
};

struct Split {
    std::vector<PixelIndex> train, test;
};

// Per-class sampling without replacement over labeled pixels. Train counts are
// round(fraction * population) with a minimum of 1. Deterministic under seed.
inline Split stratified_split(const HsiCube& cube, const SplitSpec& spec) {
    const std::uint16_t c = cube.num_classes();
    if (c == 0) throw argument_error("stratified_split: cube has no labeled pixels");
    if (spec.per_class_counts.empty() && !(spec.fraction > 0.0 && spec.fraction < 1.0))
        throw argument_error("stratified_split: fraction must be in (0,1), got " +
                             std::to_string(spec.fraction));
    if (!spec.per_class_counts.empty() && spec.per_class_counts.size() != c)
        throw argument_error("stratified_split: " + std::to_string(spec.per_class_counts.size()) +
                             " counts for " + std::to_string(c) + " classes");

    std::vector<std::vector<PixelIndex>> by_class(c);
    for (std::size_t i = 0; i < cube.m; ++i)
        for (std::size_t j = 0; j < cube.n; ++j) {
            const std::uint16_t lab = cube.label_at(i, j);
            if (lab > 0) by_class[lab - 1].push_back({i, j});
        }

    Rng rng(spec.seed);
    Split split;
    for (std::uint16_t k = 0; k < c; ++k) {
        auto& pixels = by_class[k];
        if (pixels.empty())
            throw argument_error("stratified_split: class " + std::to_string(k + 1) + " has no pixels");
        std::size_t take;
        if (!spec.per_class_counts.empty()) {
            take = spec.per_class_counts[k];
            if (take == 0 || take > pixels.size())
                throw argument_error("stratified_split: count " + std::to_string(take) + " invalid for class " +
                                     std::to_string(k + 1) + " with " + std::to_string(pixels.size()) + " pixels");
        } else {
            take = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(pixels.size())));
            take = std::max<std::size_t>(take, 1);
            take = std::min(take, pixels.size());
        }
        // Fisher-Yates so the draw is a pure function of the seed
        for (std::size_t i = pixels.size(); i > 1; --i)
            std::swap(pixels[i - 1], pixels[rng.below(i)]);
        split.train.insert(split.train.end(), pixels.begin(), pixels.begin() + take);
        split.test.insert(split.test.end(), pixels.begin() + take, pixels.end());
    }
    return split;
}

// Synthetic cube: classes occupy a grid of rectangular tiles (round-robin, so
// every class gets at least one blob); each class has a smooth random spectral
// signature; pixels add i.i.d. band noise plus a spatially correlated field,
// both with std = signature spread / separation.
inline HsiCube synth_cube(std::size_t classes, std::size_t m, std::size_t n, std::size_t l,
                          std::uint64_t seed, double separation) {
    if (classes < 2) throw argument_error("synth_cube: need >= 2 classes, got " + std::to_string(classes));
    if (classes > 65535) throw argument_error("synth_cube: too many classes");
    if (m < 2 || n < 2 || l < 1)
        throw argument_error("synth_cube: degenerate dims " + std::to_string(m) + "x" + std::to_string(n) +
                             "x" + std::to_string(l));
    if (!(separation > 0.0)) throw argument_error("synth_cube: separation must be > 0");

    Rng rng(seed);
    Rng sig_rng = rng.derive(1);
    Rng noise_rng = rng.derive(2);
    Rng field_rng = rng.derive(3);

    // tile grid, at least `classes` tiles
    std::size_t gr = 1;
    while (gr * gr < classes) ++gr;
    const std::size_t gc = gr;

    HsiCube cube;
    cube.m = m;
    cube.n = n;
    cube.l = l;
    cube.labels.resize(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t ti = std::min(i * gr / m, gr - 1);
            const std::size_t tj = std::min(j * gc / n, gc - 1);
            cube.labels[i * n + j] = static_cast<std::uint16_t>((ti * gc + tj) % classes + 1);
        }

    // smooth signatures: three low-frequency cosines per class
    std::vector<std::vector<double>> sig(classes, std::vector<double>(l));
    for (std::size_t k = 0; k < classes; ++k) {
        double amp[3], phase[3];
        for (int f = 0; f < 3; ++f) {
            amp[f] = sig_rng.uniform(0.5, 1.5) / static_cast<double>(f + 1);
            phase[f] = sig_rng.uniform(0.0, 6.283185307179586);
        }
        for (std::size_t b = 0; b < l; ++b) {
            const double t = static_cast<double>(b) / static_cast<double>(l);
            double v = 0.0;
            for (int f = 0; f < 3; ++f) v += amp[f] * std::cos(6.283185307179586 * (f + 1) * t + phase[f]);
            sig[k][b] = v;
        }
    }

    // signature spread = RMS deviation from the class-mean signature
    double spread_sq = 0.0;
    for (std::size_t b = 0; b < l; ++b) {
        double mean = 0.0;
        for (std::size_t k = 0; k < classes; ++k) mean += sig[k][b];
        mean /= static_cast<double>(classes);
        for (std::size_t k = 0; k < classes; ++k) {
            const double d = sig[k][b] - mean;
            spread_sq += d * d;
        }
    }
    const double spread = std::sqrt(spread_sq / static_cast<double>(classes * l));
    const double noise_std = std::isinf(separation) ? 0.0 : spread / separation;

    cube.values = Tensor(Shape{l, m, n});
    double* vals = cube.values.data();
    for (std::size_t b = 0; b < l; ++b)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                vals[(b * m + i) * n + j] = sig[cube.labels[i * n + j] - 1][b];

    if (noise_std > 0.0) {
        // spatially correlated noise: one coarse white-noise field per band,
        // bilinearly upsampled. Correlated across neighbors, independent across
        // bands, so only spatial context can average it away.
        const std::size_t cell = 4;
        const std::size_t fr = m / cell + 2, fc = n / cell + 2;
        std::vector<double> field(fr * fc);
        for (std::size_t b = 0; b < l; ++b) {
            for (double& v : field) v = field_rng.gaussian();
            for (std::size_t i = 0; i < m; ++i) {
                const double fy = static_cast<double>(i) / cell;
                const std::size_t y0 = static_cast<std::size_t>(fy);
                const double wy = fy - static_cast<double>(y0);
                for (std::size_t j = 0; j < n; ++j) {
                    const double fx = static_cast<double>(j) / cell;
                    const std::size_t x0 = static_cast<std::size_t>(fx);
                    const double wx = fx - static_cast<double>(x0);
                    const double f00 = field[y0 * fc + x0], f01 = field[y0 * fc + x0 + 1];
                    const double f10 = field[(y0 + 1) * fc + x0], f11 = field[(y0 + 1) * fc + x0 + 1];
                    const double fv =
                        (1 - wy) * ((1 - wx) * f00 + wx * f01) + wy * ((1 - wx) * f10 + wx * f11);
                    vals[(b * m + i) * n + j] += noise_std * (noise_rng.gaussian() + fv);
                }
            }
        }
    }
    return cube;
}

} // namespace biclstm

#endif
