#ifndef BICLSTM_METRICS_HPP
#define BICLSTM_METRICS_HPP

#include <array>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "biclstm/errors.hpp"
#include "biclstm/hsi.hpp"
#include "biclstm/network.hpp"
#include "biclstm/parallel.hpp"

// Confusion-matrix accumulation and the evaluation statistics: overall
// accuracy, average accuracy, per-class accuracy, Cohen's kappa. Plus the
// classification-map renderer (portable pixmap, fixed palette).

namespace biclstm {

// rows = true class, columns = predicted, both 0-based.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::size_t c) : classes(c), counts(c * c, 0) {}

    std::uint64_t& at(std::size_t t, std::size_t p) { return counts[t * classes + p]; }
    std::uint64_t at(std::size_t t, std::size_t p) const { return counts[t * classes + p]; }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (std::uint64_t v : counts) s += v;
        return s;
    }
    std::uint64_t row_sum(std::size_t t) const {
        std::uint64_t s = 0;
        for (std::size_t p = 0; p < classes; ++p) s += at(t, p);
        return s;
    }
    std::uint64_t col_sum(std::size_t p) const {
        std::uint64_t s = 0;
        for (std::size_t t = 0; t < classes; ++t) s += at(t, p);
        return s;
    }

    void merge(const ConfusionMatrix& other) {
        if (other.classes != classes) throw argument_error("confusion merge: class count mismatch");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    }
};

inline void accumulate(ConfusionMatrix& cm, std::size_t true_class, std::size_t pred_class) {
    if (true_class >= cm.classes || pred_class >= cm.classes)
        throw argument_error("accumulate: class index out of range (true=" + std::to_string(true_class) +
                             ", pred=" + std::to_string(pred_class) + ", c=" + std::to_string(cm.classes) + ")");
    ++cm.at(true_class, pred_class);
}

inline double oa(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw argument_error("oa: empty confusion matrix");
    std::uint64_t diag = 0;
    for (std::size_t i = 0; i < cm.classes; ++i) diag += cm.at(i, i);
    return static_cast<double>(diag) / static_cast<double>(total);
}

// Per-class accuracy; classes absent from the evaluation set get NaN.
inline std::vector<double> per_class(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw argument_error("per_class: empty confusion matrix");
    std::vector<double> acc(cm.classes);
    for (std::size_t i = 0; i < cm.classes; ++i) {
        const std::uint64_t rs = cm.row_sum(i);
        acc[i] = rs == 0 ? std::numeric_limits<double>::quiet_NaN()
                         : static_cast<double>(cm.at(i, i)) / static_cast<double>(rs);
    }
    return acc;
}

// Mean of per-class accuracies. Classes with no evaluated pixels are excluded
// with a warning rather than counted as zero.
inline double aa(const ConfusionMatrix& cm) {
    const std::vector<double> acc = per_class(cm);
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < acc.size(); ++i) {
        if (std::isnan(acc[i])) {
            std::cerr << "warning: class " << (i + 1) << " absent from evaluation set, excluded from AA\n";
            continue;
        }
        sum += acc[i];
        ++used;
    }
    if (used == 0) throw argument_error("aa: no classes present");
    return sum / static_cast<double>(used);
}

// kappa = (p_o - p_e) / (1 - p_e), chance agreement p_e from the margins.
inline double kappa(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw argument_error("kappa: empty confusion matrix");
    const double p_o = oa(cm);
    double p_e = 0.0;
    const double inv_total = 1.0 / static_cast<double>(total);
    for (std::size_t i = 0; i < cm.classes; ++i)
        p_e += (static_cast<double>(cm.row_sum(i)) * inv_total) *
               (static_cast<double>(cm.col_sum(i)) * inv_total);
    if (p_e >= 1.0 - 1e-15) {
        if (p_o >= 1.0 - 1e-15) return 1.0;
        throw argument_error("kappa undefined: chance agreement is 1 but observed agreement is not");
    }
    return (p_o - p_e) / (1.0 - p_e);
}

// Fixed 20-entry palette; entry 0 (black) marks unlabeled pixels, class k uses
// entry ((k-1) mod 19) + 1.
inline const std::array<std::array<std::uint8_t, 3>, 20>& map_palette() {
    static const std::array<std::array<std::uint8_t, 3>, 20> pal = {{
        {0, 0, 0},       {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},
        {245, 130, 48},  {145, 30, 180},  {70, 240, 240},  {240, 50, 230},  {210, 245, 60},
        {250, 190, 212}, {0, 128, 128},   {220, 190, 255}, {170, 110, 40},  {255, 250, 200},
        {128, 0, 0},     {170, 255, 195}, {128, 128, 0},   {255, 215, 180}, {0, 0, 128},
    }};
    return pal;
}

struct ClassificationMap {
    std::size_t m = 0, n = 0;
    std::vector<std::uint16_t> raster; // predicted labels, 1..c; 0 where skipped
};

// Predicts every labeled pixel (or every pixel when predict_all). The cube must
// already be normalized with the model's band statistics. Results land in
// per-pixel slots, so the raster is independent of the worker count.
inline ClassificationMap render_map(const HsiCube& cube, const BiClstmModel& model, bool predict_all = false,
                                    std::size_t threads = 1) {
    if (cube.l != model.config.bands)
        throw shape_error("render_map: cube has " + std::to_string(cube.l) + " bands, model expects " +
                          std::to_string(model.config.bands));
    ClassificationMap map;
    map.m = cube.m;
    map.n = cube.n;
    map.raster.assign(cube.m * cube.n, 0);

    std::vector<std::size_t> targets;
    for (std::size_t px = 0; px < cube.m * cube.n; ++px)
        if (predict_all || cube.labels[px] > 0) targets.push_back(px);

    parallel_for(targets.size(), threads, [&](std::size_t k) {
        const std::size_t px = targets[k];
        const PatchSequence patch =
            extract_patch(cube, px / cube.n, px % cube.n, model.config.patch, model.config.group);
        map.raster[px] = static_cast<std::uint16_t>(predict(patch, model).class_index + 1);
    });
    return map;
}

// Binary PPM (P6). comment lines carry provenance; identical inputs give
// identical bytes.
inline std::string map_to_ppm(const ClassificationMap& map, const std::string& comment = "") {
    const auto& pal = map_palette();
    std::string out = "P6\n";
    if (!comment.empty()) out += "# " + comment + "\n";
    out += std::to_string(map.n) + " " + std::to_string(map.m) + "\n255\n";
    out.reserve(out.size() + map.raster.size() * 3);
    for (std::uint16_t v : map.raster) {
        const auto& rgb = v == 0 ? pal[0] : pal[(v - 1) % 19 + 1];
        out.push_back(static_cast<char>(rgb[0]));
        out.push_back(static_cast<char>(rgb[1]));
        out.push_back(static_cast<char>(rgb[2]));
    }
    return out;
}

} // namespace biclstm

#endif
