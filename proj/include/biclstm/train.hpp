#ifndef BICLSTM_TRAIN_HPP
#define BICLSTM_TRAIN_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "biclstm/checkpoint.hpp"
#include "biclstm/errors.hpp"
#include "biclstm/hsi.hpp"
#include "biclstm/network.hpp"
#include "biclstm/parallel.hpp"

// Mini-batch training: shuffled epochs, mean cross-entropy over the batch,
// global-norm gradient clipping, Adam or SGD with momentum. Fully
// deterministic given (seed, config, data), including under multiple worker
// threads: per-sample work lands in per-index slots and is reduced in sample
// order, and every dropout stream is derived from the sample's global index.

namespace biclstm {

enum class Optimizer { adam, sgd_momentum };

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch = 16;
    std::size_t epochs = 100;
    Optimizer optimizer = Optimizer::adam;
    double momentum = 0.9;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double clip_norm = 5.0;
    bool augment = false;
    std::uint64_t seed = 1;
    std::size_t threads = 1;

    void validate() const {
        if (!(lr >= 0.0)) throw argument_error("train: learning rate must be >= 0");
        if (batch == 0) throw argument_error("train: batch size must be >= 1");
        if (!(clip_norm > 0.0)) throw argument_error("train: clip norm must be > 0");
    }
};

struct EpochRecord {
    double loss = 0.0;     // mean sample loss over the epoch
    double train_oa = 0.0; // inference-mode accuracy on the training set
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0; // for the human log; kept out of serialized reports
};

// wall clock deliberately excluded so reports are byte-stable across runs
inline void to_json(nlohmann::json& j, const TrainReport& r) {
    nlohmann::json eps = nlohmann::json::array();
    for (const EpochRecord& e : r.epochs) eps.push_back({{"loss", e.loss}, {"train_oa", e.train_oa}});
    j = nlohmann::json{{"epochs", eps}};
}

// First/second moments (Adam) or velocity (momentum, stored in m). One entry
// per parameter tensor, in for_each_param order.
struct OptState {
    std::vector<Tensor> m, v;
    std::uint64_t t = 0;
};

inline std::vector<Tensor*> collect_params(BiClstmModel& model) {
    std::vector<Tensor*> out;
    model.for_each_param([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

inline std::vector<const Tensor*> collect_grads(const ModelGrads& grads) {
    std::vector<const Tensor*> out;
    const_cast<ModelGrads&>(grads).for_each_param(
        [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

inline OptState make_opt_state(const std::vector<Tensor*>& params) {
    OptState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const Tensor* p : params) {
        st.m.emplace_back(p->shape());
        st.v.emplace_back(p->shape());
    }
    return st;
}

// If the global gradient norm exceeds clip, scales every tensor by clip/norm.
// Returns the pre-clip norm.
inline double clip_global_norm(std::vector<Tensor>& grads, double clip) {
    double sq = 0.0;
    for (const Tensor& g : grads) sq += g.sqnorm();
    const double norm = std::sqrt(sq);
    if (norm > clip) {
        const double s = clip / norm;
        for (Tensor& g : grads) scale_inplace(g, s);
    }
    return norm;
}

// v <- mu v - lr g; theta <- theta + v
inline void sgd_momentum_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                              OptState& st, const TrainConfig& cfg) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw shape_error("sgd_momentum_step: parameter/gradient/state count mismatch");
    ++st.t;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& theta = *params[k];
        const Tensor& g = *grads[k];
        Tensor& vel = st.m[k];
        require_same_shape(theta, g, "sgd_momentum_step");
        for (std::size_t i = 0; i < theta.size(); ++i) {
            vel[i] = cfg.momentum * vel[i] - cfg.lr * g[i];
            theta[i] += vel[i];
        }
    }
}

// Bias-corrected Adam; the first step from zero state moves each entry by
// about lr regardless of gradient scale.
inline void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, OptState& st,
                      const TrainConfig& cfg) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw shape_error("adam_step: parameter/gradient/state count mismatch");
    ++st.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& theta = *params[k];
        const Tensor& g = *grads[k];
        Tensor& m = st.m[k];
        Tensor& v = st.v[k];
        require_same_shape(theta, g, "adam_step");
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            theta[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
        }
    }
}

inline void optimizer_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                           OptState& st, const TrainConfig& cfg) {
    if (cfg.optimizer == Optimizer::adam)
        adam_step(params, grads, st, cfg);
    else
        sgd_momentum_step(params, grads, st, cfg);
}

struct TrainResult {
    BiClstmModel model;
    OptState opt;
    TrainReport report;
};

namespace detail {

inline double global_param_norm(BiClstmModel& model) {
    double sq = 0.0;
    for (const Tensor* p : collect_params(model)) sq += p->sqnorm();
    return std::sqrt(sq);
}

inline double eval_train_oa(const BiClstmModel& model, const std::vector<PatchSequence>& data,
                            std::size_t threads) {
    std::vector<std::uint8_t> correct(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        correct[i] = predict(data[i], model).class_index + 1 == data[i].label ? 1 : 0;
    });
    std::size_t hits = 0;
    for (std::uint8_t c : correct) hits += c;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

} // namespace detail

// Warm-start entry point; `train(config, data, cfg)` below initializes fresh.
inline TrainResult train(BiClstmModel model, OptState opt, const std::vector<PatchSequence>& data,
                         const TrainConfig& cfg) {
    cfg.validate();
    model.config.validate();
    if (data.empty()) throw argument_error("train: empty dataset");
    for (const PatchSequence& s : data)
        if (s.label == 0 || s.label > model.config.classes)
            throw argument_error("train: sample at (" + std::to_string(s.origin_i) + "," +
                                 std::to_string(s.origin_j) + ") has label " + std::to_string(s.label) +
                                 ", expected 1.." + std::to_string(model.config.classes));

    const auto t0 = std::chrono::steady_clock::now();
    Rng root(cfg.seed);
    Rng shuffle_rng = root.derive(1);
    Rng dropout_root = root.derive(2);

    std::vector<PatchSequence> samples;
    if (cfg.augment) {
        samples.reserve(data.size() * 8);
        for (const PatchSequence& s : data) {
            std::vector<PatchSequence> aug = augment8(s);
            for (PatchSequence& a : aug) samples.push_back(std::move(a));
        }
    } else {
        samples = data;
    }

    std::vector<Tensor*> params = collect_params(model);
    if (opt.m.empty()) opt = make_opt_state(params);

    const std::size_t n = samples.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    result.report.epochs.reserve(cfg.epochs);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double epoch_loss = 0.0;
        for (std::size_t start = 0, batch_idx = 0; start < n; start += cfg.batch, ++batch_idx) {
            const std::size_t bsz = std::min(cfg.batch, n - start);
            std::vector<ModelGrads> slot_grads(bsz);
            std::vector<double> slot_loss(bsz);

            parallel_for(bsz, cfg.threads, [&](std::size_t b) {
                const std::size_t pos = start + b;
                const PatchSequence& sample = samples[order[pos]];
                Rng drop_rng = dropout_root.derive(epoch * n + pos);
                ModelForward fwd = model_forward(sample, model, drop_rng, true);
                SoftmaxXent sx = softmax_xent(fwd.logits, sample.label - 1);
                slot_loss[b] = sx.loss;
                slot_grads[b] = model_backward(fwd.tape, model, sx.grad_logits);
            });

            double batch_loss = 0.0;
            for (double l : slot_loss) batch_loss += l;
            batch_loss /= static_cast<double>(bsz);
            epoch_loss += batch_loss * static_cast<double>(bsz);
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("training diverged: loss " + std::to_string(batch_loss) +
                                         " at epoch " + std::to_string(epoch) + " batch " +
                                         std::to_string(batch_idx) + ", parameter norm " +
                                         std::to_string(detail::global_param_norm(model)));

            // mean gradient over the batch, reduced in sample order
            std::vector<Tensor> grads;
            for (const Tensor* g : collect_grads(slot_grads[0])) grads.push_back(*g);
            for (std::size_t b = 1; b < bsz; ++b) {
                const auto gb = collect_grads(slot_grads[b]);
                for (std::size_t k = 0; k < grads.size(); ++k) add_inplace(grads[k], *gb[k]);
            }
            const double inv = 1.0 / static_cast<double>(bsz);
            for (Tensor& g : grads) scale_inplace(g, inv);

            clip_global_norm(grads, cfg.clip_norm);
            std::vector<const Tensor*> gptrs;
            gptrs.reserve(grads.size());
            for (const Tensor& g : grads) gptrs.push_back(&g);
            optimizer_step(params, gptrs, opt, cfg);
        }

        EpochRecord rec;
        rec.loss = epoch_loss / static_cast<double>(n);
        rec.train_oa = detail::eval_train_oa(model, samples, cfg.threads);
        result.report.epochs.push_back(rec);
    }

    result.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.model = std::move(model);
    result.opt = std::move(opt);
    return result;
}

inline TrainResult train(const ModelConfig& model_cfg, const std::vector<PatchSequence>& data,
                         const TrainConfig& cfg) {
    Rng init_rng = Rng(cfg.seed).derive(0);
    return train(init_model(model_cfg, init_rng), OptState{}, data, cfg);
}

inline void opt_state_to_checkpoint(const OptState& opt, const BiClstmModel& model, Checkpoint& cp) {
    std::size_t k = 0;
    model.for_each_param([&](const std::string& name, const Tensor&) {
        cp.tensors["opt.m." + name] = opt.m[k];
        cp.tensors["opt.v." + name] = opt.v[k];
        ++k;
    });
    cp.config["opt_step"] = opt.t;
}

inline OptState opt_state_from_checkpoint(const Checkpoint& cp, const BiClstmModel& model) {
    OptState opt;
    model.for_each_param([&](const std::string& name, const Tensor&) {
        auto mi = cp.tensors.find("opt.m." + name);
        auto vi = cp.tensors.find("opt.v." + name);
        if (mi == cp.tensors.end() || vi == cp.tensors.end())
            throw argument_error("checkpoint missing optimizer state for \"" + name + "\"");
        opt.m.push_back(mi->second);
        opt.v.push_back(vi->second);
    });
    opt.t = cp.config.value("opt_step", 0ull);
    return opt;
}

// ---------------------------------------------------------------------------
// Gradient-check harness: analytic gradients of the mean batch loss vs central
// finite differences, per parameter block and per input sample. Dropout is
// forced off so the loss is a smooth deterministic function.

struct GradcheckConfig {
    ModelConfig model;
    std::uint64_t seed = 0;
    double tolerance = 1e-5;
    double abs_floor = 1e-8;
    double step = 1e-6;
    std::size_t batch = 2;
};

struct BlockCheck {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradcheckReport {
    std::vector<BlockCheck> blocks;
    bool pass = true;
    double seconds = 0.0;
};

namespace detail {

inline double relative_err(double analytic, double fd, double abs_floor) {
    const double diff = std::abs(analytic - fd);
    if (diff <= abs_floor) return 0.0;
    return diff / std::max(std::abs(analytic), std::abs(fd));
}

// flags a whole block against (analytic, fd) pairs
inline void check_block(BlockCheck& blk, const Tensor& analytic, const Tensor& fd, double tol,
                        double abs_floor) {
    for (std::size_t i = 0; i < analytic.size(); ++i)
        blk.max_rel_err = std::max(blk.max_rel_err, relative_err(analytic[i], fd[i], abs_floor));
    blk.pass = blk.max_rel_err < tol;
}

} // namespace detail

inline GradcheckReport gradcheck(const GradcheckConfig& gc) {
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig mcfg = gc.model;
    mcfg.dropout = 0.0;
    mcfg.validate();

    Rng rng(gc.seed);
    Rng init_rng = rng.derive(0);
    Rng data_rng = rng.derive(1);
    BiClstmModel model = init_model(mcfg, init_rng);

    std::vector<PatchSequence> batch(gc.batch);
    for (std::size_t s = 0; s < gc.batch; ++s) {
        batch[s].label = static_cast<std::uint16_t>(s % mcfg.classes + 1);
        for (std::size_t k = 0; k < mcfg.steps(); ++k)
            batch[s].steps.push_back(rng_uniform(data_rng, {mcfg.group, mcfg.patch, mcfg.patch}, -1.0, 1.0));
    }

    auto loss_of = [&](const BiClstmModel& m, const std::vector<PatchSequence>& data) {
        Rng unused(0);
        double loss = 0.0;
        for (const PatchSequence& s : data)
            loss += softmax_xent(model_forward(s, m, unused, false).logits, s.label - 1).loss;
        return loss / static_cast<double>(data.size());
    };

    // analytic gradients of the mean batch loss
    ModelGrads total;
    bool first = true;
    Rng unused(0);
    const double inv_batch = 1.0 / static_cast<double>(gc.batch);
    std::vector<std::vector<Tensor>> input_grads(gc.batch);
    for (std::size_t s = 0; s < gc.batch; ++s) {
        ModelForward fwd = model_forward(batch[s], model, unused, false);
        SoftmaxXent sx = softmax_xent(fwd.logits, batch[s].label - 1);
        ModelGrads g = model_backward(fwd.tape, model, scale(sx.grad_logits, inv_batch));
        input_grads[s] = g.input;
        if (first) {
            total = std::move(g);
            first = false;
        } else {
            auto acc = collect_grads(total);
            auto cur = collect_grads(g);
            for (std::size_t k = 0; k < acc.size(); ++k)
                add_inplace(const_cast<Tensor&>(*acc[k]), *cur[k]);
        }
    }

    GradcheckReport report;

    // parameter blocks
    std::vector<std::pair<std::string, Tensor*>> param_blocks;
    model.for_each_param([&](const std::string& n, Tensor& t) { param_blocks.push_back({n, &t}); });
    std::vector<const Tensor*> analytic_blocks = collect_grads(total);

    for (std::size_t k = 0; k < param_blocks.size(); ++k) {
        Tensor& theta = *param_blocks[k].second;
        Tensor fd(theta.shape());
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double orig = theta[i];
            theta[i] = orig + gc.step;
            const double lp = loss_of(model, batch);
            theta[i] = orig - gc.step;
            const double lm = loss_of(model, batch);
            theta[i] = orig;
            fd[i] = (lp - lm) / (2.0 * gc.step);
        }
        BlockCheck blk{param_blocks[k].first};
        detail::check_block(blk, *analytic_blocks[k], fd, gc.tolerance, gc.abs_floor);
        report.blocks.push_back(blk);
    }

    // input blocks, one per sample
    for (std::size_t s = 0; s < gc.batch; ++s) {
        BlockCheck blk{"input[" + std::to_string(s) + "]"};
        for (std::size_t step = 0; step < batch[s].steps.size(); ++step) {
            Tensor& x = batch[s].steps[step];
            Tensor fd(x.shape());
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double orig = x[i];
                x[i] = orig + gc.step;
                const double lp = loss_of(model, batch);
                x[i] = orig - gc.step;
                const double lm = loss_of(model, batch);
                x[i] = orig;
                fd[i] = (lp - lm) / (2.0 * gc.step);
            }
            detail::check_block(blk, input_grads[s][step], fd, gc.tolerance, gc.abs_floor);
        }
        report.blocks.push_back(blk);
    }

    for (const BlockCheck& b : report.blocks) report.pass = report.pass && b.pass;
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace biclstm

#endif
