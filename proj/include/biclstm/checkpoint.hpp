#ifndef BICLSTM_CHECKPOINT_HPP
#define BICLSTM_CHECKPOINT_HPP

#include <map>
#include <string>
#include <utility>

#include <json.hpp>

#include "biclstm/errors.hpp"
#include "biclstm/hsi.hpp"
#include "biclstm/network.hpp"
#include "biclstm/tensor.hpp"

// Checkpoint container: a JSON config blob plus named tensors with shape
// headers and little-endian f64 payloads. Save -> load reproduces every
// parameter byte.
//
// Layout: "BCK1", u32 version, u64 json_len, json bytes, u32 tensor_count,
// then per tensor: u32 name_len, name, u32 ndim, u64 dims..., f64 data.

namespace biclstm {

struct Checkpoint {
    nlohmann::json config;
    std::map<std::string, Tensor> tensors; // sorted keys give stable bytes
};

inline void save_checkpoint(const Checkpoint& cp, const std::string& path) {
    std::string buf;
    buf.append("BCK1", 4);
    detail::put_u32(buf, 1);
    const std::string js = cp.config.dump();
    detail::put_u64(buf, js.size());
    buf += js;
    detail::put_u32(buf, static_cast<std::uint32_t>(cp.tensors.size()));
    for (const auto& [name, t] : cp.tensors) {
        detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf += name;
        detail::put_u32(buf, static_cast<std::uint32_t>(t.ndim()));
        for (std::size_t d : t.shape()) detail::put_u64(buf, d);
        for (std::size_t i = 0; i < t.size(); ++i) detail::put_u64(buf, detail::f64_bits(t[i]));
    }
    detail::write_file(path, buf);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    const std::string buf = detail::read_file(path);
    detail::ByteReader r{buf};
    r.magic("BCK1");
    const std::uint32_t version = r.u32("version");
    if (version != 1) throw parse_error("unsupported checkpoint version " + std::to_string(version), 4);
    const std::uint64_t jlen = r.u64("json length");
    r.need(jlen, "json config");
    Checkpoint cp;
    try {
        cp.config = nlohmann::json::parse(buf.substr(r.pos, jlen));
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("bad config json: ") + e.what(), r.pos);
    }
    r.pos += jlen;
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t nlen = r.u32("name length");
        r.need(nlen, "tensor name");
        std::string name = buf.substr(r.pos, nlen);
        r.pos += nlen;
        const std::uint32_t ndim = r.u32("rank");
        if (ndim > 8) throw parse_error("tensor rank " + std::to_string(ndim) + " too large", r.pos - 4);
        Shape shape(ndim);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape[d] = r.u64("dim");
            if (shape[d] == 0 || shape[d] > (1ull << 32) || numel > (1ull << 36) / shape[d])
                throw parse_error("tensor size overflow", r.pos);
            numel *= shape[d];
        }
        Tensor t(shape);
        for (std::size_t i = 0; i < numel; ++i) t[i] = detail::bits_f64(r.u64("tensor data"));
        cp.tensors.emplace(std::move(name), std::move(t));
    }
    r.done();
    return cp;
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"patch", c.patch},
                       {"bands", c.bands},
                       {"hidden", c.hidden},
                       {"kernel", c.kernel},
                       {"dropout", c.dropout},
                       {"group", c.group},
                       {"feature_mode", c.feature_mode == FeatureMode::full_sequence ? "full_sequence" : "last_state"},
                       {"classes", c.classes},
                       {"bidirectional", c.bidirectional}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("patch").get_to(c.patch);
    j.at("bands").get_to(c.bands);
    j.at("hidden").get_to(c.hidden);
    j.at("kernel").get_to(c.kernel);
    j.at("dropout").get_to(c.dropout);
    j.at("group").get_to(c.group);
    const std::string mode = j.at("feature_mode").get<std::string>();
    if (mode == "full_sequence")
        c.feature_mode = FeatureMode::full_sequence;
    else if (mode == "last_state")
        c.feature_mode = FeatureMode::last_state;
    else
        throw argument_error("unknown feature_mode \"" + mode + "\"");
    j.at("classes").get_to(c.classes);
    j.at("bidirectional").get_to(c.bidirectional);
}

inline void model_to_checkpoint(const BiClstmModel& model, Checkpoint& cp) {
    cp.config["model"] = model.config;
    model.for_each_param([&](const std::string& name, const Tensor& t) { cp.tensors[name] = t; });
}

inline BiClstmModel model_from_checkpoint(const Checkpoint& cp) {
    BiClstmModel model;
    model.config = cp.config.at("model").get<ModelConfig>();
    model.config.validate();
    model.forward_params = make_clstm_params(model.config.group, model.config.hidden, model.config.kernel);
    model.backward_params = make_clstm_params(model.config.group, model.config.hidden, model.config.kernel);
    model.head.weights = Tensor(Shape{model.config.classes, model.config.feature_len()});
    model.head.bias = Tensor(Shape{model.config.classes});
    model.for_each_param([&](const std::string& name, Tensor& t) {
        auto it = cp.tensors.find(name);
        if (it == cp.tensors.end()) throw argument_error("checkpoint missing tensor \"" + name + "\"");
        if (it->second.shape() != t.shape())
            throw shape_error("checkpoint tensor \"" + name + "\" has shape " + shape_str(it->second.shape()) +
                              ", model expects " + shape_str(t.shape()));
        t = it->second;
    });
    return model;
}

inline void stats_to_checkpoint(const BandStats& stats, Checkpoint& cp) {
    cp.tensors["norm.mean"] = stats.mean;
    cp.tensors["norm.stddev"] = stats.stddev;
}

inline BandStats stats_from_checkpoint(const Checkpoint& cp) {
    auto mi = cp.tensors.find("norm.mean");
    auto si = cp.tensors.find("norm.stddev");
    if (mi == cp.tensors.end() || si == cp.tensors.end())
        throw argument_error("checkpoint missing normalization statistics");
    return {mi->second, si->second};
}

} // namespace biclstm

#endif
