#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "t5lab/config.hpp"
#include "t5lab/rng.hpp"
#include "t5lab/tensor.hpp"

namespace t5lab {

// Canonical parameter-name grammar (stable; checkpoint surgery keys off it):
//
//   token_embedding                                  [vocab x d_model]
//   {encoder|decoder}/rel_bias                       [rel_buckets x num_heads]
//   {encoder|decoder}/layer_NN/self_attn/{q,k,v}     [d_model x inner]
//   {encoder|decoder}/layer_NN/self_attn/o           [inner x d_model]
//   {encoder|decoder}/layer_NN/self_attn_norm        [d_model]
//   decoder/layer_NN/cross_attn/{q,k,v}              [d_model x inner]
//   decoder/layer_NN/cross_attn/o                    [inner x d_model]
//   decoder/layer_NN/cross_attn_norm                 [d_model]
//   {encoder|decoder}/layer_NN/ffn/{wi_0,wi_1}       [d_model x d_ff]
//   {encoder|decoder}/layer_NN/ffn/wo                [d_ff x d_model]
//   {encoder|decoder}/layer_NN/ffn_norm              [d_model]
//   {encoder|decoder}/final_norm                     [d_model]
//   vocab_projection                                 [d_model x vocab]
//   head/bos_embedding                               [d_model]
//   head/cross_attn/{q,k,v,o}, head/cross_attn_norm  (as decoder cross-attn)
//   head/ffn/{wi_0,wi_1,wo}, head/ffn_norm           (as decoder ffn)
//   head/final_norm                                  [d_model]
//   head/projection_kernel                           [d_model x (n+1)]
//   head/projection_bias                             [n+1]
//
// NN is a two-digit zero-padded layer index, so lexicographic order matches layer order.
// A stack with zero layers has no rel_bias table. EncT5 stores have no decoder/* names
// and no vocab_projection; T5/1decT5 stores have no head/* names.

template <class Real>
struct ParameterStore {
    std::map<std::string, Tensor<Real>> tensors;

    Tensor<Real>& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw Error("parameter not found: " + name);
        return it->second;
    }
    const Tensor<Real>& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw Error("parameter not found: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(tensors.size());
        for (const auto& [n, t] : tensors) out.push_back(n);
        return out;
    }

    void zero_grads() {
        for (auto& [n, t] : tensors) {
            t.ensure_grad();
            t.zero_grad();
        }
    }
};

struct ParamInfo {
    std::string name;
    Shape shape;
};

inline std::string layer_name(const std::string& stack, int64_t layer) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%02d", static_cast<int>(layer));
    return stack + "/layer_" + buf;
}

inline std::vector<ParamInfo> canonical_parameters(const ModelConfig& c) {
    c.validate();
    std::vector<ParamInfo> out;
    int64_t d = c.d_model, inner = c.inner_dim(), ff = c.d_ff;
    auto attn = [&](const std::string& prefix) {
        out.push_back({prefix + "/q", {d, inner}});
        out.push_back({prefix + "/k", {d, inner}});
        out.push_back({prefix + "/v", {d, inner}});
        out.push_back({prefix + "/o", {inner, d}});
    };
    auto ffn = [&](const std::string& prefix) {
        out.push_back({prefix + "/wi_0", {d, ff}});
        out.push_back({prefix + "/wi_1", {d, ff}});
        out.push_back({prefix + "/wo", {ff, d}});
    };

    out.push_back({"token_embedding", {c.vocab_size, d}});

    if (c.num_encoder_layers > 0) out.push_back({"encoder/rel_bias", {c.rel_buckets, c.num_heads}});
    for (int64_t l = 0; l < c.num_encoder_layers; ++l) {
        std::string base = layer_name("encoder", l);
        attn(base + "/self_attn");
        out.push_back({base + "/self_attn_norm", {d}});
        ffn(base + "/ffn");
        out.push_back({base + "/ffn_norm", {d}});
    }
    out.push_back({"encoder/final_norm", {d}});

    if (c.variant == Variant::EncT5) {
        out.push_back({"head/bos_embedding", {d}});
        attn("head/cross_attn");
        out.push_back({"head/cross_attn_norm", {d}});
        ffn("head/ffn");
        out.push_back({"head/ffn_norm", {d}});
        out.push_back({"head/final_norm", {d}});
        int64_t width = c.num_classes + 1;  // slot 0 is the padding class
        out.push_back({"head/projection_kernel", {d, width}});
        out.push_back({"head/projection_bias", {width}});
        return out;
    }

    int64_t dec_layers = c.effective_decoder_layers();
    if (dec_layers > 0) out.push_back({"decoder/rel_bias", {c.rel_buckets, c.num_heads}});
    for (int64_t l = 0; l < dec_layers; ++l) {
        std::string base = layer_name("decoder", l);
        attn(base + "/self_attn");
        out.push_back({base + "/self_attn_norm", {d}});
        attn(base + "/cross_attn");
        out.push_back({base + "/cross_attn_norm", {d}});
        ffn(base + "/ffn");
        out.push_back({base + "/ffn_norm", {d}});
    }
    out.push_back({"decoder/final_norm", {d}});
    out.push_back({"vocab_projection", {d, c.vocab_size}});
    return out;
}

// Initialization, all keyed by (seed, name):
//   norm scales           ones
//   token_embedding       normal(0, 1)
//   attention q           normal(0, (d_model * d_kv)^-1/2)   (T5 folds logit scaling into q)
//   attention k, v        normal(0, d_model^-1/2)
//   attention o           normal(0, inner^-1/2)
//   ffn wi_*              normal(0, d_model^-1/2)
//   ffn wo                normal(0, d_ff^-1/2)
//   vocab_projection      normal(0, d_model^-1/2)
//   rel_bias              normal(0, 0.5)
//   head/bos_embedding    normal(0, d_model^-1/2)
//   head/projection_kernel normal(0, d_model^-1/2)
//   head/projection_bias  zeros
template <class Real>
Tensor<Real> init_parameter(const ModelConfig& c, const std::string& name, const Shape& shape,
                            uint64_t seed) {
    auto ends_with = [&](const std::string& suffix) {
        return name.size() >= suffix.size() &&
               name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    auto contains = [&](const std::string& part) { return name.find(part) != std::string::npos; };

    double stddev = 0.0;
    bool ones = false;
    if (ends_with("_norm") || ends_with("final_norm")) {
        ones = true;
    } else if (name == "token_embedding") {
        stddev = 1.0;
    } else if (ends_with("rel_bias")) {
        stddev = 0.5;
    } else if (name == "head/projection_bias") {
        stddev = 0.0;
    } else if (contains("attn/q")) {
        stddev = 1.0 / std::sqrt(static_cast<double>(c.d_model * c.d_kv));
    } else if (contains("attn/k") || contains("attn/v")) {
        stddev = 1.0 / std::sqrt(static_cast<double>(c.d_model));
    } else if (contains("attn/o")) {
        stddev = 1.0 / std::sqrt(static_cast<double>(c.inner_dim()));
    } else if (ends_with("wi_0") || ends_with("wi_1")) {
        stddev = 1.0 / std::sqrt(static_cast<double>(c.d_model));
    } else if (ends_with("wo")) {
        stddev = 1.0 / std::sqrt(static_cast<double>(c.d_ff));
    } else if (name == "vocab_projection" || name == "head/projection_kernel" ||
               name == "head/bos_embedding") {
        stddev = 1.0 / std::sqrt(static_cast<double>(c.d_model));
    } else {
        throw Error("init_parameter: no rule for '" + name + "'");
    }

    if (ones) return Tensor<Real>::full(shape, Real(1));
    Tensor<Real> t = Tensor<Real>::zeros(shape);
    if (stddev > 0.0) {
        Rng rng = rng_for(seed, name);
        for (auto& v : t.data) v = static_cast<Real>(rng.normal(0.0, stddev));
    }
    return t;
}

template <class Real>
ParameterStore<Real> init_params(const ModelConfig& c, uint64_t seed) {
    ParameterStore<Real> store;
    for (const auto& info : canonical_parameters(c)) {
        store.tensors.emplace(info.name, init_parameter<Real>(c, info.name, info.shape, seed));
    }
    return store;
}

struct ParamCount {
    int64_t total = 0;
    std::map<std::string, int64_t> by_group;  // embedding, encoder, decoder, head, output_projection
};

inline std::string param_group(const std::string& name) {
    if (name == "token_embedding") return "embedding";
    if (name == "vocab_projection") return "output_projection";
    if (name.rfind("encoder/", 0) == 0) return "encoder";
    if (name.rfind("decoder/", 0) == 0) return "decoder";
    if (name.rfind("head/", 0) == 0) return "head";
    return "other";
}

// Exact count by enumerating the canonically constructed store.
inline ParamCount count_parameters(const ModelConfig& c) {
    ParamCount pc;
    for (const auto& info : canonical_parameters(c)) {
        int64_t n = shape_numel(info.shape);
        pc.total += n;
        pc.by_group[param_group(info.name)] += n;
    }
    return pc;
}

// Independent closed-form count, kept as straight-line arithmetic for cross-checking
// the enumeration.
inline int64_t count_parameters_closed_form(const ModelConfig& c) {
    int64_t d = c.d_model, inner = c.inner_dim(), ff = c.d_ff;
    int64_t attn = 3 * d * inner + inner * d;
    int64_t ffn = 2 * d * ff + ff * d;
    int64_t enc_layer = attn + d + ffn + d;
    int64_t enc = c.num_encoder_layers * enc_layer + d;
    if (c.num_encoder_layers > 0) enc += c.rel_buckets * c.num_heads;
    int64_t total = c.vocab_size * d + enc;
    if (c.variant == Variant::EncT5) {
        int64_t pooling_layer = attn + d + ffn + d;  // cross-attn + its norm + ffn + its norm
        int64_t head = pooling_layer + d /*final norm*/ + d /*bos*/ +
                       d * (c.num_classes + 1) + (c.num_classes + 1);
        return total + head;
    }
    int64_t dec_layers = c.effective_decoder_layers();
    int64_t dec_layer = attn + d + attn + d + ffn + d;  // self + cross + ffn, each pre-normed
    int64_t dec = dec_layers * dec_layer + d;
    if (dec_layers > 0) dec += c.rel_buckets * c.num_heads;
    return total + dec + d * c.vocab_size;
}

}  // namespace t5lab
