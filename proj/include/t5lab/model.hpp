#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "t5lab/config.hpp"
#include "t5lab/graph.hpp"
#include "t5lab/packing.hpp"
#include "t5lab/params.hpp"

namespace t5lab {

// T5-style piecewise exact/logarithmic distance bucketing. relative_position is
// key_position - query_position. Bidirectional stacks split buckets between the two
// directions; causal stacks clamp positive distances to zero.
inline int64_t relative_position_bucket(int64_t relative_position, bool bidirectional,
                                        int64_t num_buckets, int64_t max_distance) {
    int64_t offset = 0;
    int64_t b = num_buckets;
    if (bidirectional) {
        b = num_buckets / 2;
        if (relative_position > 0) offset = b;
    } else {
        if (relative_position > 0) relative_position = 0;
    }
    int64_t m = std::llabs(relative_position);
    int64_t exact = b / 2;
    if (m < exact) return offset + m;
    double log_ratio = std::log(static_cast<double>(m) / static_cast<double>(exact)) /
                       std::log(static_cast<double>(max_distance) / static_cast<double>(exact));
    int64_t bucket = exact + static_cast<int64_t>(log_ratio * static_cast<double>(b - exact));
    return offset + std::min(b - 1, bucket);
}

// Flat indices into a [rel_buckets x num_heads] table for every (query, key) pair of one
// row, pre-multiplied by num_heads so a per-head offset selects the head column.
// Relative positions are within-segment, which is what makes packed attention logits
// match unpacked ones exactly.
inline std::shared_ptr<const std::vector<int64_t>> bias_index_matrix(
    std::span<const int> positions, bool bidirectional, const ModelConfig& cfg) {
    int64_t n = static_cast<int64_t>(positions.size());
    std::vector<int64_t> idx(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            int64_t rel = positions[static_cast<size_t>(j)] - positions[static_cast<size_t>(i)];
            idx[static_cast<size_t>(i * n + j)] =
                relative_position_bucket(rel, bidirectional, cfg.rel_buckets, cfg.rel_max_distance) *
                cfg.num_heads;
        }
    }
    return std::make_shared<const std::vector<int64_t>>(std::move(idx));
}

template <class Real>
struct ForwardTrace {
    // decoder (or 1decT5) self-attention probabilities, nested layer -> row -> head
    std::vector<Tensor<Real>> decoder_self_attn_probs;
};

namespace detail {

template <class Real>
struct AttnWeights {
    int q, k, v, o;
};

template <class Real>
AttnWeights<Real> attn_params(Graph<Real>& g, ParameterStore<Real>& store, const std::string& prefix) {
    return {g.param(&store.at(prefix + "/q")), g.param(&store.at(prefix + "/k")),
            g.param(&store.at(prefix + "/v")), g.param(&store.at(prefix + "/o"))};
}

// Multi-head attention over per-row blocks. q_rows/kv_rows give the row extent of each
// batch element inside x/kv; masks[b] is the row's additive mask; bias_idx[b], when
// present, indexes the rel_bias table (bias_node >= 0). probs_out, when set, collects
// attention probabilities per (row, head).
template <class Real>
int attention(Graph<Real>& g, const ModelConfig& cfg, const AttnWeights<Real>& w, int x, int kv,
              int64_t batch, int64_t q_len, int64_t k_len,
              const std::vector<typename Graph<Real>::MaskPtr>& masks,
              const std::vector<typename Graph<Real>::IndexPtr>& bias_idx, int bias_node,
              std::vector<Tensor<Real>>* probs_out) {
    int64_t dk = cfg.d_kv;
    int q_all = g.matmul(x, w.q);
    int k_all = g.matmul(kv, w.k);
    int v_all = g.matmul(kv, w.v);
    std::vector<int> row_ctx;
    row_ctx.reserve(static_cast<size_t>(batch));
    for (int64_t b = 0; b < batch; ++b) {
        int qb = g.slice_rows(q_all, b * q_len, (b + 1) * q_len);
        int kb = g.slice_rows(k_all, b * k_len, (b + 1) * k_len);
        int vb = g.slice_rows(v_all, b * k_len, (b + 1) * k_len);
        std::vector<int> heads;
        heads.reserve(static_cast<size_t>(cfg.num_heads));
        for (int64_t h = 0; h < cfg.num_heads; ++h) {
            int qh = g.slice_cols(qb, h * dk, (h + 1) * dk);
            int kh = g.slice_cols(kb, h * dk, (h + 1) * dk);
            int vh = g.slice_cols(vb, h * dk, (h + 1) * dk);
            int logits = g.matmul_nt(qh, kh);
            if (bias_node >= 0) {
                int bias = g.take(bias_node, bias_idx[static_cast<size_t>(b)], h, {q_len, k_len});
                logits = g.add(logits, bias);
            }
            int probs = g.softmax_lastdim(logits, masks[static_cast<size_t>(b)]);
            if (probs_out) probs_out->push_back(g.value(probs));
            heads.push_back(g.matmul(probs, vh));
        }
        row_ctx.push_back(g.concat_cols(heads));
    }
    int ctx = batch == 1 ? row_ctx[0] : g.concat_rows(row_ctx);
    return g.matmul(ctx, w.o);
}

// Gated feed-forward: wo( gelu(wi_0(x)) * wi_1(x) )
template <class Real>
int gated_ffn(Graph<Real>& g, ParameterStore<Real>& store, const std::string& prefix, int x) {
    int a = g.matmul(x, g.param(&store.at(prefix + "/wi_0")));
    int b = g.matmul(x, g.param(&store.at(prefix + "/wi_1")));
    return g.matmul(g.mul(g.gelu(a), b), g.param(&store.at(prefix + "/wo")));
}

}  // namespace detail

// Pre-norm residual encoder stack over a packed batch; returns a [batch*seq_len x d_model]
// node (final RMS norm applied). Self-attention is restricted by the segment-isolation
// mask and biased by the stack's shared relative-position table.
template <class Real>
int encoder_forward(Graph<Real>& g, const ModelConfig& cfg, ParameterStore<Real>& store,
                    const PackedBatch& batch) {
    const Real eps = static_cast<Real>(cfg.norm_eps);
    std::vector<int64_t> ids(batch.token_ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (batch.token_ids[i] < 0 || batch.token_ids[i] >= cfg.vocab_size) {
            throw ShapeError("encoder_forward: token id out of range");
        }
        ids[i] = batch.token_ids[i];
    }
    int x = g.gather_rows(g.param(&store.at("token_embedding")), std::move(ids));

    std::vector<typename Graph<Real>::MaskPtr> masks;
    std::vector<typename Graph<Real>::IndexPtr> bias_idx;
    for (int64_t b = 0; b < batch.batch; ++b) {
        masks.push_back(std::make_shared<const std::vector<Real>>(
            self_attention_mask<Real>(batch.enc_row_segments(b), /*causal=*/false)));
        if (cfg.num_encoder_layers > 0) {
            bias_idx.push_back(bias_index_matrix(batch.enc_row_positions(b), /*bidirectional=*/true, cfg));
        }
    }
    int bias_node = cfg.num_encoder_layers > 0 ? g.param(&store.at("encoder/rel_bias")) : -1;

    for (int64_t l = 0; l < cfg.num_encoder_layers; ++l) {
        std::string base = layer_name("encoder", l);
        auto w = detail::attn_params(g, store, base + "/self_attn");
        int h = g.rms_norm(x, g.param(&store.at(base + "/self_attn_norm")), eps);
        int attn = detail::attention(g, cfg, w, h, h, batch.batch, batch.seq_len, batch.seq_len,
                                     masks, bias_idx, bias_node, nullptr);
        x = g.add(x, attn);
        int h2 = g.rms_norm(x, g.param(&store.at(base + "/ffn_norm")), eps);
        x = g.add(x, detail::gated_ffn(g, store, base + "/ffn", h2));
    }
    return g.rms_norm(x, g.param(&store.at("encoder/final_norm")), eps);
}

// Decoder stack: causal masked self-attention with the decoder-side relative bias,
// segment-matched cross-attention over encoder outputs, gated FFN; final norm, then the
// untied vocabulary projection (no bias). Returns a [batch*tgt_len x vocab] node.
template <class Real>
int decoder_forward(Graph<Real>& g, const ModelConfig& cfg, ParameterStore<Real>& store,
                    int encoder_out, const PackedBatch& batch, ForwardTrace<Real>* trace = nullptr) {
    const Real eps = static_cast<Real>(cfg.norm_eps);
    std::vector<int64_t> ids(batch.dec_input_ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (batch.dec_input_ids[i] < 0 || batch.dec_input_ids[i] >= cfg.vocab_size) {
            throw ShapeError("decoder_forward: token id out of range");
        }
        ids[i] = batch.dec_input_ids[i];
    }
    int x = g.gather_rows(g.param(&store.at("token_embedding")), std::move(ids));

    std::vector<typename Graph<Real>::MaskPtr> self_masks, cross_masks;
    std::vector<typename Graph<Real>::IndexPtr> bias_idx;
    for (int64_t b = 0; b < batch.batch; ++b) {
        self_masks.push_back(std::make_shared<const std::vector<Real>>(
            self_attention_mask<Real>(batch.dec_row_segments(b), /*causal=*/true)));
        cross_masks.push_back(std::make_shared<const std::vector<Real>>(
            cross_attention_mask<Real>(batch.dec_row_segments(b), batch.enc_row_segments(b))));
        bias_idx.push_back(bias_index_matrix(batch.dec_row_positions(b), /*bidirectional=*/false, cfg));
    }
    int64_t layers = cfg.effective_decoder_layers();
    int bias_node = layers > 0 ? g.param(&store.at("decoder/rel_bias")) : -1;

    for (int64_t l = 0; l < layers; ++l) {
        std::string base = layer_name("decoder", l);
        auto ws = detail::attn_params(g, store, base + "/self_attn");
        int h = g.rms_norm(x, g.param(&store.at(base + "/self_attn_norm")), eps);
        int attn = detail::attention(g, cfg, ws, h, h, batch.batch, batch.tgt_len, batch.tgt_len,
                                     self_masks, bias_idx, bias_node,
                                     trace ? &trace->decoder_self_attn_probs : nullptr);
        x = g.add(x, attn);

        auto wc = detail::attn_params(g, store, base + "/cross_attn");
        int h2 = g.rms_norm(x, g.param(&store.at(base + "/cross_attn_norm")), eps);
        int cross = detail::attention(g, cfg, wc, h2, encoder_out, batch.batch, batch.tgt_len,
                                      batch.seq_len, cross_masks, {}, -1, nullptr);
        x = g.add(x, cross);

        int h3 = g.rms_norm(x, g.param(&store.at(base + "/ffn_norm")), eps);
        x = g.add(x, detail::gated_ffn(g, store, base + "/ffn", h3));
    }
    x = g.rms_norm(x, g.param(&store.at("decoder/final_norm")), eps);
    return g.matmul(x, g.param(&store.at("vocab_projection")));
}

// EncT5 pooling head: one learned query (the BOS/task embedding) per packed example,
// cross-attending only to its own segment's encoder positions, then a gated FFN, final
// norm, and the class projection with bias. Returns [batch x max_segments x (n+1)].
template <class Real>
int enct5_forward(Graph<Real>& g, const ModelConfig& cfg, ParameterStore<Real>& store,
                  int encoder_out, const PackedBatch& batch) {
    const Real eps = static_cast<Real>(cfg.norm_eps);
    int64_t s_max = batch.max_segments;
    if (s_max <= 0) throw ShapeError("enct5_forward: batch has no segment slots");
    for (int64_t b = 0; b < batch.batch; ++b) {
        if (batch.row_segments[static_cast<size_t>(b)] > s_max) {
            throw ShapeError("enct5_forward: row segment count exceeds configured max");
        }
    }

    int bos = g.param(&store.at("head/bos_embedding"));
    int queries = g.broadcast_row(bos, batch.batch * s_max);

    std::vector<typename Graph<Real>::MaskPtr> cross_masks;
    for (int64_t b = 0; b < batch.batch; ++b) {
        std::vector<int> slot_seg(static_cast<size_t>(s_max), 0);
        for (int64_t s = 0; s < batch.row_segments[static_cast<size_t>(b)]; ++s) {
            slot_seg[static_cast<size_t>(s)] = static_cast<int>(s + 1);
        }
        cross_masks.push_back(std::make_shared<const std::vector<Real>>(
            cross_attention_mask<Real>(slot_seg, batch.enc_row_segments(b))));
    }

    auto w = detail::attn_params(g, store, "head/cross_attn");
    int h = g.rms_norm(queries, g.param(&store.at("head/cross_attn_norm")), eps);
    int attn = detail::attention(g, cfg, w, h, encoder_out, batch.batch, s_max, batch.seq_len,
                                 cross_masks, {}, -1, nullptr);
    int x = g.add(queries, attn);

    int h2 = g.rms_norm(x, g.param(&store.at("head/ffn_norm")), eps);
    x = g.add(x, detail::gated_ffn(g, store, "head/ffn", h2));

    x = g.rms_norm(x, g.param(&store.at("head/final_norm")), eps);
    int logits = g.add_bias(g.matmul(x, g.param(&store.at("head/projection_kernel"))),
                            g.param(&store.at("head/projection_bias")));
    return g.reshape(logits, {batch.batch, s_max, cfg.num_classes + 1});
}

// Argmax over real classes 1..n only; logit 0 (padding class) is ignored at inference.
// Ties break toward the lowest index.
template <class Real>
int predict_class(std::span<const Real> logits_row, int64_t num_classes) {
    if (static_cast<int64_t>(logits_row.size()) != num_classes + 1) {
        throw ShapeError("predict_class: expected n+1 logits");
    }
    int best = 1;
    for (int64_t c = 2; c <= num_classes; ++c) {
        if (logits_row[static_cast<size_t>(c)] > logits_row[static_cast<size_t>(best)]) {
            best = static_cast<int>(c);
        }
    }
    return best;
}

}  // namespace t5lab
