#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "t5lab/error.hpp"
#include "t5lab/graph.hpp"

namespace t5lab {

// Result of packing token sequences into fixed-capacity rows. Segment ids are 1-based
// and nondecreasing along a row; 0 marks padding. Positions restart at 0 per segment.
struct PackedSequences {
    struct Row {
        std::vector<int> token_ids;
        std::vector<int> segment_ids;
        std::vector<int> positions;
        int num_segments = 0;
    };
    std::vector<Row> rows;
    // example index -> (row index, segment id within that row); inverts the packing
    std::vector<std::pair<int, int>> assignment;
};

// First-fit sequential packing: append to the current row while the example fits,
// otherwise start a new row. Lossless and deterministic.
inline PackedSequences pack(const std::vector<std::vector<int>>& examples, int64_t max_len) {
    PackedSequences out;
    for (size_t e = 0; e < examples.size(); ++e) {
        const auto& toks = examples[e];
        if (toks.empty()) throw Error("pack: example " + std::to_string(e) + " is empty");
        if (static_cast<int64_t>(toks.size()) > max_len) {
            throw Error("pack: example " + std::to_string(e) + " has " +
                        std::to_string(toks.size()) + " tokens, max_len is " +
                        std::to_string(max_len));
        }
        if (out.rows.empty() ||
            static_cast<int64_t>(out.rows.back().token_ids.size() + toks.size()) > max_len) {
            out.rows.emplace_back();
        }
        auto& row = out.rows.back();
        row.num_segments += 1;
        out.assignment.emplace_back(static_cast<int>(out.rows.size()) - 1, row.num_segments);
        for (size_t i = 0; i < toks.size(); ++i) {
            row.token_ids.push_back(toks[i]);
            row.segment_ids.push_back(row.num_segments);
            row.positions.push_back(static_cast<int>(i));
        }
    }
    return out;
}

inline std::vector<std::vector<int>> unpack(const PackedSequences& packed) {
    std::vector<std::vector<int>> out(packed.assignment.size());
    for (size_t e = 0; e < packed.assignment.size(); ++e) {
        auto [r, seg] = packed.assignment[e];
        const auto& row = packed.rows[static_cast<size_t>(r)];
        for (size_t i = 0; i < row.token_ids.size(); ++i) {
            if (row.segment_ids[i] == seg) out[e].push_back(row.token_ids[i]);
        }
    }
    return out;
}

// Additive self-attention mask over one row: i may attend j iff both positions carry the
// same nonzero segment id (and j <= i in the causal variant). Disallowed pairs get the
// large negative constant.
template <class Real>
std::vector<Real> self_attention_mask(std::span<const int> segment_ids, bool causal) {
    int64_t n = static_cast<int64_t>(segment_ids.size());
    std::vector<Real> mask(static_cast<size_t>(n * n), mask_value<Real>());
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            bool ok = segment_ids[static_cast<size_t>(i)] != 0 &&
                      segment_ids[static_cast<size_t>(i)] == segment_ids[static_cast<size_t>(j)];
            if (causal) ok = ok && j <= i;
            if (ok) mask[static_cast<size_t>(i * n + j)] = Real(0);
        }
    }
    return mask;
}

// Cross-attention: query q attends key k iff their segment ids match and are nonzero.
template <class Real>
std::vector<Real> cross_attention_mask(std::span<const int> query_segment_ids,
                                       std::span<const int> key_segment_ids) {
    int64_t nq = static_cast<int64_t>(query_segment_ids.size());
    int64_t nk = static_cast<int64_t>(key_segment_ids.size());
    std::vector<Real> mask(static_cast<size_t>(nq * nk), mask_value<Real>());
    for (int64_t i = 0; i < nq; ++i) {
        int s = query_segment_ids[static_cast<size_t>(i)];
        if (s == 0) continue;
        for (int64_t j = 0; j < nk; ++j) {
            if (key_segment_ids[static_cast<size_t>(j)] == s) {
                mask[static_cast<size_t>(i * nk + j)] = Real(0);
            }
        }
    }
    return mask;
}

// Model-facing batch: fixed [batch x seq_len] arrays, padded with token 0 / segment 0.
// Decoder arrays are filled for encoder-decoder variants; slot arrays for EncT5.
struct PackedBatch {
    int64_t batch = 0;
    int64_t seq_len = 0;
    std::vector<int> token_ids;    // batch * seq_len
    std::vector<int> segment_ids;  // batch * seq_len
    std::vector<int> positions;    // batch * seq_len
    std::vector<int> row_segments; // per row segment count

    int64_t tgt_len = 0;
    std::vector<int> dec_input_ids;   // batch * tgt_len, targets shifted right, start id 0
    std::vector<int> dec_target_ids;  // batch * tgt_len
    std::vector<int> dec_segment_ids; // batch * tgt_len
    std::vector<int> dec_positions;   // batch * tgt_len

    int64_t max_segments = 0;
    std::vector<int> slot_class_ids;     // batch * max_segments, 0 = padded slot
    std::vector<double> slot_values;     // batch * max_segments, regression targets
    std::vector<int> slot_mask;          // batch * max_segments, 1 = slot enters the loss

    // example index -> (row, segment id); carried over from pack()
    std::vector<std::pair<int, int>> assignment;

    std::span<const int> enc_row_segments(int64_t b) const {
        return {segment_ids.data() + b * seq_len, static_cast<size_t>(seq_len)};
    }
    std::span<const int> enc_row_positions(int64_t b) const {
        return {positions.data() + b * seq_len, static_cast<size_t>(seq_len)};
    }
    std::span<const int> dec_row_segments(int64_t b) const {
        return {dec_segment_ids.data() + b * tgt_len, static_cast<size_t>(tgt_len)};
    }
    std::span<const int> dec_row_positions(int64_t b) const {
        return {dec_positions.data() + b * tgt_len, static_cast<size_t>(tgt_len)};
    }

    void validate() const {
        for (int64_t b = 0; b < batch; ++b) {
            auto segs = enc_row_segments(b);
            auto pos = enc_row_positions(b);
            int prev_seg = 0;
            int prev_pos = -1;
            for (int64_t i = 0; i < seq_len; ++i) {
                int tok = token_ids[static_cast<size_t>(b * seq_len + i)];
                if ((segs[static_cast<size_t>(i)] == 0) != (tok == 0)) {
                    throw Error("packed batch: token id 0 must coincide with segment id 0");
                }
                int s = segs[static_cast<size_t>(i)];
                if (s != 0 && s < prev_seg) throw Error("packed batch: segment ids decrease");
                if (s != 0 && s == prev_seg && pos[static_cast<size_t>(i)] != prev_pos + 1) {
                    throw Error("packed batch: positions not consecutive within segment");
                }
                if (s != 0 && s != prev_seg && pos[static_cast<size_t>(i)] != 0) {
                    throw Error("packed batch: segment does not start at position 0");
                }
                prev_seg = s;
                prev_pos = pos[static_cast<size_t>(i)];
            }
        }
    }
};

}  // namespace t5lab
