#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t5lab/adafactor.hpp"
#include "t5lab/checkpoint.hpp"
#include "t5lab/config.hpp"
#include "t5lab/metrics.hpp"
#include "t5lab/model.hpp"
#include "t5lab/packing.hpp"
#include "t5lab/spancorrupt.hpp"
#include "t5lab/tasks.hpp"
#include "t5lab/tokenizer.hpp"

namespace t5lab {

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

struct EncDecExample {
    std::vector<int> input;
    std::vector<int> target;
};

struct SlotExample {
    std::vector<int> input;
    int class_id = 0;    // 1..n
    double value = 0.0;  // regression target
};

namespace detail {

// First-fit packing of (input, target) pairs: both sides must fit their row.
inline std::vector<std::vector<int>> pack_pair_rows(std::span<const EncDecExample> examples,
                                                    int64_t max_in, int64_t max_tgt) {
    std::vector<std::vector<int>> rows;  // example indices per row
    int64_t in_used = 0, tgt_used = 0;
    for (size_t e = 0; e < examples.size(); ++e) {
        int64_t ni = static_cast<int64_t>(examples[e].input.size());
        int64_t nt = static_cast<int64_t>(examples[e].target.size());
        if (ni > max_in || ni == 0) throw Error("batch: input length must be in [1, max_input_len]");
        if (nt > max_tgt || nt == 0) throw Error("batch: target length must be in [1, max_target_len]");
        if (rows.empty() || in_used + ni > max_in || tgt_used + nt > max_tgt) {
            rows.emplace_back();
            in_used = tgt_used = 0;
        }
        rows.back().push_back(static_cast<int>(e));
        in_used += ni;
        tgt_used += nt;
    }
    return rows;
}

}  // namespace detail

// Assembles the encoder+decoder sides. Decoder inputs are the targets shifted right
// within each segment, with start token id 0 (the padding id doubles as decoder start).
inline PackedBatch build_encdec_batch(std::span<const EncDecExample> examples, int64_t max_in,
                                      int64_t max_tgt, bool packing) {
    if (examples.empty()) throw Error("batch: no examples");
    std::vector<std::vector<int>> rows;
    if (packing) {
        rows = detail::pack_pair_rows(examples, max_in, max_tgt);
    } else {
        for (size_t e = 0; e < examples.size(); ++e) {
            int64_t ni = static_cast<int64_t>(examples[e].input.size());
            int64_t nt = static_cast<int64_t>(examples[e].target.size());
            if (ni > max_in || ni == 0) throw Error("batch: input length must be in [1, max_input_len]");
            if (nt > max_tgt || nt == 0) throw Error("batch: target length must be in [1, max_target_len]");
            rows.push_back({static_cast<int>(e)});
        }
    }

    PackedBatch b;
    b.batch = static_cast<int64_t>(rows.size());
    int64_t seq_len = 0, tgt_len = 0;
    for (const auto& row : rows) {
        int64_t si = 0, st = 0;
        for (int e : row) {
            si += static_cast<int64_t>(examples[static_cast<size_t>(e)].input.size());
            st += static_cast<int64_t>(examples[static_cast<size_t>(e)].target.size());
        }
        seq_len = std::max(seq_len, si);
        tgt_len = std::max(tgt_len, st);
    }
    b.seq_len = seq_len;
    b.tgt_len = tgt_len;
    b.token_ids.assign(static_cast<size_t>(b.batch * seq_len), 0);
    b.segment_ids.assign(static_cast<size_t>(b.batch * seq_len), 0);
    b.positions.assign(static_cast<size_t>(b.batch * seq_len), 0);
    b.dec_input_ids.assign(static_cast<size_t>(b.batch * tgt_len), 0);
    b.dec_target_ids.assign(static_cast<size_t>(b.batch * tgt_len), 0);
    b.dec_segment_ids.assign(static_cast<size_t>(b.batch * tgt_len), 0);
    b.dec_positions.assign(static_cast<size_t>(b.batch * tgt_len), 0);
    b.assignment.assign(examples.size(), {0, 0});

    for (size_t r = 0; r < rows.size(); ++r) {
        int64_t ipos = 0, tpos = 0;
        int seg = 0;
        for (int e : rows[r]) {
            seg += 1;
            b.assignment[static_cast<size_t>(e)] = {static_cast<int>(r), seg};
            const auto& ex = examples[static_cast<size_t>(e)];
            for (size_t k = 0; k < ex.input.size(); ++k) {
                size_t at = static_cast<size_t>(static_cast<int64_t>(r) * seq_len + ipos);
                b.token_ids[at] = ex.input[k];
                b.segment_ids[at] = seg;
                b.positions[at] = static_cast<int>(k);
                ++ipos;
            }
            for (size_t k = 0; k < ex.target.size(); ++k) {
                size_t at = static_cast<size_t>(static_cast<int64_t>(r) * tgt_len + tpos);
                b.dec_input_ids[at] = k == 0 ? 0 : ex.target[k - 1];
                b.dec_target_ids[at] = ex.target[k];
                b.dec_segment_ids[at] = seg;
                b.dec_positions[at] = static_cast<int>(k);
                ++tpos;
            }
        }
        b.row_segments.push_back(seg);
    }
    b.validate();
    return b;
}

// Assembles the EncT5 side: packed encoder rows plus one target slot per packed example.
// force_max_segments, when nonzero, pads every row out to that many slots (extra slots
// carry class id 0 and mask 0).
inline PackedBatch build_slot_batch(std::span<const SlotExample> examples, int64_t max_in,
                                    bool packing, int64_t force_max_segments = 0) {
    if (examples.empty()) throw Error("batch: no examples");
    std::vector<std::vector<int>> seqs;
    seqs.reserve(examples.size());
    for (const auto& ex : examples) seqs.push_back(ex.input);

    PackedSequences packed;
    if (packing) {
        packed = pack(seqs, max_in);
    } else {
        for (size_t e = 0; e < seqs.size(); ++e) {
            if (seqs[e].empty() || static_cast<int64_t>(seqs[e].size()) > max_in) {
                throw Error("batch: input length must be in [1, max_input_len]");
            }
            PackedSequences::Row row;
            row.num_segments = 1;
            for (size_t k = 0; k < seqs[e].size(); ++k) {
                row.token_ids.push_back(seqs[e][k]);
                row.segment_ids.push_back(1);
                row.positions.push_back(static_cast<int>(k));
            }
            packed.rows.push_back(std::move(row));
            packed.assignment.emplace_back(static_cast<int>(e), 1);
        }
    }

    PackedBatch b;
    b.batch = static_cast<int64_t>(packed.rows.size());
    int64_t seq_len = 0, s_max = 0;
    for (const auto& row : packed.rows) {
        seq_len = std::max(seq_len, static_cast<int64_t>(row.token_ids.size()));
        s_max = std::max(s_max, static_cast<int64_t>(row.num_segments));
    }
    if (force_max_segments > 0) {
        if (force_max_segments < s_max) throw Error("batch: force_max_segments below actual maximum");
        s_max = force_max_segments;
    }
    b.seq_len = seq_len;
    b.max_segments = s_max;
    b.token_ids.assign(static_cast<size_t>(b.batch * seq_len), 0);
    b.segment_ids.assign(static_cast<size_t>(b.batch * seq_len), 0);
    b.positions.assign(static_cast<size_t>(b.batch * seq_len), 0);
    b.slot_class_ids.assign(static_cast<size_t>(b.batch * s_max), 0);
    b.slot_values.assign(static_cast<size_t>(b.batch * s_max), 0.0);
    b.slot_mask.assign(static_cast<size_t>(b.batch * s_max), 0);
    b.assignment.assign(examples.size(), {0, 0});

    for (size_t r = 0; r < packed.rows.size(); ++r) {
        const auto& row = packed.rows[r];
        for (size_t k = 0; k < row.token_ids.size(); ++k) {
            size_t at = static_cast<size_t>(static_cast<int64_t>(r) * seq_len + static_cast<int64_t>(k));
            b.token_ids[at] = row.token_ids[k];
            b.segment_ids[at] = row.segment_ids[k];
            b.positions[at] = row.positions[k];
        }
        b.row_segments.push_back(row.num_segments);
    }
    for (size_t e = 0; e < packed.assignment.size(); ++e) {
        auto [r, seg] = packed.assignment[e];
        b.assignment[e] = {r, seg};
        size_t at = static_cast<size_t>(static_cast<int64_t>(r) * s_max + (seg - 1));
        b.slot_class_ids[at] = examples[e].class_id;
        b.slot_values[at] = examples[e].value;
        b.slot_mask[at] = 1;
    }
    b.validate();
    return b;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Teacher-forced cross-entropy over the vocabulary; positions with decoder segment id 0
// are masked out of the mean.
template <class Real>
int t5_loss_node(Graph<Real>& g, const ModelConfig& cfg, ParameterStore<Real>& store,
                 const PackedBatch& batch, ForwardTrace<Real>* trace = nullptr) {
    int enc = encoder_forward(g, cfg, store, batch);
    int logits = decoder_forward(g, cfg, store, enc, batch, trace);
    std::vector<int64_t> targets(batch.dec_target_ids.begin(), batch.dec_target_ids.end());
    std::vector<Real> mask(targets.size());
    for (size_t i = 0; i < mask.size(); ++i) {
        mask[i] = batch.dec_segment_ids[i] != 0 ? Real(1) : Real(0);
    }
    return g.cross_entropy_masked(logits, std::move(targets), std::move(mask));
}

// Masked cross-entropy over n+1 classes, or masked MSE on the scalar column for
// regression heads. Slots with mask 0 contribute exactly nothing.
template <class Real>
int enct5_loss_node(Graph<Real>& g, const ModelConfig& cfg, ParameterStore<Real>& store,
                    const PackedBatch& batch) {
    int enc = encoder_forward(g, cfg, store, batch);
    int logits3 = enct5_forward(g, cfg, store, enc, batch);
    int logits = g.reshape(logits3, {batch.batch * batch.max_segments, cfg.num_classes + 1});
    std::vector<Real> mask(batch.slot_mask.size());
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = batch.slot_mask[i] ? Real(1) : Real(0);
    if (cfg.task_kind == TaskKind::regression) {
        int pred = g.slice_cols(logits, 1, 2);
        std::vector<Real> targets(batch.slot_values.size());
        for (size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<Real>(batch.slot_values[i]);
        return g.mse_masked(pred, std::move(targets), std::move(mask));
    }
    std::vector<int64_t> targets(batch.slot_class_ids.begin(), batch.slot_class_ids.end());
    return g.cross_entropy_masked(logits, std::move(targets), std::move(mask));
}

// ---------------------------------------------------------------------------
// tokenization of task examples
// ---------------------------------------------------------------------------

inline std::vector<int> task_input_tokens(const TaskSpec& spec, const Example& ex,
                                          const CharTokenizer& tok, int64_t max_in) {
    std::vector<int> ids = tok.encode(build_input_text(spec, ex));
    if (static_cast<int64_t>(ids.size()) > max_in) {
        ids.resize(static_cast<size_t>(max_in));
        ids.back() = CharTokenizer::end_id;
    }
    return ids;
}

inline std::vector<int> label_target_tokens(const TaskSpec& spec, const Example& ex,
                                            const CharTokenizer& tok, int64_t max_tgt) {
    std::string text = spec.kind == TaskKind::regression ? format_regression_value(ex.value) : ex.label;
    std::vector<int> ids = tok.encode(text);
    if (static_cast<int64_t>(ids.size()) > max_tgt) {
        ids.resize(static_cast<size_t>(max_tgt));
        ids.back() = CharTokenizer::end_id;
    }
    return ids;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

// Teacher-forced log-likelihood of each candidate target given the input; the score the
// rank classifier maximizes.
template <class Real>
std::vector<double> rank_scores(const ModelConfig& cfg, ParameterStore<Real>& store,
                                const std::vector<int>& input,
                                const std::vector<std::vector<int>>& candidates) {
    std::vector<EncDecExample> rows;
    rows.reserve(candidates.size());
    for (const auto& cand : candidates) rows.push_back({input, cand});
    PackedBatch batch = build_encdec_batch(rows, static_cast<int64_t>(input.size()),
                                           [&] {
                                               size_t m = 1;
                                               for (const auto& c : candidates) m = std::max(m, c.size());
                                               return static_cast<int64_t>(m);
                                           }(),
                                           /*packing=*/false);
    Graph<Real> g;
    int enc = encoder_forward(g, cfg, store, batch);
    int logits = decoder_forward(g, cfg, store, enc, batch);
    const Tensor<Real>& lv = g.value(logits);

    std::vector<double> scores(candidates.size(), 0.0);
    for (size_t c = 0; c < candidates.size(); ++c) {
        for (int64_t t = 0; t < batch.tgt_len; ++t) {
            size_t at = static_cast<size_t>(static_cast<int64_t>(c) * batch.tgt_len + t);
            if (batch.dec_segment_ids[at] == 0) continue;
            const Real* row = lv.data.data() + static_cast<int64_t>(at) * cfg.vocab_size;
            Real mx = row[0];
            for (int64_t j = 1; j < cfg.vocab_size; ++j) mx = std::max(mx, row[j]);
            Real z = 0;
            for (int64_t j = 0; j < cfg.vocab_size; ++j) z += std::exp(row[j] - mx);
            int target = batch.dec_target_ids[at];
            scores[c] += static_cast<double>(row[target] - mx - std::log(z));
        }
    }
    return scores;
}

template <class Real>
MetricBundle evaluate(Variant variant, const Checkpoint<Real>& ckpt, const TaskSpec& spec,
                      std::span<const Example> split, const CharTokenizer& tok,
                      int64_t max_in, int64_t max_tgt) {
    if (split.empty()) throw DataError("evaluate: empty split");
    const ModelConfig& cfg = ckpt.config;
    ParameterStore<Real>& store = const_cast<ParameterStore<Real>&>(ckpt.params);

    std::vector<int> pred_classes, gold_classes;
    std::vector<double> pred_values, gold_values;

    if (variant == Variant::EncT5) {
        if (cfg.variant != Variant::EncT5) throw Error("evaluate: checkpoint is not an enct5 model");
        const int64_t chunk = 64;
        for (size_t base = 0; base < split.size(); base += chunk) {
            size_t n = std::min<size_t>(chunk, split.size() - base);
            std::vector<SlotExample> rows;
            for (size_t i = 0; i < n; ++i) {
                const Example& ex = split[base + i];
                SlotExample se;
                se.input = task_input_tokens(spec, ex, tok, max_in);
                se.class_id = spec.kind == TaskKind::classification ? spec.class_id(ex.label) : 1;
                se.value = ex.value;
                rows.push_back(std::move(se));
            }
            PackedBatch batch = build_slot_batch(rows, max_in, /*packing=*/false);
            Graph<Real> g;
            int enc = encoder_forward(g, cfg, store, batch);
            int logits = enct5_forward(g, cfg, store, enc, batch);
            const Tensor<Real>& lv = g.value(logits);
            int64_t width = cfg.num_classes + 1;
            for (size_t i = 0; i < n; ++i) {
                const Real* row = lv.data.data() + static_cast<int64_t>(i) * width;
                const Example& ex = split[base + i];
                if (spec.kind == TaskKind::classification) {
                    pred_classes.push_back(predict_class<Real>({row, static_cast<size_t>(width)},
                                                               cfg.num_classes));
                    gold_classes.push_back(spec.class_id(ex.label));
                } else {
                    pred_values.push_back(static_cast<double>(row[1]));
                    gold_values.push_back(ex.value);
                }
            }
        }
    } else {
        if (cfg.variant == Variant::EncT5) throw Error("evaluate: checkpoint is not an encoder-decoder model");
        std::vector<std::vector<int>> candidates;
        std::vector<double> grid;
        if (spec.kind == TaskKind::classification) {
            for (const auto& label : spec.label_strings) {
                Example tmp;
                tmp.label = label;
                candidates.push_back(label_target_tokens(spec, tmp, tok, max_tgt));
            }
        } else {
            grid = regression_grid(spec);
            for (double v : grid) {
                Example tmp;
                tmp.value = v;
                candidates.push_back(label_target_tokens(spec, tmp, tok, max_tgt));
            }
        }
        for (const Example& ex : split) {
            std::vector<int> input = task_input_tokens(spec, ex, tok, max_in);
            std::vector<double> scores = rank_scores(cfg, store, input, candidates);
            size_t best = 0;
            for (size_t c = 1; c < scores.size(); ++c) {
                if (scores[c] > scores[best]) best = c;
            }
            if (spec.kind == TaskKind::classification) {
                pred_classes.push_back(static_cast<int>(best) + 1);
                gold_classes.push_back(spec.class_id(ex.label));
            } else {
                pred_values.push_back(grid[best]);
                gold_values.push_back(ex.value);
            }
        }
    }

    MetricBundle bundle;
    bundle.task = spec.name;
    for (const auto& m : spec.metrics) {
        bool degenerate = false;
        double v = 0;
        if (m == "accuracy") v = accuracy(pred_classes, gold_classes);
        else if (m == "f1") v = f1(pred_classes, gold_classes, /*positive_class=*/1);
        else if (m == "matthews") v = matthews(pred_classes, gold_classes);
        else if (m == "pearson") v = pearson(pred_values, gold_values, &degenerate);
        else if (m == "spearman") v = spearman(pred_values, gold_values, &degenerate);
        bundle.values[m] = v;
        bundle.degenerate = bundle.degenerate || degenerate;
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

template <class Real>
struct TrainResult {
    Checkpoint<Real> final_ckpt;
    Checkpoint<Real> best_ckpt;
    int64_t best_step = 0;
    double best_score = 0.0;
    std::vector<std::pair<int64_t, double>> loss_history;  // (step, loss)
    struct EvalRow {
        int64_t step;
        MetricBundle bundle;
    };
    std::vector<EvalRow> eval_history;
    double per_step_ms = 0.0;
};

template <class Real>
using CheckpointSink = std::function<void(int64_t step, const Checkpoint<Real>&)>;

// Span-corruption pretraining of the plain T5 graph on a token corpus. Emits a
// checkpoint every eval_every steps (and at the end) through on_checkpoint.
template <class Real>
TrainResult<Real> pretrain(const TrainConfig& tc, const ModelConfig& mc,
                           const std::vector<std::vector<int>>& corpus, const CharTokenizer& tok,
                           CheckpointSink<Real> on_checkpoint = nullptr) {
    tc.validate();
    mc.validate();
    if (mc.variant == Variant::EncT5) throw ConfigError("pretrain: variant must be encoder-decoder");
    if (corpus.empty()) throw DataError("pretrain: empty corpus");

    Checkpoint<Real> ckpt;
    ckpt.config = mc;
    ckpt.seed = tc.seed;
    ckpt.params = init_params<Real>(mc, tc.seed);
    AdafactorState<Real> opt = adafactor_init(ckpt.params);
    Rng data_rng = rng_for(tc.seed, "pretrain/data");

    TrainResult<Real> result;
    auto t0 = std::chrono::steady_clock::now();
    for (int64_t step = 1; step <= tc.steps; ++step) {
        std::vector<EncDecExample> examples;
        examples.reserve(static_cast<size_t>(tc.batch_size));
        for (int64_t i = 0; i < tc.batch_size; ++i) {
            const auto& seq = corpus[data_rng.below(corpus.size())];
            SpanCorruptResult sc = span_corrupt(seq, data_rng, 0.15, 3.0, tok);
            EncDecExample ex;
            ex.input = std::move(sc.input);
            ex.target = std::move(sc.target);
            if (static_cast<int64_t>(ex.input.size()) > tc.max_input_len) {
                ex.input.resize(static_cast<size_t>(tc.max_input_len));
            }
            if (static_cast<int64_t>(ex.target.size()) > tc.max_target_len) {
                ex.target.resize(static_cast<size_t>(tc.max_target_len));
                ex.target.back() = CharTokenizer::end_id;
            }
            examples.push_back(std::move(ex));
        }
        PackedBatch batch = build_encdec_batch(examples, tc.max_input_len, tc.max_target_len,
                                               tc.packing_enabled);
        double loss;
        try {
            ckpt.params.zero_grads();
            Graph<Real> g;
            int loss_node = t5_loss_node(g, mc, ckpt.params, batch);
            loss = static_cast<double>(g.value(loss_node).data[0]);
            g.backward(loss_node);
            adafactor_step(ckpt.params, opt, static_cast<Real>(tc.learning_rate));
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("pretrain: diverged at step " + std::to_string(step) + ": " + e.what());
        }
        result.loss_history.emplace_back(step, loss);
        if (on_checkpoint && (step % tc.eval_every == 0 || step == tc.steps)) {
            on_checkpoint(step, ckpt);
        }
    }
    auto t1 = std::chrono::steady_clock::now();
    result.per_step_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() /
                         static_cast<double>(tc.steps);
    result.final_ckpt = ckpt;
    result.best_ckpt = std::move(ckpt);
    result.best_step = tc.steps;
    return result;
}

// Fine-tunes any variant on a task. init may be null for random initialization (the
// Table-1-style contrast); otherwise its config drives the model and must match the
// requested variant. All trainable weights update. The best checkpoint is selected on
// the validation set when one exists.
template <class Real>
TrainResult<Real> finetune(const TrainConfig& tc, Variant variant, const Checkpoint<Real>* init,
                           const ModelConfig& random_cfg, const TaskSpec& spec, const TaskData& data,
                           const CharTokenizer& tok, CheckpointSink<Real> on_checkpoint = nullptr) {
    tc.validate();
    spec.validate();
    if (data.train.empty()) throw DataError("finetune: empty training split");

    Checkpoint<Real> ckpt;
    if (init) {
        ckpt = *init;
        if (variant == Variant::EncT5) {
            if (ckpt.config.variant != Variant::EncT5) {
                throw ConfigError("finetune: enct5 requires a surgered enct5 checkpoint");
            }
        } else {
            if (ckpt.config.variant == Variant::EncT5) {
                throw ConfigError("finetune: encoder-decoder variant given an enct5 checkpoint");
            }
            if (variant == Variant::OneDecT5 && ckpt.config.effective_decoder_layers() != 1) {
                throw ConfigError("finetune: 1dect5 requires a single-decoder-layer checkpoint (run surgery)");
            }
        }
    } else {
        ckpt.config = random_cfg;
        if (variant == Variant::EncT5) {
            ckpt.config.variant = Variant::EncT5;
            ckpt.config.num_classes = spec.num_classes();
            ckpt.config.task_kind = spec.kind;
        } else if (variant == Variant::OneDecT5) {
            ckpt.config.variant = Variant::OneDecT5;
        } else {
            ckpt.config.variant = Variant::T5;
        }
        ckpt.config.validate();
        ckpt.seed = tc.seed;
        ckpt.params = init_params<Real>(ckpt.config, tc.seed);
    }
    const ModelConfig& cfg = ckpt.config;
    if (variant == Variant::EncT5 && spec.kind == TaskKind::classification &&
        cfg.num_classes != spec.num_classes()) {
        throw ConfigError("finetune: checkpoint class count does not match task");
    }

    AdafactorState<Real> opt = adafactor_init(ckpt.params);
    Rng data_rng = rng_for(tc.seed, "finetune/data");

    TrainResult<Real> result;
    result.best_score = -1e300;
    auto record_eval = [&](int64_t step) {
        if (data.validation.empty()) return;
        MetricBundle bundle = evaluate(variant, ckpt, spec, data.validation, tok, tc.max_input_len,
                                       tc.max_target_len);
        result.eval_history.push_back({step, bundle});
        double score = task_score(bundle);
        if (score > result.best_score) {
            result.best_score = score;
            result.best_step = step;
            result.best_ckpt = ckpt;
        }
        if (on_checkpoint) on_checkpoint(step, ckpt);
    };

    double train_ms = 0.0;
    for (int64_t step = 1; step <= tc.steps; ++step) {
        auto step_t0 = std::chrono::steady_clock::now();
        std::vector<SlotExample> slot_rows;
        std::vector<EncDecExample> text_rows;
        for (int64_t i = 0; i < tc.batch_size; ++i) {
            const Example& ex = data.train[data_rng.below(data.train.size())];
            if (variant == Variant::EncT5) {
                SlotExample se;
                se.input = task_input_tokens(spec, ex, tok, tc.max_input_len);
                se.class_id = spec.kind == TaskKind::classification ? spec.class_id(ex.label) : 1;
                se.value = ex.value;
                slot_rows.push_back(std::move(se));
            } else {
                EncDecExample ee;
                ee.input = task_input_tokens(spec, ex, tok, tc.max_input_len);
                ee.target = label_target_tokens(spec, ex, tok, tc.max_target_len);
                text_rows.push_back(std::move(ee));
            }
        }
        double loss;
        try {
            ckpt.params.zero_grads();
            Graph<Real> g;
            int loss_node;
            if (variant == Variant::EncT5) {
                PackedBatch batch = build_slot_batch(slot_rows, tc.max_input_len, tc.packing_enabled);
                loss_node = enct5_loss_node(g, cfg, ckpt.params, batch);
            } else {
                PackedBatch batch = build_encdec_batch(text_rows, tc.max_input_len, tc.max_target_len,
                                                       tc.packing_enabled);
                loss_node = t5_loss_node(g, cfg, ckpt.params, batch);
            }
            loss = static_cast<double>(g.value(loss_node).data[0]);
            g.backward(loss_node);
            adafactor_step(ckpt.params, opt, static_cast<Real>(tc.learning_rate));
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("finetune: diverged at step " + std::to_string(step) + ": " + e.what());
        }
        result.loss_history.emplace_back(step, loss);
        auto step_t1 = std::chrono::steady_clock::now();
        train_ms += std::chrono::duration<double, std::milli>(step_t1 - step_t0).count();
        if (step % tc.eval_every == 0 || step == tc.steps) record_eval(step);
    }
    result.per_step_ms = train_ms / static_cast<double>(tc.steps);
    if (result.best_score == -1e300 || tc.selection == "last") {
        result.best_ckpt = ckpt;
        result.best_step = tc.steps;
        if (result.best_score == -1e300) result.best_score = 0.0;
    }
    result.final_ckpt = std::move(ckpt);
    return result;
}

// Per-step training time of EncT5 vs T5 at a matched base config, on the same task
// stream. Reported informationally; hardware-dependent.
struct StepTimeReport {
    double t5_ms = 0.0;
    double enct5_ms = 0.0;
    int64_t steps = 0;
};

template <class Real>
StepTimeReport steptime_report(const ModelConfig& base, const TrainConfig& tc, const TaskSpec& spec,
                               const TaskData& data, const CharTokenizer& tok, int64_t steps) {
    StepTimeReport report;
    report.steps = steps;
    TrainConfig run = tc;
    run.steps = steps;
    run.eval_every = steps + 1;  // no mid-run evals

    ModelConfig t5_cfg = base;
    t5_cfg.variant = Variant::T5;
    TrainResult<Real> rt5 = finetune<Real>(run, Variant::T5, nullptr, t5_cfg, spec, data, tok);
    report.t5_ms = rt5.per_step_ms;

    ModelConfig enc_cfg = base;
    enc_cfg.variant = Variant::EncT5;
    TrainResult<Real> renc = finetune<Real>(run, Variant::EncT5, nullptr, enc_cfg, spec, data, tok);
    report.enct5_ms = renc.per_step_ms;
    return report;
}

}  // namespace t5lab
