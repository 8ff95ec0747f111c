#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "t5lab/rng.hpp"
#include "t5lab/tokenizer.hpp"

namespace t5lab {

struct SpanCorruptResult {
    std::vector<int> input;   // original tokens with each span replaced by one sentinel
    std::vector<int> target;  // sentinel_k + span_k for every span, terminated by </s>
};

// Denoising objective: walks the sequence, starting a span with probability
// corruption_rate / mean_span_len and drawing its length from a geometric with the given
// mean, so ~corruption_rate of tokens end up in spans. Spans are separated by at least
// one kept token and capped by the sentinel budget. Interleaving the input's
// non-sentinel tokens with the target's spans reconstructs the original sequence.
// Sequences shorter than 2 tokens come back uncorrupted with an empty-span target.
inline SpanCorruptResult span_corrupt(std::span<const int> tokens, Rng& rng,
                                      double corruption_rate, double mean_span_len,
                                      const CharTokenizer& tok) {
    SpanCorruptResult out;
    int64_t n = static_cast<int64_t>(tokens.size());
    if (n < 2 || corruption_rate <= 0.0) {
        out.input.assign(tokens.begin(), tokens.end());
        out.target.push_back(CharTokenizer::end_id);
        return out;
    }
    double p_start = corruption_rate / std::max(1.0, mean_span_len);
    double q = 1.0 - 1.0 / std::max(1.0, mean_span_len);  // geometric survival

    std::vector<std::pair<int64_t, int64_t>> spans;  // (start, len)
    int64_t pos = 0;
    while (pos < n && static_cast<int64_t>(spans.size()) < tok.num_sentinels()) {
        if (rng.uniform() < p_start) {
            int64_t len = 1;
            if (q > 0.0) {
                double u = rng.uniform();
                len = 1 + static_cast<int64_t>(std::floor(std::log(1.0 - u) / std::log(q)));
            }
            len = std::min(len, n - pos);
            spans.emplace_back(pos, len);
            pos += len + 1;  // keep at least one token between spans
        } else {
            ++pos;
        }
    }

    size_t span_i = 0;
    for (int64_t i = 0; i < n;) {
        if (span_i < spans.size() && spans[span_i].first == i) {
            int sent = tok.sentinel(static_cast<int64_t>(span_i));
            out.input.push_back(sent);
            out.target.push_back(sent);
            for (int64_t j = 0; j < spans[span_i].second; ++j) {
                out.target.push_back(tokens[static_cast<size_t>(i + j)]);
            }
            i += spans[span_i].second;
            ++span_i;
        } else {
            out.input.push_back(tokens[static_cast<size_t>(i)]);
            ++i;
        }
    }
    out.target.push_back(CharTokenizer::end_id);
    return out;
}

}  // namespace t5lab
