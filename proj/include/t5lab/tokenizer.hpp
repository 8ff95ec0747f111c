#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "t5lab/error.hpp"

namespace t5lab {

// Character-level tokenizer with a fixed layout:
//   id 0            <pad> (doubles as the decoder start token)
//   id 1            </s>  (end of sequence)
//   ids 2..96       printable ASCII 32..126
//   top num_sentinels ids   span-corruption sentinels, sentinel k = vocab_size-1-k
// Bytes outside the printable range fall back to '?'.
class CharTokenizer {
public:
    explicit CharTokenizer(int64_t vocab_size = 128, int64_t num_sentinels = 16)
        : vocab_size_(vocab_size), num_sentinels_(num_sentinels) {
        if (vocab_size_ < 2 + 95 + num_sentinels_) {
            throw ConfigError("tokenizer: vocab_size " + std::to_string(vocab_size_) +
                              " too small for 97 fixed ids + " + std::to_string(num_sentinels_) +
                              " sentinels");
        }
    }

    static constexpr int pad_id = 0;
    static constexpr int end_id = 1;

    int64_t vocab_size() const { return vocab_size_; }
    int64_t num_sentinels() const { return num_sentinels_; }

    int sentinel(int64_t k) const {
        if (k < 0 || k >= num_sentinels_) throw Error("tokenizer: sentinel index out of range");
        return static_cast<int>(vocab_size_ - 1 - k);
    }

    bool is_sentinel(int id) const { return id >= vocab_size_ - num_sentinels_ && id < vocab_size_; }

    std::vector<int> encode(std::string_view text, bool append_end = true) const {
        std::vector<int> out;
        out.reserve(text.size() + 1);
        for (unsigned char c : text) {
            out.push_back(c >= 32 && c <= 126 ? static_cast<int>(c) - 30 : '?' - 30);
        }
        if (append_end) out.push_back(end_id);
        return out;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id == pad_id) continue;
            if (id == end_id) {
                out += "</s>";
            } else if (is_sentinel(id)) {
                out += "<x" + std::to_string(vocab_size_ - 1 - id) + ">";
            } else if (id >= 2 && id <= 96) {
                out += static_cast<char>(id + 30);
            } else {
                out += "?";
            }
        }
        return out;
    }

private:
    int64_t vocab_size_;
    int64_t num_sentinels_;
};

}  // namespace t5lab
