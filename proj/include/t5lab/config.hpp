#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace t5lab {

enum class Variant { T5, OneDecT5, EncT5 };
enum class TaskKind { classification, regression };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);
std::string task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& s);

struct ModelConfig {
    int64_t d_model = 32;
    int64_t d_ff = 64;
    int64_t num_heads = 4;
    int64_t d_kv = 8;  // per-head key/value width
    int64_t num_encoder_layers = 2;
    int64_t num_decoder_layers = 2;
    int64_t vocab_size = 128;
    int64_t rel_buckets = 16;
    int64_t rel_max_distance = 32;
    double norm_eps = 1e-6;
    Variant variant = Variant::T5;
    int64_t num_classes = 2;  // EncT5 only; 1 for regression
    TaskKind task_kind = TaskKind::classification;

    int64_t inner_dim() const { return num_heads * d_kv; }
    // OneDecT5 runs exactly one decoder layer regardless of the configured depth
    int64_t effective_decoder_layers() const {
        return variant == Variant::OneDecT5 ? 1 : num_decoder_layers;
    }

    void validate() const;  // throws ConfigError naming the offending field
};

struct TrainConfig {
    int64_t batch_size = 32;       // examples per step
    int64_t max_input_len = 64;
    int64_t max_target_len = 8;
    double learning_rate = 1e-3;
    int64_t steps = 2000;
    uint64_t seed = 1;
    bool packing_enabled = true;
    int64_t eval_every = 100;        // also the checkpoint cadence
    std::string selection = "best_val";  // or "last"
    std::string precision = "f64";       // or "f32"

    void validate() const;
};

// Named presets: "desk" is the runnable default; "paper" carries the publication-scale
// hyperparameters verbatim (batch 2048, input 512, target 62, lr 1e-3, 50k steps).
TrainConfig train_preset(const std::string& name);

// Flat key-value text: one `key=value` per line, '#' starts a comment.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> parse_kv_file(const std::string& path);

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv);
ModelConfig model_config_from_file(const std::string& path);
std::map<std::string, std::string> model_config_to_kv(const ModelConfig& c);

// Applies `preset=` first (when present), then per-key overrides.
TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv);
TrainConfig train_config_from_file(const std::string& path);
std::map<std::string, std::string> train_config_to_kv(const TrainConfig& c);

}  // namespace t5lab
