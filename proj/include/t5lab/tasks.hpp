#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "t5lab/config.hpp"

namespace t5lab {

struct Example {
    std::string text_a;
    std::string text_b;   // empty for single-segment tasks
    std::string label;    // classification target
    double value = 0.0;   // regression target
};

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::classification;
    std::vector<std::string> label_strings;  // ordered; index i maps to class id i+1
    std::vector<std::string> metrics;        // accuracy|f1|matthews|pearson|spearman

    // source: "synthetic:majority" | "synthetic:pairmatch" | "synthetic:linreg" | "file"
    std::string source = "file";
    std::string train_file, val_file, test_file;  // .tsv or .jsonl
    uint64_t seed = 0;
    int64_t train_size = 2000, val_size = 500, test_size = 500;

    // input template: "<prefix> text_a <separator> text_b" (separator literal under the
    // character tokenizer)
    std::string prefix;
    std::string separator = "</s>";

    // regression label grid for the text-to-text variants
    double min_value = 0.0, max_value = 1.0;
    int64_t grid = 21;

    int64_t num_classes() const {
        return kind == TaskKind::regression ? 1 : static_cast<int64_t>(label_strings.size());
    }
    int class_id(const std::string& label) const;  // 1-based; throws DataError if unknown
    const std::string& label_for_class(int id) const;
    void validate() const;
};

TaskSpec task_spec_from_kv(const std::map<std::string, std::string>& kv);
TaskSpec task_spec_from_file(const std::string& path);

struct TaskData {
    std::vector<Example> train, validation, test;

    const std::vector<Example>& split(const std::string& name) const;
};

// Applies the input template.
std::string build_input_text(const TaskSpec& spec, const Example& ex);

// Quantized value strings used by the text-to-text variants for regression.
std::vector<double> regression_grid(const TaskSpec& spec);
std::string format_regression_value(double v);

// Parses TSV (tab-separated, header row with text_a[, text_b], label) or JSONL (objects
// with "text_a"[, "text_b"], "label") based on the file extension, or generates the
// named synthetic task. Deterministic order; malformed rows are reported with their line
// number.
TaskData load_task(const TaskSpec& spec);

// Synthetic generators (also reachable via load_task with source=synthetic:<id>):
//   majority  - label is the letter in strict majority; learnable by count pooling
//   pairmatch - text_b drawn from the same letter topic as text_a or not
//   linreg    - value is the a-fraction of the class letters plus small noise
TaskData synth_task(const std::string& generator_id, uint64_t seed, int64_t train_size,
                    int64_t val_size, int64_t test_size);

// Sentences of lexicon words over the same alphabet the synthetic tasks use; the
// pretraining corpus.
std::vector<std::string> toy_corpus(int64_t size, uint64_t seed);

}  // namespace t5lab
