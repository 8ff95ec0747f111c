#include "t5lab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "t5lab/error.hpp"
#include "t5lab/rng.hpp"

namespace t5lab {

int TaskSpec::class_id(const std::string& label) const {
    for (size_t i = 0; i < label_strings.size(); ++i) {
        if (label_strings[i] == label) return static_cast<int>(i) + 1;
    }
    throw DataError("task '" + name + "': label '" + label + "' not in label set");
}

const std::string& TaskSpec::label_for_class(int id) const {
    if (id < 1 || id > static_cast<int>(label_strings.size())) {
        throw DataError("task '" + name + "': class id " + std::to_string(id) + " out of range");
    }
    return label_strings[static_cast<size_t>(id) - 1];
}

void TaskSpec::validate() const {
    if (name.empty()) throw ConfigError("task: name must be set");
    if (kind == TaskKind::classification && label_strings.size() < 2) {
        throw ConfigError("task: classification needs at least 2 labels");
    }
    if (metrics.empty()) throw ConfigError("task: metric list must not be empty");
    for (const auto& m : metrics) {
        if (m != "accuracy" && m != "f1" && m != "matthews" && m != "pearson" && m != "spearman") {
            throw ConfigError("task: unknown metric '" + m + "'");
        }
    }
    if (kind == TaskKind::regression && grid < 2) throw ConfigError("task: grid must be >= 2");
    if (kind == TaskKind::regression && !(max_value > min_value)) {
        throw ConfigError("task: max_value must exceed min_value");
    }
}

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

TaskSpec task_spec_from_kv(const std::map<std::string, std::string>& kv) {
    TaskSpec spec;
    for (const auto& [key, v] : kv) {
        if (key == "name") spec.name = v;
        else if (key == "kind") spec.kind = task_kind_from_name(v);
        else if (key == "labels") spec.label_strings = split_list(v);
        else if (key == "metrics") spec.metrics = split_list(v);
        else if (key == "source") spec.source = v;
        else if (key == "train_file") spec.train_file = v;
        else if (key == "val_file") spec.val_file = v;
        else if (key == "test_file") spec.test_file = v;
        else if (key == "seed") spec.seed = std::stoull(v);
        else if (key == "train_size") spec.train_size = std::stoll(v);
        else if (key == "val_size") spec.val_size = std::stoll(v);
        else if (key == "test_size") spec.test_size = std::stoll(v);
        else if (key == "prefix") spec.prefix = v;
        else if (key == "separator") spec.separator = v;
        else if (key == "min_value") spec.min_value = std::stod(v);
        else if (key == "max_value") spec.max_value = std::stod(v);
        else if (key == "grid") spec.grid = std::stoll(v);
        else throw ConfigError("task spec: unknown key '" + key + "'");
    }
    spec.validate();
    return spec;
}

TaskSpec task_spec_from_file(const std::string& path) {
    return task_spec_from_kv(parse_kv_file(path));
}

const std::vector<Example>& TaskData::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "validation" || name == "val") return validation;
    if (name == "test") return test;
    throw DataError("unknown split '" + name + "'");
}

std::string build_input_text(const TaskSpec& spec, const Example& ex) {
    std::string out;
    if (!spec.prefix.empty()) out += spec.prefix + " ";
    out += ex.text_a;
    if (!ex.text_b.empty()) out += " " + spec.separator + " " + ex.text_b;
    return out;
}

std::vector<double> regression_grid(const TaskSpec& spec) {
    std::vector<double> out;
    for (int64_t i = 0; i < spec.grid; ++i) {
        out.push_back(spec.min_value + (spec.max_value - spec.min_value) * static_cast<double>(i) /
                                           static_cast<double>(spec.grid - 1));
    }
    return out;
}

std::string format_regression_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

namespace {

Example parse_tsv_row(const TaskSpec& spec, const std::vector<std::string>& header,
                      const std::string& line, int lineno) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    if (fields.size() != header.size()) {
        throw DataError("line " + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    Example ex;
    bool have_label = false;
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "text_a") ex.text_a = fields[i];
        else if (header[i] == "text_b") ex.text_b = fields[i];
        else if (header[i] == "label") {
            ex.label = fields[i];
            have_label = true;
        } else {
            throw DataError("line 1: unknown column '" + header[i] + "'");
        }
    }
    if (!have_label) throw DataError("line 1: missing 'label' column");
    if (spec.kind == TaskKind::classification) {
        try {
            spec.class_id(ex.label);
        } catch (const DataError&) {
            throw DataError("line " + std::to_string(lineno) + ": unknown label '" + ex.label + "'");
        }
    } else {
        try {
            ex.value = std::stod(ex.label);
        } catch (const std::exception&) {
            throw DataError("line " + std::to_string(lineno) + ": invalid numeric label '" + ex.label + "'");
        }
    }
    return ex;
}

std::vector<Example> load_tsv(const TaskSpec& spec, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("'" + path + "': empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header;
    {
        std::string cur;
        for (char c : line) {
            if (c == '\t') {
                header.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        header.push_back(cur);
    }
    std::vector<Example> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        out.push_back(parse_tsv_row(spec, header, line, lineno));
    }
    return out;
}

std::vector<Example> load_jsonl(const TaskSpec& spec, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::vector<Example> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
        }
        Example ex;
        if (!j.contains("text_a") || !j.contains("label")) {
            throw DataError("line " + std::to_string(lineno) + ": missing text_a or label");
        }
        ex.text_a = j.at("text_a").get<std::string>();
        if (j.contains("text_b") && !j.at("text_b").is_null()) {
            ex.text_b = j.at("text_b").get<std::string>();
        }
        if (spec.kind == TaskKind::classification) {
            ex.label = j.at("label").get<std::string>();
            try {
                spec.class_id(ex.label);
            } catch (const DataError&) {
                throw DataError("line " + std::to_string(lineno) + ": unknown label '" + ex.label + "'");
            }
        } else {
            if (j.at("label").is_number()) {
                ex.value = j.at("label").get<double>();
                ex.label = format_regression_value(ex.value);
            } else {
                ex.label = j.at("label").get<std::string>();
                try {
                    ex.value = std::stod(ex.label);
                } catch (const std::exception&) {
                    throw DataError("line " + std::to_string(lineno) + ": invalid numeric label");
                }
            }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<Example> load_file(const TaskSpec& spec, const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".tsv") == 0) {
        return load_tsv(spec, path);
    }
    if (path.size() >= 6 && path.compare(path.size() - 6, 6, ".jsonl") == 0) {
        return load_jsonl(spec, path);
    }
    throw DataError("'" + path + "': expected a .tsv or .jsonl file");
}

// ---- synthetic generators ----
// Shared alphabet: class letters a/b, filler c..f; words in the pretraining lexicon are
// built from the same letters so fine-tuning inputs are in-distribution.

constexpr int kMajorityTotal = 14;   // a-count + b-count per example
constexpr int kMajorityMargin = 2;   // majority wins by exactly this many
constexpr int kMajorityFiller = 4;

std::string shuffled(std::string s, Rng& rng) {
    for (size_t i = s.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.below(i));
        std::swap(s[i - 1], s[j]);
    }
    return s;
}

Example gen_majority(Rng& rng, int64_t index) {
    bool a_major = index % 2 == 0;  // exactly balanced
    int hi = (kMajorityTotal + kMajorityMargin) / 2;
    int lo = kMajorityTotal - hi;
    std::string s;
    s.append(static_cast<size_t>(a_major ? hi : lo), 'a');
    s.append(static_cast<size_t>(a_major ? lo : hi), 'b');
    for (int i = 0; i < kMajorityFiller; ++i) {
        s += static_cast<char>('c' + static_cast<char>(rng.below(4)));
    }
    Example ex;
    ex.text_a = shuffled(s, rng);
    ex.label = a_major ? "a" : "b";
    return ex;
}

const char* kTopicWords[2][4] = {{"abc", "cab", "bca", "acb"}, {"def", "fed", "edf", "dfe"}};

std::string topic_text(int topic, Rng& rng) {
    std::string s;
    for (int w = 0; w < 2; ++w) {
        if (w) s += ' ';
        s += kTopicWords[topic][rng.below(4)];
    }
    return s;
}

Example gen_pairmatch(Rng& rng, int64_t index) {
    bool match = index % 2 == 0;
    int topic_a = static_cast<int>(rng.below(2));
    int topic_b = match ? topic_a : 1 - topic_a;
    Example ex;
    ex.text_a = topic_text(topic_a, rng);
    ex.text_b = topic_text(topic_b, rng);
    ex.label = match ? "yes" : "no";
    return ex;
}

Example gen_linreg(Rng& rng, int64_t) {
    int total = 12;
    int na = 2 + static_cast<int>(rng.below(9));  // 2..10
    std::string s;
    s.append(static_cast<size_t>(na), 'a');
    s.append(static_cast<size_t>(total - na), 'b');
    for (int i = 0; i < 4; ++i) s += static_cast<char>('c' + static_cast<char>(rng.below(4)));
    Example ex;
    ex.text_a = shuffled(s, rng);
    double noise = rng.normal(0.0, 0.02);
    ex.value = std::clamp(static_cast<double>(na) / total + noise, 0.0, 1.0);
    ex.label = format_regression_value(ex.value);
    return ex;
}

}  // namespace

TaskData synth_task(const std::string& generator_id, uint64_t seed, int64_t train_size,
                    int64_t val_size, int64_t test_size) {
    Example (*gen)(Rng&, int64_t) = nullptr;
    if (generator_id == "majority") gen = gen_majority;
    else if (generator_id == "pairmatch") gen = gen_pairmatch;
    else if (generator_id == "linreg") gen = gen_linreg;
    else throw ConfigError("synth_task: unknown generator '" + generator_id + "'");

    Rng rng = rng_for(seed, "synth/" + generator_id);
    TaskData data;
    std::set<std::string> seen;  // splits stay disjoint
    auto fill = [&](std::vector<Example>& split, int64_t size) {
        int64_t index = 0;
        while (static_cast<int64_t>(split.size()) < size) {
            Example ex = gen(rng, index);
            std::string key = ex.text_a + "\x1f" + ex.text_b;
            if (seen.insert(key).second) {
                split.push_back(std::move(ex));
                ++index;
            }
        }
    };
    fill(data.train, train_size);
    fill(data.validation, val_size);
    fill(data.test, test_size);
    return data;
}

TaskData load_task(const TaskSpec& spec) {
    spec.validate();
    if (spec.source.rfind("synthetic:", 0) == 0) {
        return synth_task(spec.source.substr(10), spec.seed, spec.train_size, spec.val_size,
                          spec.test_size);
    }
    if (spec.source != "file") throw ConfigError("task: unknown source '" + spec.source + "'");
    TaskData data;
    if (spec.train_file.empty()) throw ConfigError("task: train_file must be set for file source");
    data.train = load_file(spec, spec.train_file);
    if (!spec.val_file.empty()) data.validation = load_file(spec, spec.val_file);
    if (!spec.test_file.empty()) data.test = load_file(spec, spec.test_file);
    return data;
}

std::vector<std::string> toy_corpus(int64_t size, uint64_t seed) {
    // Low-entropy word lexicon over the task alphabet; spans are predictable from
    // neighboring characters, so denoising is learnable.
    static const char* kLexicon[] = {"abab", "baba", "acac", "bdbd", "cdcd",
                                     "dede", "efef", "fafa", "abc",  "fed"};
    Rng rng = rng_for(seed, "corpus");
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(size));
    for (int64_t i = 0; i < size; ++i) {
        int words = 3 + static_cast<int>(rng.below(3));
        std::string s;
        for (int w = 0; w < words; ++w) {
            if (w) s += ' ';
            s += kLexicon[rng.below(10)];
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace t5lab
