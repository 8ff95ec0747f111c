#include "t5lab/config.hpp"

#include <fstream>
#include <sstream>

#include "t5lab/error.hpp"

namespace t5lab {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::T5: return "t5";
        case Variant::OneDecT5: return "1dect5";
        case Variant::EncT5: return "enct5";
    }
    return "?";
}

Variant variant_from_name(const std::string& s) {
    if (s == "t5") return Variant::T5;
    if (s == "1dect5") return Variant::OneDecT5;
    if (s == "enct5") return Variant::EncT5;
    throw ConfigError("variant: unknown value '" + s + "' (expected t5|1dect5|enct5)");
}

std::string task_kind_name(TaskKind k) {
    return k == TaskKind::classification ? "classification" : "regression";
}

TaskKind task_kind_from_name(const std::string& s) {
    if (s == "classification") return TaskKind::classification;
    if (s == "regression") return TaskKind::regression;
    throw ConfigError("task_kind: unknown value '" + s + "'");
}

void ModelConfig::validate() const {
    auto positive = [](int64_t v, const char* field) {
        if (v <= 0) throw ConfigError(std::string(field) + ": must be positive");
    };
    positive(d_model, "d_model");
    positive(d_ff, "d_ff");
    positive(num_heads, "num_heads");
    positive(d_kv, "d_kv");
    positive(vocab_size, "vocab_size");
    positive(rel_buckets, "rel_buckets");
    positive(rel_max_distance, "rel_max_distance");
    if (num_encoder_layers < 0) throw ConfigError("num_encoder_layers: must be >= 0");
    if (num_decoder_layers < 0) throw ConfigError("num_decoder_layers: must be >= 0");
    if (num_encoder_layers > 99 || num_decoder_layers > 99) {
        throw ConfigError("layer count: at most 99 layers per stack");
    }
    if (rel_buckets % 2 != 0) throw ConfigError("rel_buckets: must be even");
    if (rel_max_distance <= rel_buckets / 4) {
        throw ConfigError("rel_max_distance: must exceed rel_buckets/4");
    }
    if (norm_eps <= 0) throw ConfigError("norm_eps: must be positive");
    if (variant == Variant::EncT5 && num_classes < 1) {
        throw ConfigError("num_classes: must be >= 1 for enct5");
    }
}

void TrainConfig::validate() const {
    auto positive = [](int64_t v, const char* field) {
        if (v <= 0) throw ConfigError(std::string(field) + ": must be positive");
    };
    positive(batch_size, "batch_size");
    positive(max_input_len, "max_input_len");
    positive(max_target_len, "max_target_len");
    positive(steps, "steps");
    positive(eval_every, "eval_every");
    if (learning_rate <= 0) throw ConfigError("learning_rate: must be positive");
    if (selection != "best_val" && selection != "last") {
        throw ConfigError("selection: expected best_val|last");
    }
    if (precision != "f64" && precision != "f32") {
        throw ConfigError("precision: expected f64|f32");
    }
}

TrainConfig train_preset(const std::string& name) {
    TrainConfig c;
    if (name == "desk") {
        return c;  // struct defaults are the desk preset
    }
    if (name == "paper") {
        c.batch_size = 2048;
        c.max_input_len = 512;
        c.max_target_len = 62;
        c.learning_rate = 1e-3;
        c.steps = 50000;
        c.eval_every = 1000;
        return c;
    }
    throw ConfigError("preset: unknown value '" + name + "' (expected desk|paper)");
}

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto strip = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        std::string body = strip(line);
        if (body.empty()) continue;
        auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        std::string key = strip(body.substr(0, eq));
        std::string value = strip(body.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (kv.count(key)) throw ConfigError("config: duplicate key '" + key + "'");
        kv[key] = value;
    }
    return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kv_text(buf.str());
}

namespace {

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": invalid integer '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": invalid number '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": invalid boolean '" + v + "'");
}

}  // namespace

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    for (const auto& [key, v] : kv) {
        if (key == "d_model") c.d_model = to_int(key, v);
        else if (key == "d_ff") c.d_ff = to_int(key, v);
        else if (key == "num_heads") c.num_heads = to_int(key, v);
        else if (key == "d_kv") c.d_kv = to_int(key, v);
        else if (key == "num_encoder_layers") c.num_encoder_layers = to_int(key, v);
        else if (key == "num_decoder_layers") c.num_decoder_layers = to_int(key, v);
        else if (key == "vocab_size") c.vocab_size = to_int(key, v);
        else if (key == "rel_buckets") c.rel_buckets = to_int(key, v);
        else if (key == "rel_max_distance") c.rel_max_distance = to_int(key, v);
        else if (key == "norm_eps") c.norm_eps = to_double(key, v);
        else if (key == "variant") c.variant = variant_from_name(v);
        else if (key == "num_classes") c.num_classes = to_int(key, v);
        else if (key == "task_kind") c.task_kind = task_kind_from_name(v);
        else throw ConfigError("model config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

ModelConfig model_config_from_file(const std::string& path) {
    return model_config_from_kv(parse_kv_file(path));
}

std::map<std::string, std::string> model_config_to_kv(const ModelConfig& c) {
    std::map<std::string, std::string> kv;
    kv["d_model"] = std::to_string(c.d_model);
    kv["d_ff"] = std::to_string(c.d_ff);
    kv["num_heads"] = std::to_string(c.num_heads);
    kv["d_kv"] = std::to_string(c.d_kv);
    kv["num_encoder_layers"] = std::to_string(c.num_encoder_layers);
    kv["num_decoder_layers"] = std::to_string(c.num_decoder_layers);
    kv["vocab_size"] = std::to_string(c.vocab_size);
    kv["rel_buckets"] = std::to_string(c.rel_buckets);
    kv["rel_max_distance"] = std::to_string(c.rel_max_distance);
    std::ostringstream eps;
    eps << c.norm_eps;
    kv["norm_eps"] = eps.str();
    kv["variant"] = variant_name(c.variant);
    kv["num_classes"] = std::to_string(c.num_classes);
    kv["task_kind"] = task_kind_name(c.task_kind);
    return kv;
}

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    auto preset = kv.find("preset");
    if (preset != kv.end()) c = train_preset(preset->second);
    for (const auto& [key, v] : kv) {
        if (key == "preset") continue;
        else if (key == "batch_size") c.batch_size = to_int(key, v);
        else if (key == "max_input_len") c.max_input_len = to_int(key, v);
        else if (key == "max_target_len") c.max_target_len = to_int(key, v);
        else if (key == "learning_rate") c.learning_rate = to_double(key, v);
        else if (key == "steps") c.steps = to_int(key, v);
        else if (key == "seed") c.seed = static_cast<uint64_t>(to_int(key, v));
        else if (key == "packing_enabled") c.packing_enabled = to_bool(key, v);
        else if (key == "eval_every") c.eval_every = to_int(key, v);
        else if (key == "selection") c.selection = v;
        else if (key == "precision") c.precision = v;
        else throw ConfigError("train config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

TrainConfig train_config_from_file(const std::string& path) {
    return train_config_from_kv(parse_kv_file(path));
}

std::map<std::string, std::string> train_config_to_kv(const TrainConfig& c) {
    std::map<std::string, std::string> kv;
    kv["batch_size"] = std::to_string(c.batch_size);
    kv["max_input_len"] = std::to_string(c.max_input_len);
    kv["max_target_len"] = std::to_string(c.max_target_len);
    std::ostringstream lr;
    lr << c.learning_rate;
    kv["learning_rate"] = lr.str();
    kv["steps"] = std::to_string(c.steps);
    kv["seed"] = std::to_string(c.seed);
    kv["packing_enabled"] = c.packing_enabled ? "true" : "false";
    kv["eval_every"] = std::to_string(c.eval_every);
    kv["selection"] = c.selection;
    kv["precision"] = c.precision;
    return kv;
}

}  // namespace t5lab
