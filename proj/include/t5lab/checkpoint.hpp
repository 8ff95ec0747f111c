#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "t5lab/config.hpp"
#include "t5lab/params.hpp"

namespace t5lab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are not supported");

// On-disk layout (all integers little-endian):
//   8 bytes   magic "T5LABCK\0"
//   u32       format version (currently 1)
//   u64       header length in bytes
//   header    JSON: {"config": {...}, "seed": N, "blob_fnv1a": H, "manifest": [
//                {"name","dtype","shape","offset","bytes"}, ...]}
//   blob      raw IEEE-754 tensor data, entries contiguous in manifest order
inline constexpr char kCheckpointMagic[8] = {'T', '5', 'L', 'A', 'B', 'C', 'K', '\0'};
inline constexpr uint32_t kCheckpointVersion = 1;

template <class Real>
constexpr const char* dtype_tag();
template <>
constexpr const char* dtype_tag<float>() { return "f32"; }
template <>
constexpr const char* dtype_tag<double>() { return "f64"; }

template <class Real>
struct Checkpoint {
    ModelConfig config;
    uint64_t seed = 0;   // seed used for any fresh initialization
    ParameterStore<Real> params;
};

inline uint64_t fnv1a64_bytes(const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

template <class Real>
void save_checkpoint(const Checkpoint<Real>& ckpt, const std::string& path) {
    nlohmann::json manifest = nlohmann::json::array();
    std::vector<char> blob;
    uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.params.tensors) {
        uint64_t nbytes = static_cast<uint64_t>(t.numel()) * sizeof(Real);
        manifest.push_back({{"name", name},
                            {"dtype", dtype_tag<Real>()},
                            {"shape", t.shape},
                            {"offset", offset},
                            {"bytes", nbytes}});
        size_t old = blob.size();
        blob.resize(old + nbytes);
        std::memcpy(blob.data() + old, t.data.data(), nbytes);
        offset += nbytes;
    }
    nlohmann::json header;
    header["config"] = model_config_to_kv(ckpt.config);
    header["seed"] = ckpt.seed;
    header["blob_fnv1a"] = fnv1a64_bytes(blob.data(), blob.size());
    header["manifest"] = manifest;
    std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("checkpoint: cannot open '" + path + "' for writing");
    out.write(kCheckpointMagic, 8);
    uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    uint64_t hlen = header_text.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw Error("checkpoint: write failed for '" + path + "'");
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("checkpoint: cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw CheckpointError(CheckpointError::Kind::bad_format, "not a checkpoint file: " + path);
    }
    uint32_t version;
    std::memcpy(&version, bytes.data() + 8, 4);
    if (version != kCheckpointVersion) {
        throw CheckpointError(CheckpointError::Kind::version_mismatch,
                              "version mismatch: file has " + std::to_string(version) +
                                  ", expected " + std::to_string(kCheckpointVersion));
    }
    uint64_t hlen;
    std::memcpy(&hlen, bytes.data() + 12, 8);
    if (bytes.size() < 20 + hlen) {
        throw CheckpointError(CheckpointError::Kind::truncated_blob, "truncated blob: header cut short");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<int64_t>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::bad_format,
                              std::string("malformed checkpoint header: ") + e.what());
    }

    Checkpoint<Real> ckpt;
    try {
        std::map<std::string, std::string> kv = header.at("config");
        ckpt.config = model_config_from_kv(kv);
        ckpt.seed = header.at("seed").get<uint64_t>();
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointError::Kind::bad_format,
                              std::string("malformed checkpoint config: ") + e.what());
    }

    std::map<std::string, Shape> expected;
    for (const auto& info : canonical_parameters(ckpt.config)) expected[info.name] = info.shape;

    const char* blob = bytes.data() + 20 + hlen;
    uint64_t blob_len = bytes.size() - 20 - hlen;
    uint64_t next_offset = 0;
    size_t entries = 0;
    for (const auto& entry : header.at("manifest")) {
        std::string name = entry.at("name");
        std::string dtype = entry.at("dtype");
        Shape shape = entry.at("shape").get<Shape>();
        uint64_t offset = entry.at("offset");
        uint64_t nbytes = entry.at("bytes");

        auto it = expected.find(name);
        if (it == expected.end()) {
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  "shape mismatch: parameter '" + name + "' not in config's parameter set");
        }
        if (it->second != shape) {
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  "shape mismatch: parameter '" + name + "' has " + shape_str(shape) +
                                      ", config requires " + shape_str(it->second));
        }
        if (dtype != dtype_tag<Real>()) {
            throw CheckpointError(CheckpointError::Kind::dtype_mismatch,
                                  "dtype mismatch: parameter '" + name + "' is " + dtype +
                                      ", expected " + dtype_tag<Real>());
        }
        if (offset != next_offset || nbytes != shape_numel(shape) * sizeof(Real)) {
            throw CheckpointError(CheckpointError::Kind::bad_format,
                                  "manifest offsets inconsistent at '" + name + "'");
        }
        if (offset + nbytes > blob_len) {
            throw CheckpointError(CheckpointError::Kind::truncated_blob,
                                  "truncated blob: '" + name + "' extends past end of file");
        }
        Tensor<Real> t = Tensor<Real>::zeros(shape);
        std::memcpy(t.data.data(), blob + offset, nbytes);
        ckpt.params.tensors.emplace(std::move(name), std::move(t));
        next_offset = offset + nbytes;
        ++entries;
    }
    if (entries != expected.size()) {
        throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                              "shape mismatch: manifest is missing parameters required by the config");
    }
    if (next_offset != blob_len) {
        throw CheckpointError(CheckpointError::Kind::truncated_blob,
                              "truncated blob: blob length does not match manifest");
    }
    uint64_t want_hash = header.at("blob_fnv1a");
    if (fnv1a64_bytes(blob, blob_len) != want_hash) {
        throw CheckpointError(CheckpointError::Kind::truncated_blob,
                              "truncated blob: blob checksum mismatch (corrupted data)");
    }
    return ckpt;
}

enum class DiffState { equal, differs, only_in_a, only_in_b };

inline const char* diff_state_name(DiffState s) {
    switch (s) {
        case DiffState::equal: return "equal";
        case DiffState::differs: return "differs";
        case DiffState::only_in_a: return "only-in-a";
        case DiffState::only_in_b: return "only-in-b";
    }
    return "?";
}

// Bitwise per-parameter comparison.
template <class Real>
std::map<std::string, DiffState> diff(const ParameterStore<Real>& a, const ParameterStore<Real>& b) {
    std::map<std::string, DiffState> out;
    for (const auto& [name, ta] : a.tensors) {
        auto it = b.tensors.find(name);
        if (it == b.tensors.end()) {
            out[name] = DiffState::only_in_a;
            continue;
        }
        const auto& tb = it->second;
        bool same = ta.shape == tb.shape &&
                    std::memcmp(ta.data.data(), tb.data.data(), ta.data.size() * sizeof(Real)) == 0;
        out[name] = same ? DiffState::equal : DiffState::differs;
    }
    for (const auto& [name, tb] : b.tensors) {
        if (!a.tensors.count(name)) out[name] = DiffState::only_in_b;
    }
    return out;
}

struct SurgeryReport {
    std::vector<std::string> loaded;   // target names copied from the source
    std::vector<std::string> dropped;  // source names absent from the target
    std::vector<std::string> fresh;    // target names newly initialized
    std::vector<std::string> notes;    // remappings worth flagging, "target <- source"
};

// Keeps the embedding, the full encoder, decoder layer 0 in its entirety, the final
// decoder norm and the vocabulary projection; drops decoder layers 1..N-1. Nothing is
// freshly initialized. On an L_dec=1 source this is a no-op (the emitted file is
// byte-identical): the variant tag is left alone because the truncated model is still a
// plain T5 graph, just one decoder layer deep.
template <class Real>
std::pair<Checkpoint<Real>, SurgeryReport> surgery_1dect5(const Checkpoint<Real>& source) {
    if (source.config.variant == Variant::EncT5) {
        throw Error("surgery_1dect5: source must be an encoder-decoder checkpoint");
    }
    if (source.config.effective_decoder_layers() < 1) {
        throw Error("surgery_1dect5: source has no decoder layers");
    }
    Checkpoint<Real> out;
    out.config = source.config;
    out.config.num_decoder_layers = 1;
    out.seed = source.seed;

    SurgeryReport report;
    std::map<std::string, Shape> target;
    for (const auto& info : canonical_parameters(out.config)) target[info.name] = info.shape;
    for (const auto& [name, t] : source.params.tensors) {
        if (target.count(name)) {
            out.params.tensors.emplace(name, t);
            report.loaded.push_back(name);
        } else {
            report.dropped.push_back(name);
        }
    }
    if (out.params.tensors.size() != target.size()) {
        throw Error("surgery_1dect5: source is missing parameters required by the target");
    }
    return {std::move(out), std::move(report)};
}

// EncT5 restore: loads embeddings, the encoder, and decoder layer 0's cross-attention
// and feed-forward network (with their pre-norms) into the pooling head; the source's
// final decoder norm becomes the head's final norm when shapes match. The BOS/task
// embedding and the class projection are trained from scratch, seeded by (seed, name).
template <class Real>
std::pair<Checkpoint<Real>, SurgeryReport> surgery_enct5(const Checkpoint<Real>& source,
                                                         int64_t n_classes, TaskKind task_kind,
                                                         uint64_t seed) {
    if (source.config.variant == Variant::EncT5) {
        throw Error("surgery_enct5: source must be an encoder-decoder checkpoint");
    }
    if (source.config.effective_decoder_layers() < 1) {
        throw Error("surgery_enct5: source has no decoder layers");
    }
    if (n_classes < 1) throw Error("surgery_enct5: n_classes must be >= 1");

    Checkpoint<Real> out;
    out.config = source.config;
    out.config.variant = Variant::EncT5;
    out.config.num_classes = task_kind == TaskKind::regression ? 1 : n_classes;
    out.config.task_kind = task_kind;
    out.seed = seed;

    // target name -> source name for everything carried over from the decoder
    std::map<std::string, std::string> remap;
    std::string dec0 = layer_name("decoder", 0);
    for (const char* p : {"/q", "/k", "/v", "/o"}) {
        remap["head/cross_attn" + std::string(p)] = dec0 + "/cross_attn" + p;
    }
    remap["head/cross_attn_norm"] = dec0 + "/cross_attn_norm";
    for (const char* p : {"/wi_0", "/wi_1", "/wo"}) {
        remap["head/ffn" + std::string(p)] = dec0 + "/ffn" + p;
    }
    remap["head/ffn_norm"] = dec0 + "/ffn_norm";
    remap["head/final_norm"] = "decoder/final_norm";

    SurgeryReport report;
    std::map<std::string, bool> source_used;
    for (const auto& info : canonical_parameters(out.config)) {
        std::string src_name = info.name;
        auto rm = remap.find(info.name);
        bool remapped = rm != remap.end();
        if (remapped) src_name = rm->second;
        auto it = source.params.tensors.find(src_name);
        if (it != source.params.tensors.end() && it->second.shape == info.shape) {
            out.params.tensors.emplace(info.name, it->second);
            report.loaded.push_back(info.name);
            source_used[src_name] = true;
            if (remapped) report.notes.push_back(info.name + " <- " + src_name);
        } else {
            out.params.tensors.emplace(
                info.name, init_parameter<Real>(out.config, info.name, info.shape, seed));
            report.fresh.push_back(info.name);
        }
    }
    for (const auto& [name, t] : source.params.tensors) {
        if (!source_used.count(name)) report.dropped.push_back(name);
    }
    return {std::move(out), std::move(report)};
}

}  // namespace t5lab
