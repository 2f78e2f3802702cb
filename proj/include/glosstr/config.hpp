#pragma once

#include <charconv>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glosstr/decode.hpp"
#include "glosstr/engine.hpp"
#include "glosstr/errors.hpp"
#include "glosstr/model.hpp"
#include "glosstr/sals.hpp"
#include "glosstr/text.hpp"

namespace glosstr {

/// Everything a run can be configured with. Keys in config files map one-to-one to fields here.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    // paths
    std::string train_path, dev_path, test_path;
    std::string tokenizer_path, embeddings_path, sim_index_path, plan_path;
    std::string output_dir = "out";
    std::size_t bpe_vocab_size = 1000;
    // augmentation
    std::string source_tag = "de", pivot_tag = "en";
    std::string pivot_command;
    double pivot_timeout = 30.0;
    // gradient check
    double gradcheck_eps = 1e-5;
    double gradcheck_tolerance = 1e-4;
};

namespace detail {

inline std::uint64_t parse_uint(const std::string &key, const std::string &v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

inline double parse_double(const std::string &key, const std::string &v) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size())
            throw std::invalid_argument(v);
        return d;
    } catch (const std::exception &) {
        throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string &key, const std::string &v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
    throw ConfigError("key '" + key + "' expects true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig &, const std::string &, const std::string &)>;
using Getter = std::function<nlohmann::json(const RunConfig &)>;

struct KeySpec {
    Setter set;
    Getter get;
};

template <class F>
KeySpec uint_key(F field) {
    return {[field](RunConfig &c, const std::string &k, const std::string &v) {
                auto &ref = field(c);
                ref = static_cast<std::remove_reference_t<decltype(ref)>>(parse_uint(k, v));
            },
            [field](const RunConfig &c) { return nlohmann::json(field(const_cast<RunConfig &>(c))); }};
}

template <class F>
KeySpec double_key(F field) {
    return {[field](RunConfig &c, const std::string &k, const std::string &v) { field(c) = parse_double(k, v); },
            [field](const RunConfig &c) { return nlohmann::json(field(const_cast<RunConfig &>(c))); }};
}

template <class F>
KeySpec bool_key(F field) {
    return {[field](RunConfig &c, const std::string &k, const std::string &v) { field(c) = parse_bool(k, v); },
            [field](const RunConfig &c) { return nlohmann::json(field(const_cast<RunConfig &>(c))); }};
}

template <class F>
KeySpec string_key(F field) {
    return {[field](RunConfig &c, const std::string &, const std::string &v) { field(c) = v; },
            [field](const RunConfig &c) { return nlohmann::json(field(const_cast<RunConfig &>(c))); }};
}

inline const std::map<std::string, KeySpec> &key_table() {
    // clang-format off
    static const std::map<std::string, KeySpec> table = {
        {"architecture", {[](RunConfig &c, const std::string &, const std::string &v) { c.model.architecture = parse_architecture(v); },
                          [](const RunConfig &c) { return nlohmann::json(std::string(to_string(c.model.architecture))); }}},
        {"dim", uint_key([](RunConfig &c) -> Index & { return c.model.dim; })},
        {"heads", uint_key([](RunConfig &c) -> Index & { return c.model.heads; })},
        {"encoder_layers", uint_key([](RunConfig &c) -> Index & { return c.model.encoder_layers; })},
        {"decoder_layers", uint_key([](RunConfig &c) -> Index & { return c.model.decoder_layers; })},
        {"ffn_dim", uint_key([](RunConfig &c) -> Index & { return c.model.ffn_dim; })},
        {"max_positions", uint_key([](RunConfig &c) -> Index & { return c.model.max_positions; })},
        {"dropout", double_key([](RunConfig &c) -> double & { return c.model.dropout; })},
        {"model_seed", uint_key([](RunConfig &c) -> std::uint64_t & { return c.model.seed; })},

        {"epochs", uint_key([](RunConfig &c) -> std::size_t & { return c.train.epochs; })},
        {"batch_tokens", uint_key([](RunConfig &c) -> std::size_t & { return c.train.batch_tokens; })},
        {"learning_rate", double_key([](RunConfig &c) -> double & { return c.train.learning_rate; })},
        {"warmup_steps", uint_key([](RunConfig &c) -> std::size_t & { return c.train.warmup_steps; })},
        {"adam_beta1", double_key([](RunConfig &c) -> double & { return c.train.adam_beta1; })},
        {"adam_beta2", double_key([](RunConfig &c) -> double & { return c.train.adam_beta2; })},
        {"adam_eps", double_key([](RunConfig &c) -> double & { return c.train.adam_eps; })},
        {"weight_decay", double_key([](RunConfig &c) -> double & { return c.train.weight_decay; })},
        {"clip_norm", double_key([](RunConfig &c) -> double & { return c.train.clip_norm; })},
        {"seed", uint_key([](RunConfig &c) -> std::uint64_t & { return c.train.seed; })},
        {"lora", bool_key([](RunConfig &c) -> bool & { return c.train.lora; })},
        {"lora_rank", uint_key([](RunConfig &c) -> Index & { return c.train.lora_rank; })},
        {"lora_alpha", double_key([](RunConfig &c) -> double & { return c.train.lora_alpha; })},
        {"checkpoint_dir", string_key([](RunConfig &c) -> std::string & { return c.train.checkpoint_dir; })},
        {"threads", uint_key([](RunConfig &c) -> std::size_t & { return c.train.threads; })},

        {"beam_size", uint_key([](RunConfig &c) -> std::size_t & { return c.train.decode.beam_size; })},
        {"max_length", uint_key([](RunConfig &c) -> std::size_t & { return c.train.decode.max_length; })},
        {"length_penalty", double_key([](RunConfig &c) -> double & { return c.train.decode.length_penalty; })},

        {"smoothing", {[](RunConfig &c, const std::string &, const std::string &v) { c.train.smoothing.mode = parse_smoothing_mode(v); },
                       [](const RunConfig &c) { return nlohmann::json(std::string(to_string(c.train.smoothing.mode))); }}},
        {"n_basis", {[](RunConfig &c, const std::string &, const std::string &v) { c.train.smoothing.n_basis = parse_n_basis(v); },
                     [](const RunConfig &c) { return nlohmann::json(std::string(to_string(c.train.smoothing.n_basis))); }}},
        {"lambda", double_key([](RunConfig &c) -> double & { return c.train.smoothing.lambda; })},
        {"beta", double_key([](RunConfig &c) -> double & { return c.train.smoothing.beta; })},

        {"train", string_key([](RunConfig &c) -> std::string & { return c.train_path; })},
        {"dev", string_key([](RunConfig &c) -> std::string & { return c.dev_path; })},
        {"test", string_key([](RunConfig &c) -> std::string & { return c.test_path; })},
        {"tokenizer", string_key([](RunConfig &c) -> std::string & { return c.tokenizer_path; })},
        {"embeddings", string_key([](RunConfig &c) -> std::string & { return c.embeddings_path; })},
        {"sim_index", string_key([](RunConfig &c) -> std::string & { return c.sim_index_path; })},
        {"plan", string_key([](RunConfig &c) -> std::string & { return c.plan_path; })},
        {"output_dir", string_key([](RunConfig &c) -> std::string & { return c.output_dir; })},
        {"bpe_vocab_size", uint_key([](RunConfig &c) -> std::size_t & { return c.bpe_vocab_size; })},

        {"source_tag", string_key([](RunConfig &c) -> std::string & { return c.source_tag; })},
        {"pivot_tag", string_key([](RunConfig &c) -> std::string & { return c.pivot_tag; })},
        {"pivot_command", string_key([](RunConfig &c) -> std::string & { return c.pivot_command; })},
        {"pivot_timeout", double_key([](RunConfig &c) -> double & { return c.pivot_timeout; })},

        {"gradcheck_eps", double_key([](RunConfig &c) -> double & { return c.gradcheck_eps; })},
        {"gradcheck_tolerance", double_key([](RunConfig &c) -> double & { return c.gradcheck_tolerance; })},
    };
    // clang-format on
    return table;
}

} // namespace detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto &[k, _] : detail::key_table())
        keys.push_back(k);
    return keys;
}

/// Sets one key. Unknown keys raise a ConfigError that lists the valid ones.
inline void set_config_value(RunConfig &c, const std::string &key, const std::string &value) {
    const auto &table = detail::key_table();
    auto it = table.find(key);
    if (it == table.end())
        throw ConfigError("unknown config key '" + key + "'; valid keys: " + join(config_keys(), ", "));
    try {
        it->second.set(c, key, value);
    } catch (const ConfigError &) {
        throw;
    } catch (const std::exception &e) {
        throw ConfigError("key '" + key + "': " + e.what());
    }
}

/// Parses `key = value` lines; `#` starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string &content) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= content.size()) {
        auto end = content.find('\n', start);
        if (end == std::string::npos)
            end = content.size();
        std::string line = content.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.resize(hash);
        line = collapse_whitespace(line);
        if (line.empty())
            continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        auto key = collapse_whitespace(line.substr(0, eq));
        auto value = collapse_whitespace(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        out.emplace_back(key, value);
    }
    return out;
}

inline void apply_config_text(RunConfig &c, const std::string &content) {
    for (const auto &[k, v] : parse_key_values(content))
        set_config_value(c, k, v);
}

inline RunConfig load_run_config(const std::string &path) {
    RunConfig c;
    std::string content;
    try {
        content = read_file(path);
    } catch (const std::exception &e) {
        throw ConfigError(e.what());
    }
    apply_config_text(c, content);
    return c;
}

inline nlohmann::json to_json(const RunConfig &c) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto &[k, entry] : detail::key_table())
        j[k] = entry.get(c);
    return j;
}

inline std::string to_config_text(const RunConfig &c) {
    std::string out;
    for (const auto &[k, entry] : detail::key_table()) {
        auto v = entry.get(c);
        out += k + " = " + (v.is_string() ? v.get<std::string>() : v.dump()) + "\n";
    }
    return out;
}

/// Record written before a subcommand starts work.
struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, std::string> input_checksums; ///< path -> FNV-1a hex of the bytes
    std::uint64_t seed = 0;
    std::string tool_version;
    std::vector<std::string> outputs;

    void add_input(const std::string &path) { input_checksums[path] = hex64(fnv1a(read_file(path))); }

    nlohmann::json to_json() const {
        return {{"command", command}, {"config", config},       {"inputs", input_checksums},
                {"seed", seed},       {"version", tool_version}, {"outputs", outputs}};
    }
};

} // namespace glosstr
