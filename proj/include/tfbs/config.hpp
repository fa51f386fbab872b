#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tfbs/model.hpp"
#include "tfbs/seqdata.hpp"
#include "tfbs/train.hpp"

namespace tfbs {

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
    N value{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end)
        throw ConfigError("invalid value '" + text + "' for " + key);
    return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("invalid boolean '" + text + "' for " + key);
}

inline std::array<std::size_t, 3> parse_triple(const std::string& key, const std::string& text) {
    std::array<std::size_t, 3> out{};
    std::stringstream ss(text);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i == 3) throw ConfigError(key + " expects three comma-separated values");
        out[i++] = parse_number<std::size_t>(key, trim(item));
    }
    if (i != 3) throw ConfigError(key + " expects three comma-separated values");
    return out;
}

inline std::string format_triple(const std::array<std::size_t, 3>& v) {
    return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

}  // namespace detail

// Flat "key=value" lines; '#' starts a comment line.
inline KeyValues parse_key_values(std::istream& in, const std::string& name = "<config>") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(name + ":" + std::to_string(lineno) + ": expected key=value");
        kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    return kv;
}

inline KeyValues load_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_key_values(in, path);
}

inline void write_key_values(std::ostream& out, const KeyValues& kv) {
    for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

// Everything needed to reproduce a run.
struct RunConfig {
    std::uint64_t seed = 7;
    std::size_t k = 5;
    EncoderConfig encoder;
    ModelConfig model;
    TrainConfig train;
    seqdata::SplitFractions split;
    std::string data;
    std::string out;
    std::string embeddings;

    // The encoder vocabulary always follows k.
    void sync() {
        encoder.vocab_size = seqdata::KmerVocab(k).size();
        train.seed = seed;
    }
};

namespace detail {

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename N>
Field number_field(const std::string& key, N RunConfig::*outer) {
    return {[outer](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<N>) return format_double(c.*outer);
                else return std::to_string(c.*outer);
            },
            [outer, key](RunConfig& c, const std::string& v) { c.*outer = parse_number<N>(key, v); }};
}

template <typename S, typename N>
Field nested_number(const std::string& key, S RunConfig::*section, N S::*member) {
    return {[=](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<N>) return format_double(c.*section.*member);
                else return std::to_string(c.*section.*member);
            },
            [=](RunConfig& c, const std::string& v) { c.*section.*member = parse_number<N>(key, v); }};
}

inline const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> f;
        f["seed"] = number_field("seed", &RunConfig::seed);
        f["seqdata.k"] = number_field("seqdata.k", &RunConfig::k);
        f["encoder.N"] = nested_number("encoder.N", &RunConfig::encoder, &EncoderConfig::layers);
        f["encoder.h"] = nested_number("encoder.h", &RunConfig::encoder, &EncoderConfig::heads);
        f["encoder.D"] = nested_number("encoder.D", &RunConfig::encoder, &EncoderConfig::dim);
        f["encoder.ffn_dim"] = nested_number("encoder.ffn_dim", &RunConfig::encoder, &EncoderConfig::ffn_dim);
        f["encoder.max_positions"] =
            nested_number("encoder.max_positions", &RunConfig::encoder, &EncoderConfig::max_positions);
        f["encoder.ln_eps"] = nested_number("encoder.ln_eps", &RunConfig::encoder, &EncoderConfig::ln_eps);
        f["model.C"] = nested_number("model.C", &RunConfig::model, &ModelConfig::channels);
        f["model.conv1_kernel"] =
            nested_number("model.conv1_kernel", &RunConfig::model, &ModelConfig::conv1_kernel);
        f["model.spatial_kernel"] =
            nested_number("model.spatial_kernel", &RunConfig::model, &ModelConfig::spatial_kernel);
        f["model.r"] = nested_number("model.r", &RunConfig::model, &ModelConfig::reduction);
        f["model.output_kernel"] =
            nested_number("model.output_kernel", &RunConfig::model, &ModelConfig::output_kernel);
        f["model.hidden"] = nested_number("model.hidden", &RunConfig::model, &ModelConfig::hidden);
        f["model.cnn_dropout"] = nested_number("model.cnn_dropout", &RunConfig::model, &ModelConfig::cnn_dropout);
        f["model.head_dropout"] =
            nested_number("model.head_dropout", &RunConfig::model, &ModelConfig::head_dropout);
        f["model.mlp_dropout"] = nested_number("model.mlp_dropout", &RunConfig::model, &ModelConfig::mlp_dropout);
        f["model.bn_eps"] = nested_number("model.bn_eps", &RunConfig::model, &ModelConfig::bn_eps);
        f["model.bn_momentum"] = nested_number("model.bn_momentum", &RunConfig::model, &ModelConfig::bn_momentum);
        f["model.msca_kernels"] = {
            [](const RunConfig& c) { return format_triple(c.model.msca_kernels); },
            [](RunConfig& c, const std::string& v) { c.model.msca_kernels = parse_triple("model.msca_kernels", v); }};
        f["model.msca_dilations"] = {
            [](const RunConfig& c) { return format_triple(c.model.msca_dilations); },
            [](RunConfig& c, const std::string& v) {
                c.model.msca_dilations = parse_triple("model.msca_dilations", v);
            }};
        f["model.fuse"] = {[](const RunConfig& c) { return to_string(c.model.fuse); },
                           [](RunConfig& c, const std::string& v) { c.model.fuse = parse_fuse(v); }};
        f["model.variant"] = {[](const RunConfig& c) { return to_string(c.model.variant); },
                              [](RunConfig& c, const std::string& v) { c.model.variant = parse_variant(v); }};
        f["model.freeze_encoder"] = {
            [](const RunConfig& c) { return std::string(c.model.freeze_encoder ? "true" : "false"); },
            [](RunConfig& c, const std::string& v) {
                c.model.freeze_encoder = parse_bool("model.freeze_encoder", v);
            }};
        f["train.batch_size"] = nested_number("train.batch_size", &RunConfig::train, &TrainConfig::batch_size);
        f["train.max_epochs"] = nested_number("train.max_epochs", &RunConfig::train, &TrainConfig::max_epochs);
        f["train.lr"] = nested_number("train.lr", &RunConfig::train, &TrainConfig::lr);
        f["train.weight_decay"] =
            nested_number("train.weight_decay", &RunConfig::train, &TrainConfig::weight_decay);
        f["train.patience"] =
            nested_number("train.patience", &RunConfig::train, &TrainConfig::early_stop_patience);
        f["train.scheduler_factor"] =
            nested_number("train.scheduler_factor", &RunConfig::train, &TrainConfig::scheduler_factor);
        f["train.scheduler_patience"] =
            nested_number("train.scheduler_patience", &RunConfig::train, &TrainConfig::scheduler_patience);
        f["train.min_lr"] = nested_number("train.min_lr", &RunConfig::train, &TrainConfig::min_lr);
        f["split.train"] = nested_number("split.train", &RunConfig::split, &seqdata::SplitFractions::train);
        f["split.val"] = nested_number("split.val", &RunConfig::split, &seqdata::SplitFractions::val);
        f["split.test"] = nested_number("split.test", &RunConfig::split, &seqdata::SplitFractions::test);
        auto text = [](std::string RunConfig::*m) {
            return Field{[m](const RunConfig& c) { return c.*m; },
                         [m](RunConfig& c, const std::string& v) { c.*m = v; }};
        };
        f["io.data"] = text(&RunConfig::data);
        f["io.out"] = text(&RunConfig::out);
        f["io.embeddings"] = text(&RunConfig::embeddings);
        return f;
    }();
    return table;
}

}  // namespace detail

// Applies overrides; unknown keys are rejected.
inline void apply_overrides(RunConfig& config, const KeyValues& kv) {
    const auto& f = detail::fields();
    for (const auto& [key, value] : kv) {
        auto it = f.find(key);
        if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second.set(config, value);
    }
    config.sync();
}

inline KeyValues to_key_values(const RunConfig& config) {
    KeyValues kv;
    for (const auto& [key, field] : detail::fields()) kv[key] = field.get(config);
    return kv;
}

// The subset that fixes a model's architecture (stored in checkpoints).
inline KeyValues architecture_key_values(const RunConfig& config) {
    KeyValues kv;
    for (const auto& [key, value] : to_key_values(config))
        if (key == "seqdata.k" || key.rfind("encoder.", 0) == 0 || key.rfind("model.", 0) == 0)
            kv[key] = value;
    return kv;
}

inline void validate(const RunConfig& c) {
    const auto vocab = seqdata::build_vocab(c.k);
    EncoderConfig enc = c.encoder;
    enc.vocab_size = vocab.size();
    validate(enc);
    validate(c.model);
    validate(c.train);
    const auto& s = c.split;
    if (!(s.train > 0 && s.val > 0 && s.test > 0) || std::abs(s.train + s.val + s.test - 1.0) > 1e-9)
        throw ConfigError("split fractions must be positive and sum to 1");
}

}  // namespace tfbs
