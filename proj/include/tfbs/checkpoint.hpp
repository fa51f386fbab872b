#pragma once

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "tfbs/binary_io.hpp"
#include "tfbs/config.hpp"

// Checkpoint file: "TFBSCKP1", u32 header length, UTF-8 header of key=value
// lines (architecture config, training state, then one "tensor=" line per
// stored tensor giving section, name and shape), then the tensors as
// little-endian float32 in manifest order.
namespace tfbs {

inline constexpr char kCheckpointMagic[9] = "TFBSCKP1";

struct ManifestEntry {
    std::string section;  // param, buffer, adam_m, adam_v, best_param, best_buffer
    std::string name;
    Shape shape;
};

struct Checkpoint {
    KeyValues header;  // everything except tensor lines
    std::vector<ManifestEntry> manifest;
    std::vector<Tensor<float>> tensors;

    // Tensors of one section in manifest order.
    std::vector<std::pair<const ManifestEntry*, const Tensor<float>*>> section(const std::string& s) const {
        std::vector<std::pair<const ManifestEntry*, const Tensor<float>*>> out;
        for (std::size_t i = 0; i < manifest.size(); ++i)
            if (manifest[i].section == s) out.emplace_back(&manifest[i], &tensors[i]);
        return out;
    }
};

namespace detail {

inline std::string shape_text(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out.empty() ? "scalar" : out;
}

inline Shape parse_shape(const std::string& text) {
    Shape s;
    if (text == "scalar") return s;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        try {
            s.push_back(parse_number<std::size_t>("shape", part));
        } catch (const ConfigError&) {
            throw FormatError("bad tensor shape '" + text + "' in checkpoint manifest");
        }
    }
    return s;
}

template <typename T>
void add_tensor(Checkpoint& c, std::string section, std::string name, const Tensor<T>& t) {
    c.manifest.push_back({std::move(section), std::move(name), t.shape()});
    c.tensors.push_back(t.template cast<float>());
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
    std::ostringstream header;
    write_key_values(header, c.header);
    for (const auto& e : c.manifest)
        header << "tensor=" << e.section << ' ' << e.name << ' ' << detail::shape_text(e.shape) << '\n';
    const std::string text = header.str();
    out.write(kCheckpointMagic, 8);
    binio::write_u32(out, std::uint32_t(text.size()));
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto& t : c.tensors)
        for (float v : t.values()) binio::write_f32(out, v);
    if (!out) throw FormatError("failed writing checkpoint");
}

inline Checkpoint read_checkpoint(std::istream& in) {
    binio::expect_magic(in, kCheckpointMagic);
    const std::uint32_t len = binio::read_u32(in, "header length");
    std::string text(len, '\0');
    binio::read_exact(in, text.data(), len, "checkpoint header");
    Checkpoint c;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("malformed checkpoint header line");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key != "tensor") {
            c.header[key] = value;
            continue;
        }
        std::istringstream fields(value);
        ManifestEntry e;
        std::string shape;
        if (!(fields >> e.section >> e.name >> shape)) throw FormatError("malformed manifest line");
        e.shape = detail::parse_shape(shape);
        c.manifest.push_back(std::move(e));
    }
    if (c.header["format"] != "1") throw FormatError("unsupported checkpoint format version");
    for (const auto& e : c.manifest) {
        const std::size_t n = shape_size(e.shape);
        std::vector<unsigned char> raw(n * 4);
        binio::read_exact(in, reinterpret_cast<char*>(raw.data()), raw.size(), "checkpoint tensor");
        std::vector<float> values(n);
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned char* b = raw.data() + 4 * i;
            values[i] = std::bit_cast<float>(std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                                             std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24);
        }
        c.tensors.emplace_back(e.shape, std::move(values));
    }
    binio::expect_eof(in);
    return c;
}

inline void save_checkpoint_file(const std::string& path, const Checkpoint& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_checkpoint(out, c);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(in);
}

// Model weights and buffers plus the architecture config.
template <typename T>
Checkpoint make_checkpoint(TfbsFinder<T>& model, const RunConfig& config) {
    Checkpoint c;
    c.header = architecture_key_values(config);
    c.header["format"] = "1";
    for (const auto& p : model.store().parameters()) detail::add_tensor(c, "param", p.name, p.var.value());
    for (const auto& b : model.store().buffers()) detail::add_tensor(c, "buffer", b.name, *b.tensor);
    return c;
}

// Adds optimizer moments, training state, history and best weights so a run
// can resume where it stopped.
template <typename T>
void add_training_state(Checkpoint& c, TfbsFinder<T>& model, const Trainer<T>& trainer) {
    const auto& s = trainer.state();
    auto& h = c.header;
    h["state.epoch"] = std::to_string(s.epoch);
    h["state.best_pr_auc"] = detail::format_double(s.best_pr_auc);
    h["state.best_epoch"] = std::to_string(s.best_epoch);
    h["state.epochs_without_improvement"] = std::to_string(s.epochs_without_improvement);
    h["state.lr"] = detail::format_double(s.lr);
    h["state.seed"] = std::to_string(s.seed);
    h["state.stopped"] = s.stopped ? "1" : "0";
    h["state.scheduler_best"] = detail::format_double(s.scheduler.best);
    h["state.scheduler_bad_epochs"] = std::to_string(s.scheduler.bad_epochs);
    h["state.optimizer_step"] = std::to_string(trainer.optimizer().step);
    // Full precision so a resumed run carries the exact history.
    const auto& history = trainer.history();
    char row[256];
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& r = history[i];
        std::snprintf(row, sizeof row, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", r.epoch, r.train_loss, r.val_accuracy,
                      r.val_pr_auc, r.val_roc_auc, r.lr);
        h["history." + std::string(i < 10 ? "0" : "") + std::to_string(i)] = row;
    }
    const auto params = model.trainable_parameters();
    const auto& opt = trainer.optimizer();
    for (std::size_t k = 0; k < opt.first_moment.size(); ++k) {
        detail::add_tensor(c, "adam_m", params[k].name, opt.first_moment[k]);
        detail::add_tensor(c, "adam_v", params[k].name, opt.second_moment[k]);
    }
    const auto& best = trainer.best();
    if (!best.params.empty()) {
        const auto& all = model.store().parameters();
        auto buffers = model.store().buffers();
        for (std::size_t k = 0; k < all.size(); ++k) detail::add_tensor(c, "best_param", all[k].name, best.params[k]);
        for (std::size_t k = 0; k < buffers.size(); ++k)
            detail::add_tensor(c, "best_buffer", buffers[k].name, best.buffers[k]);
    }
}

namespace detail {
template <typename T>
void load_section(const Checkpoint& c, const std::string& section, const std::vector<std::string>& names,
                  const std::vector<Tensor<T>*>& targets) {
    auto entries = c.section(section);
    if (entries.size() != targets.size())
        throw FormatError("checkpoint section '" + section + "' has " + std::to_string(entries.size()) +
                          " tensors, model expects " + std::to_string(targets.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& [entry, tensor] = entries[i];
        if (entry->name != names[i] || entry->shape != targets[i]->shape())
            throw FormatError("checkpoint tensor " + entry->name + " " + shape_str(entry->shape) +
                              " does not match model tensor " + names[i] + " " +
                              shape_str(targets[i]->shape()));
        *targets[i] = tensor->template cast<T>();
    }
}
}  // namespace detail

template <typename T>
void load_weights(TfbsFinder<T>& model, const Checkpoint& c, const std::string& param_section = "param",
                  const std::string& buffer_section = "buffer") {
    std::vector<std::string> names;
    std::vector<Tensor<T>*> targets;
    for (const auto& p : model.store().parameters()) {
        Var<T> v = p.var;
        names.push_back(p.name);
        targets.push_back(&v.mutable_value());
    }
    detail::load_section(c, param_section, names, targets);
    names.clear();
    targets.clear();
    for (const auto& b : model.store().buffers()) {
        names.push_back(b.name);
        targets.push_back(b.tensor);
    }
    detail::load_section(c, buffer_section, names, targets);
}

// Architecture config recorded in a checkpoint, over library defaults.
inline RunConfig config_from_checkpoint(const Checkpoint& c) {
    RunConfig config;
    KeyValues arch;
    for (const auto& [k, v] : c.header)
        if (k == "seqdata.k" || k.rfind("encoder.", 0) == 0 || k.rfind("model.", 0) == 0) arch[k] = v;
    try {
        apply_overrides(config, arch);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint config: ") + e.what());
    }
    return config;
}

template <typename T>
std::unique_ptr<TfbsFinder<T>> model_from_checkpoint(const Checkpoint& c, RunConfig* config_out = nullptr) {
    RunConfig config = config_from_checkpoint(c);
    auto model = std::make_unique<TfbsFinder<T>>(config.encoder, config.model, 0);
    load_weights(*model, c);
    if (config_out) *config_out = config;
    return model;
}

template <typename T>
void restore_training_state(TfbsFinder<T>& model, Trainer<T>& trainer, const Checkpoint& c) {
    load_weights(model, c);
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = c.header.find(key);
        if (it == c.header.end()) throw FormatError("checkpoint lacks training state '" + key + "'");
        return it->second;
    };
    auto num = [&](const std::string& key, auto zero) {
        try {
            return detail::parse_number<decltype(zero)>(key, get(key));
        } catch (const ConfigError& e) {
            throw FormatError(e.what());
        }
    };
    auto& s = trainer.state();
    s.epoch = num("state.epoch", std::size_t{});
    s.best_pr_auc = num("state.best_pr_auc", double{});
    s.best_epoch = num("state.best_epoch", std::size_t{});
    s.epochs_without_improvement = num("state.epochs_without_improvement", int{});
    s.lr = num("state.lr", double{});
    s.seed = num("state.seed", std::uint64_t{});
    s.stopped = get("state.stopped") == "1";
    s.scheduler.best = num("state.scheduler_best", double{});
    s.scheduler.bad_epochs = num("state.scheduler_bad_epochs", int{});

    auto& opt = trainer.optimizer();
    opt.step = num("state.optimizer_step", std::size_t{});
    opt.lr = s.lr;
    const auto params = model.trainable_parameters();
    auto m = c.section("adam_m");
    auto v = c.section("adam_v");
    opt.first_moment.clear();
    opt.second_moment.clear();
    if (!m.empty()) {
        if (m.size() != params.size() || v.size() != params.size())
            throw FormatError("optimizer moments do not match trainable parameters");
        for (std::size_t k = 0; k < params.size(); ++k) {
            if (m[k].first->name != params[k].name || m[k].second->shape() != params[k].var.shape() ||
                v[k].first->name != params[k].name || v[k].second->shape() != params[k].var.shape())
                throw FormatError("optimizer moment mismatch for " + params[k].name);
            opt.first_moment.push_back(m[k].second->template cast<T>());
            opt.second_moment.push_back(v[k].second->template cast<T>());
        }
    }

    trainer.history().clear();
    for (std::size_t i = 0;; ++i) {
        auto it = c.header.find("history." + std::string(i < 10 ? "0" : "") + std::to_string(i));
        if (it == c.header.end()) break;
        EpochRecord r;
        if (std::sscanf(it->second.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.train_loss,
                        &r.val_accuracy, &r.val_pr_auc, &r.val_roc_auc, &r.lr) != 6)
            throw FormatError("malformed history row in checkpoint");
        trainer.history().push_back(r);
    }

    if (!c.section("best_param").empty()) {
        auto snap = model.snapshot();  // shapes to load into
        std::vector<std::string> names;
        std::vector<Tensor<T>*> targets;
        const auto& all = model.store().parameters();
        for (std::size_t k = 0; k < all.size(); ++k) {
            names.push_back(all[k].name);
            targets.push_back(&snap.params[k]);
        }
        detail::load_section(c, "best_param", names, targets);
        names.clear();
        targets.clear();
        auto buffers = model.store().buffers();
        for (std::size_t k = 0; k < buffers.size(); ++k) {
            names.push_back(buffers[k].name);
            targets.push_back(&snap.buffers[k]);
        }
        detail::load_section(c, "best_buffer", names, targets);
        trainer.set_best(std::move(snap));
    }
}

}  // namespace tfbs
