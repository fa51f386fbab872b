#pragma once

#include <array>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tfbs/encoder.hpp"

namespace tfbs {

// Ablation wirings. V1: encoder+output; V2: +CNN; V3: +CNN+MSCA;
// V4: +CNN+MCBAM; V5: CNN + channel-first CBAM + MSCA; FULL: CNN + MCBAM + MSCA.
enum class Variant { v1, v2, v3, v4, v5, full };

enum class AttentionOrder { spatial_first, channel_first };

// How the two pooled maps enter Conv8: summed (C channels) or stacked (2C).
enum class Fuse { add, concat };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::v1: return "v1";
        case Variant::v2: return "v2";
        case Variant::v3: return "v3";
        case Variant::v4: return "v4";
        case Variant::v5: return "v5";
        case Variant::full: return "full";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    for (Variant v : {Variant::v1, Variant::v2, Variant::v3, Variant::v4, Variant::v5, Variant::full})
        if (s == to_string(v)) return v;
    throw ConfigError("unknown variant '" + s + "' (expected v1..v5 or full)");
}

inline std::string to_string(Fuse f) { return f == Fuse::add ? "add" : "concat"; }

inline Fuse parse_fuse(const std::string& s) {
    if (s == "add") return Fuse::add;
    if (s == "concat") return Fuse::concat;
    throw ConfigError("unknown fuse mode '" + s + "' (expected add or concat)");
}

inline bool uses_cnn(Variant v) { return v != Variant::v1; }
inline bool uses_mcbam(Variant v) { return v == Variant::v4 || v == Variant::v5 || v == Variant::full; }
inline bool uses_msca(Variant v) { return v == Variant::v3 || v == Variant::v5 || v == Variant::full; }

struct ModelConfig {
    std::size_t channels = 64;  // C
    std::size_t conv1_kernel = 3;
    std::size_t spatial_kernel = 7;
    std::size_t reduction = 4;  // r
    std::array<std::size_t, 3> msca_kernels{3, 5, 7};
    std::array<std::size_t, 3> msca_dilations{1, 2, 3};
    std::size_t output_kernel = 3;  // Conv6 / Conv7
    std::size_t hidden = 32;        // width of the first fully connected layer
    double cnn_dropout = 0.2;
    double head_dropout = 0.2;      // after Conv8
    double mlp_dropout = 0.3;       // between the fully connected layers
    std::size_t num_classes = 2;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    Fuse fuse = Fuse::add;
    Variant variant = Variant::full;
    bool freeze_encoder = false;
};

inline void validate(const ModelConfig& c) {
    auto odd = [](std::size_t k, const char* what) {
        if (k == 0 || k % 2 == 0) throw ConfigError(std::string(what) + " kernel size must be odd");
    };
    if (c.channels == 0) throw ConfigError("channel count must be positive");
    odd(c.conv1_kernel, "conv1");
    odd(c.spatial_kernel, "spatial attention");
    odd(c.output_kernel, "output");
    for (std::size_t i = 0; i < 3; ++i) {
        odd(c.msca_kernels[i], "msca");
        if (c.msca_dilations[i] == 0) throw ConfigError("msca dilation must be positive");
    }
    if (c.reduction == 0 || c.channels % c.reduction != 0)
        throw ConfigError("reduction ratio " + std::to_string(c.reduction) + " does not divide " +
                          std::to_string(c.channels) + " channels");
    for (double p : {c.cnn_dropout, c.head_dropout, c.mlp_dropout})
        if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rates must lie in [0,1)");
    if (c.num_classes != 2) throw ConfigError("only binary classification is supported");
    if (c.hidden == 0) throw ConfigError("hidden width must be positive");
}

// Named intermediates of one forward pass. Keys: M1 M2 M_S M2' M_C M3 M2''
// M2''' M4 M5 M6 M7 y_hat; absent when the variant skips that module.
template <typename T>
struct ForwardTrace {
    std::map<std::string, Var<T>> entries;

    bool has(const std::string& key) const { return entries.count(key) != 0; }
    const Tensor<T>& at(const std::string& key) const {
        auto it = entries.find(key);
        if (it == entries.end()) throw ConfigError("trace has no entry " + key);
        return it->second.value();
    }
    const Var<T>& var(const std::string& key) const {
        auto it = entries.find(key);
        if (it == entries.end()) throw ConfigError("trace has no entry " + key);
        return it->second;
    }
    const Var<T>& y_hat() const { return var("y_hat"); }
    std::set<std::string> keys() const {
        std::set<std::string> k;
        for (const auto& [name, _] : entries) k.insert(name);
        return k;
    }
};

// The trace keys each variant produces.
inline std::set<std::string> trace_keys(Variant v) {
    std::set<std::string> keys{"M1", "M5", "M6", "M7", "y_hat"};
    if (uses_cnn(v)) keys.insert("M2");
    if (uses_mcbam(v)) keys.insert({"M_S", "M2'", "M_C", "M3"});
    if (uses_msca(v)) keys.insert({"M2''", "M2'''", "M4"});
    return keys;
}

template <typename T>
class TfbsFinder {
public:
    TfbsFinder(const EncoderConfig& enc, const ModelConfig& cfg, std::uint64_t seed)
        : model_config_(cfg) {
        validate(model_config_);
        std::mt19937_64 rng(seed);
        encoder_.emplace(store_, enc, rng);
        build_head(rng);
    }

    TfbsFinder(const TfbsFinder&) = delete;
    TfbsFinder& operator=(const TfbsFinder&) = delete;

    const EncoderConfig& encoder_config() const { return encoder_->config(); }
    const ModelConfig& config() const { return model_config_; }
    Variant variant() const { return model_config_.variant; }
    const Encoder<T>& encoder() const { return *encoder_; }
    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }

    std::size_t parameter_count() const { return store_.scalar_count(); }

    // Parameters the optimizer updates; excludes the encoder when frozen.
    std::vector<Parameter<T>> trainable_parameters() const {
        std::vector<Parameter<T>> out;
        for (const auto& p : store_.parameters())
            if (!(model_config_.freeze_encoder && p.name.rfind("encoder.", 0) == 0)) out.push_back(p);
        return out;
    }

    ForwardTrace<T> forward(const seqdata::TokenizedBatch& tokens, ops::Mode mode,
                            std::uint64_t dropout_seed = 0) {
        Var<T> m1;
        if (model_config_.freeze_encoder) {
            NoGradGuard guard;
            m1 = encoder_->encode(tokens);
            m1 = Var<T>(m1.value());
        } else {
            m1 = encoder_->encode(tokens);
        }
        return forward_embeddings(m1, mode, dropout_seed);
    }

    // Runs the head on an externally supplied M1 of shape (n, d, D).
    ForwardTrace<T> forward_embeddings(const Var<T>& m1, ops::Mode mode, std::uint64_t dropout_seed = 0) {
        ops::detail::require_rank(m1.shape(), 3, "M1");
        if (m1.dim(2) != encoder_->config().dim)
            throw ShapeError("M1 width " + std::to_string(m1.dim(2)) + " does not match D=" +
                             std::to_string(encoder_->config().dim));
        ForwardTrace<T> trace;
        trace.entries["M1"] = m1;
        auto x = ops::permute(m1, {0, 2, 1});  // channels-first (n, D, d)
        const Variant v = model_config_.variant;

        Var<T> branch_a, branch_b;
        if (!uses_cnn(v)) {
            branch_a = branch_b = bridge_(x);
        } else {
            auto m2 = cnn_module(x, mode, dropout_seed);
            trace.entries["M2"] = m2;
            branch_a = branch_b = m2;
            if (uses_mcbam(v)) {
                const auto order = v == Variant::v5 ? AttentionOrder::channel_first
                                                    : AttentionOrder::spatial_first;
                branch_a = mcbam(m2, order, &trace);
                if (v == Variant::v4) branch_b = branch_a;
            }
            if (uses_msca(v)) branch_b = msca(m2, mode, &trace);
        }
        output_module(branch_a, branch_b, mode, dropout_seed, trace);
        return trace;
    }

    // M2 = Dropout(GELU(BN(Conv1(M1)))) on channels-first input.
    Var<T> cnn_module(const Var<T>& x, ops::Mode mode, std::uint64_t seed) const {
        auto h = ops::gelu(bn1_(conv1_(x), mode));
        return ops::dropout(h, model_config_.cnn_dropout, mode, mix_seed(seed, 1));
    }

    // M_S = Sigmoid(Conv2([Maxpool_c(M2), Avgpool_c(M2)])), returns M_S ⊙ M2.
    Var<T> spatial_attention(const Var<T>& m2, Var<T>* gate = nullptr) const {
        auto pooled = ops::concat<T>({ops::global_pool(m2, ops::PoolKind::max, 1),
                                      ops::global_pool(m2, ops::PoolKind::avg, 1)},
                                     1);
        auto ms = ops::sigmoid(conv2_(pooled));
        if (gate) *gate = ms;
        return ops::mul(m2, ms);
    }

    // M_C = Sigmoid(MLP(Maxpool_L(X)) + MLP(Avgpool_L(X))) with a shared
    // C -> C/r -> C bottleneck, returns M_C ⊙ X.
    Var<T> channel_attention(const Var<T>& x, Var<T>* gate = nullptr) const {
        auto mlp = [&](const Var<T>& v) { return conv3_2_(ops::gelu(conv3_1_(v))); };
        auto mc = ops::sigmoid(ops::add(mlp(ops::global_pool(x, ops::PoolKind::max, 2)),
                                        mlp(ops::global_pool(x, ops::PoolKind::avg, 2))));
        if (gate) *gate = mc;
        return ops::mul(x, mc);
    }

    Var<T> mcbam(const Var<T>& m2, AttentionOrder order, ForwardTrace<T>* trace = nullptr) const {
        Var<T> ms, mc, mid, m3;
        if (order == AttentionOrder::spatial_first) {
            mid = spatial_attention(m2, &ms);
            m3 = channel_attention(mid, &mc);
        } else {
            mid = channel_attention(m2, &mc);
            m3 = spatial_attention(mid, &ms);
        }
        if (trace) {
            trace->entries["M_S"] = ms;
            trace->entries["M_C"] = mc;
            trace->entries["M2'"] = mid;
            trace->entries["M3"] = m3;
        }
        return m3;
    }

    // M2'' = [Conv4,1(M2), Conv4,2(M2), Conv4,3(M2)]; M2''' = Sigmoid(BN(Conv5(M2'')));
    // M4 = M2 ⊙ M2'''.
    Var<T> msca(const Var<T>& m2, ops::Mode mode, ForwardTrace<T>* trace = nullptr) const {
        std::vector<Var<T>> scales;
        for (const auto& conv : conv4_) scales.push_back(conv(m2));
        auto stacked = ops::concat(scales, 1);
        auto gate = ops::sigmoid(bn5_(conv5_(stacked), mode));
        auto m4 = ops::mul(m2, gate);
        if (trace) {
            trace->entries["M2''"] = stacked;
            trace->entries["M2'''"] = gate;
            trace->entries["M4"] = m4;
        }
        return m4;
    }

    // S = Conv6(A) + Conv7(B); M5/M6 = max/avg pool of S over length;
    // M7 = Dropout(GELU(BN(Conv8(M5 + M6))));
    // y_hat = Softmax(Linear(Dropout(Linear(Flatten(M7))))).
    void output_module(const Var<T>& a, const Var<T>& b, ops::Mode mode, std::uint64_t seed,
                       ForwardTrace<T>& trace) const {
        auto s = ops::add(conv6_(a), conv7_(b));
        auto m5 = ops::global_pool(s, ops::PoolKind::max, 2);
        auto m6 = ops::global_pool(s, ops::PoolKind::avg, 2);
        auto fused = model_config_.fuse == Fuse::add ? ops::add(m5, m6) : ops::concat<T>({m5, m6}, 1);
        auto m7 = ops::dropout(ops::gelu(bn8_(conv8_(fused), mode)), model_config_.head_dropout, mode,
                               mix_seed(seed, 2));
        auto hidden = ops::dropout(fc1_(ops::flatten(m7)), model_config_.mlp_dropout, mode,
                                   mix_seed(seed, 3));
        auto y = ops::softmax(fc2_(hidden), 1);
        trace.entries["M5"] = m5;
        trace.entries["M6"] = m6;
        trace.entries["M7"] = m7;
        trace.entries["y_hat"] = y;
    }

    // Copies of all parameter values and buffers, in registration order.
    struct Snapshot {
        std::vector<Tensor<T>> params;
        std::vector<Tensor<T>> buffers;
    };

    Snapshot snapshot() {
        Snapshot s;
        for (const auto& p : store_.parameters()) s.params.push_back(p.var.value());
        for (const auto& b : store_.buffers()) s.buffers.push_back(*b.tensor);
        return s;
    }

    void restore(const Snapshot& s) {
        const auto& params = store_.parameters();
        auto buffers = store_.buffers();
        if (s.params.size() != params.size() || s.buffers.size() != buffers.size())
            throw ShapeError("snapshot does not match model layout");
        for (std::size_t i = 0; i < params.size(); ++i) {
            Var<T> v = params[i].var;
            if (s.params[i].shape() != v.shape()) throw ShapeError("snapshot shape mismatch");
            v.mutable_value() = s.params[i];
        }
        for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].tensor = s.buffers[i];
    }

private:
    void build_head(std::mt19937_64& rng) {
        const auto& c = model_config_;
        const std::size_t dim = encoder_->config().dim, ch = c.channels;
        const T eps = T(c.bn_eps), mom = T(c.bn_momentum);
        const Variant v = c.variant;
        if (!uses_cnn(v)) {
            bridge_ = Conv1dLayer<T>::same(store_, "bridge", dim, ch, 1, 1, rng);
        } else {
            conv1_ = Conv1dLayer<T>::same(store_, "cnn.conv1", dim, ch, c.conv1_kernel, 1, rng);
            bn1_ = BatchNormLayer<T>::make(store_, "cnn.bn1", ch, eps, mom);
        }
        if (uses_mcbam(v)) {
            conv2_ = Conv1dLayer<T>::same(store_, "mcbam.spatial.conv2", 2, 1, c.spatial_kernel, 1, rng);
            conv3_1_ = Conv1dLayer<T>::same(store_, "mcbam.channel.conv3_1", ch, ch / c.reduction, 1, 1, rng);
            conv3_2_ = Conv1dLayer<T>::same(store_, "mcbam.channel.conv3_2", ch / c.reduction, ch, 1, 1, rng);
        }
        if (uses_msca(v)) {
            for (std::size_t i = 0; i < 3; ++i)
                conv4_[i] = Conv1dLayer<T>::same(store_, "msca.conv4_" + std::to_string(i + 1), ch, ch,
                                                 c.msca_kernels[i], c.msca_dilations[i], rng);
            conv5_ = Conv1dLayer<T>::same(store_, "msca.conv5", 3 * ch, ch, 1, 1, rng);
            bn5_ = BatchNormLayer<T>::make(store_, "msca.bn5", ch, eps, mom);
        }
        conv6_ = Conv1dLayer<T>::same(store_, "output.conv6", ch, ch, c.output_kernel, 1, rng);
        conv7_ = Conv1dLayer<T>::same(store_, "output.conv7", ch, ch, c.output_kernel, 1, rng);
        const std::size_t fused = c.fuse == Fuse::add ? ch : 2 * ch;
        conv8_ = Conv1dLayer<T>::same(store_, "output.conv8", fused, ch, 1, 1, rng);
        bn8_ = BatchNormLayer<T>::make(store_, "output.bn8", ch, eps, mom);
        fc1_ = LinearLayer<T>::make(store_, "output.fc1", ch, c.hidden, rng);
        fc2_ = LinearLayer<T>::make(store_, "output.fc2", c.hidden, c.num_classes, rng);
    }

    ModelConfig model_config_;
    ParamStore<T> store_;
    std::optional<Encoder<T>> encoder_;
    Conv1dLayer<T> bridge_;
    Conv1dLayer<T> conv1_;
    BatchNormLayer<T> bn1_;
    Conv1dLayer<T> conv2_;
    Conv1dLayer<T> conv3_1_;
    Conv1dLayer<T> conv3_2_;
    std::array<Conv1dLayer<T>, 3> conv4_;
    Conv1dLayer<T> conv5_;
    BatchNormLayer<T> bn5_;
    Conv1dLayer<T> conv6_;
    Conv1dLayer<T> conv7_;
    Conv1dLayer<T> conv8_;
    BatchNormLayer<T> bn8_;
    LinearLayer<T> fc1_;
    LinearLayer<T> fc2_;
};

// Exact number of scalar parameters in the variant's graph (encoder included).
inline std::size_t parameter_count(const EncoderConfig& enc, const ModelConfig& cfg) {
    TfbsFinder<float> model(enc, cfg, 0);
    return model.parameter_count();
}

}  // namespace tfbs
