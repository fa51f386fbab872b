#pragma once

#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "tfbs/binary_io.hpp"
#include "tfbs/layers.hpp"
#include "tfbs/seqdata.hpp"

namespace tfbs {

struct EncoderConfig {
    std::size_t layers = 2;        // N
    std::size_t heads = 4;         // h
    std::size_t dim = 128;         // D
    std::size_t ffn_dim = 256;
    std::size_t vocab_size = 1026;  // 4^5 + 2
    std::size_t max_positions = 512;
    double ln_eps = 1e-12;

    std::size_t head_dim() const { return heads ? dim / heads : 0; }  // d_k
};

inline void validate(const EncoderConfig& c) {
    if (c.layers < 1) throw ConfigError("encoder needs at least one layer");
    if (c.heads < 1 || c.dim % c.heads != 0)
        throw ConfigError("embedding dim " + std::to_string(c.dim) + " not divisible by heads " +
                          std::to_string(c.heads));
    if (c.ffn_dim < 1 || c.vocab_size < 1 || c.max_positions < 1)
        throw ConfigError("encoder sizes must be positive");
    if (!(c.ln_eps > 0)) throw ConfigError("layer-norm eps must be positive");
}

template <typename T>
struct EncoderLayerParams {
    LinearLayer<T> query;   // columns [i*d_k, (i+1)*d_k) belong to head i
    LinearLayer<T> key;
    LinearLayer<T> value;
    LinearLayer<T> output;  // W^O
    LayerNormLayer<T> norm1;
    LinearLayer<T> ffn_in;
    LinearLayer<T> ffn_out;
    LayerNormLayer<T> norm2;
};

// BERT-style encoder: token + learned positional embeddings, then N layers of
// multi-head self-attention and a GELU feed-forward block, each wrapped in a
// residual connection followed by layer normalization.
template <typename T>
class Encoder {
public:
    Encoder(ParamStore<T>& store, const EncoderConfig& config, std::mt19937_64& rng,
            const std::string& prefix = "encoder")
        : config_(config) {
        validate(config_);
        const T emb_std = T(0.02);
        token_embedding_ = store.add(prefix + ".token_embedding",
                                     normal_tensor<T>({config_.vocab_size, config_.dim}, emb_std, rng));
        position_embedding_ = store.add(
            prefix + ".position_embedding",
            normal_tensor<T>({config_.max_positions, config_.dim}, emb_std, rng));
        const T eps = T(config_.ln_eps);
        for (std::size_t n = 0; n < config_.layers; ++n) {
            const std::string p = prefix + ".layer" + std::to_string(n);
            EncoderLayerParams<T> l;
            l.query = LinearLayer<T>::make(store, p + ".attn.query", config_.dim, config_.dim, rng, false);
            l.key = LinearLayer<T>::make(store, p + ".attn.key", config_.dim, config_.dim, rng, false);
            l.value = LinearLayer<T>::make(store, p + ".attn.value", config_.dim, config_.dim, rng, false);
            l.output = LinearLayer<T>::make(store, p + ".attn.output", config_.dim, config_.dim, rng, false);
            l.norm1 = LayerNormLayer<T>::make(store, p + ".norm1", config_.dim, eps);
            l.ffn_in = LinearLayer<T>::make(store, p + ".ffn.in", config_.dim, config_.ffn_dim, rng);
            l.ffn_out = LinearLayer<T>::make(store, p + ".ffn.out", config_.ffn_dim, config_.dim, rng);
            l.norm2 = LayerNormLayer<T>::make(store, p + ".norm2", config_.dim, eps);
            layers_.push_back(std::move(l));
        }
    }

    const EncoderConfig& config() const { return config_; }
    const std::vector<EncoderLayerParams<T>>& layers() const { return layers_; }
    const Var<T>& token_embedding() const { return token_embedding_; }
    const Var<T>& position_embedding() const { return position_embedding_; }

    // M[b,t] = token_embedding[id(b,t)] + position_embedding[t]  -> (n, d, D)
    Var<T> embed(const seqdata::TokenizedBatch& tokens) const {
        if (tokens.tokens > config_.max_positions)
            throw ShapeError(std::to_string(tokens.tokens) + " tokens exceed max_positions " +
                             std::to_string(config_.max_positions));
        auto tok = ops::embedding<T>(tokens.token_ids, tokens.batch, tokens.tokens, token_embedding_);
        return ops::add(tok, ops::leading_rows(position_embedding_, tokens.tokens));
    }

    // Concatenation(head_1..head_h) W^O with
    // head_i = Softmax(M W^Q_i (M W^K_i)^T / sqrt(d_k)) M W^V_i.
    // When `weights` is given it receives the (n, h, d, d) attention maps.
    Var<T> multihead(const Var<T>& m, const EncoderLayerParams<T>& layer,
                     Tensor<T>* weights = nullptr) const {
        ops::detail::require_rank(m.shape(), 3, "multihead input");
        const std::size_t n = m.dim(0), d = m.dim(1), h = config_.heads, dk = config_.head_dim();
        if (m.dim(2) != config_.dim) throw ShapeError("multihead input width mismatch");
        auto split_heads = [&](const Var<T>& x) {
            return ops::permute(ops::reshape(x, {n, d, h, dk}), {0, 2, 1, 3});
        };
        auto q = split_heads(layer.query(m));
        auto k = split_heads(layer.key(m));
        auto v = split_heads(layer.value(m));
        auto scores = ops::scale(ops::matmul(q, k, true), T(1) / std::sqrt(T(dk)));
        auto attn = ops::softmax(scores, 3);
        if (weights) *weights = attn.value();
        auto heads = ops::matmul(attn, v);  // (n, h, d, dk)
        auto merged = ops::reshape(ops::permute(heads, {0, 2, 1, 3}), {n, d, config_.dim});
        return layer.output(merged);
    }

    // A = LN(M + Multihead(M)); M' = LN(A + FFN(A)).
    Var<T> layer_forward(const Var<T>& m, const EncoderLayerParams<T>& layer,
                         Tensor<T>* weights = nullptr) const {
        auto a = layer.norm1(ops::add(m, multihead(m, layer, weights)));
        auto ffn = layer.ffn_out(ops::gelu(layer.ffn_in(a)));
        return layer.norm2(ops::add(a, ffn));
    }

    // Embedding followed by every encoder layer -> M1 (n, d, D).
    Var<T> encode(const seqdata::TokenizedBatch& tokens) const {
        Var<T> m = embed(tokens);
        for (const auto& layer : layers_) m = layer_forward(m, layer);
        return m;
    }

private:
    EncoderConfig config_;
    Var<T> token_embedding_;
    Var<T> position_embedding_;
    std::vector<EncoderLayerParams<T>> layers_;
};

// ---------------------------------------------------------------------------
// Embedding exchange file: "TFBSEMB1", u32 record count, u32 d, u32 D, then
// count*d*D little-endian float32 values, row-major per record.

inline constexpr char kEmbeddingMagic[9] = "TFBSEMB1";

inline void write_embeddings(std::ostream& out, const Tensor<float>& m) {
    if (m.rank() != 3) throw ShapeError("embedding batch must have shape (records, d, D)");
    out.write(kEmbeddingMagic, 8);
    for (std::size_t i = 0; i < 3; ++i) binio::write_u32(out, std::uint32_t(m.dim(i)));
    for (float v : m.values()) binio::write_f32(out, v);
    if (!out) throw FormatError("failed writing embedding file");
}

inline void write_embeddings(const std::string& path, const Tensor<float>& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_embeddings(out, m);
}

// Reads the whole batch or throws; never returns a partial batch.
inline Tensor<float> read_embeddings(std::istream& in) {
    binio::expect_magic(in, kEmbeddingMagic);
    const std::uint32_t count = binio::read_u32(in, "record count");
    const std::uint32_t d = binio::read_u32(in, "token count");
    const std::uint32_t dim = binio::read_u32(in, "embedding dim");
    if (d == 0 || dim == 0) throw FormatError("embedding file declares an empty matrix");
    const std::size_t n = std::size_t(count) * d * dim;
    std::vector<unsigned char> raw(n * 4);
    binio::read_exact(in, reinterpret_cast<char*>(raw.data()), raw.size(), "embedding payload");
    binio::expect_eof(in);
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* b = raw.data() + 4 * i;
        const std::uint32_t u = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                                std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
        values[i] = std::bit_cast<float>(u);
    }
    return Tensor<float>({count, d, dim}, std::move(values));
}

inline Tensor<float> load_external_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open embedding file '" + path + "'");
    return read_embeddings(in);
}

}  // namespace tfbs
