#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vtforge/error.hpp"
#include "vtforge/graph.hpp"
#include "vtforge/rng.hpp"
#include "vtforge/tensor.hpp"

namespace vtforge {

struct ViTConfig {
    int image_size = 32;
    int patch_size = 4;
    int channels = 3;
    int model_dim = 32;
    int heads = 4;
    int layers = 2;
    int mlp_ratio = 4;
    int projection_dim = 32;
    uint64_t seed = 1;

    int grid() const { return image_size / patch_size; }
    int tokens() const { return grid() * grid(); }  // patch tokens, excluding [CLS]
    int patch_len() const { return patch_size * patch_size * channels; }

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            fail(ErrKind::kConfig, "vit config: image_size " + std::to_string(image_size) +
                                       " must be a positive multiple of patch_size " + std::to_string(patch_size));
        if (channels != 3) fail(ErrKind::kConfig, "vit config: channels must be 3");
        if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0)
            fail(ErrKind::kConfig, "vit config: model_dim " + std::to_string(model_dim) +
                                       " must be a positive multiple of heads " + std::to_string(heads));
        if (layers < 1 || mlp_ratio < 1 || projection_dim < 1)
            fail(ErrKind::kConfig, "vit config: layers, mlp_ratio and projection_dim must be positive");
    }

    uint64_t fingerprint() const {  // architecture identity; seed excluded
        std::string s = "vit|" + std::to_string(image_size) + "|" + std::to_string(patch_size) + "|" +
                        std::to_string(channels) + "|" + std::to_string(model_dim) + "|" + std::to_string(heads) +
                        "|" + std::to_string(layers) + "|" + std::to_string(mlp_ratio) + "|" +
                        std::to_string(projection_dim);
        return fnv1a64(s);
    }
};

struct TextConfig {
    int vocab_size = 256;  // byte-level
    int max_len = 32;
    int model_dim = 32;
    int heads = 4;
    int layers = 2;
    int projection_dim = 32;
    uint64_t seed = 2;

    static constexpr int kMlpRatio = 4;

    void validate() const {
        if (vocab_size < 256) fail(ErrKind::kConfig, "text config: vocab_size must cover all byte values (>= 256)");
        if (max_len < 1) fail(ErrKind::kConfig, "text config: max_len must be positive");
        if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0)
            fail(ErrKind::kConfig, "text config: model_dim " + std::to_string(model_dim) +
                                       " must be a positive multiple of heads " + std::to_string(heads));
        if (layers < 1 || projection_dim < 1)
            fail(ErrKind::kConfig, "text config: layers and projection_dim must be positive");
    }

    uint64_t fingerprint() const {
        std::string s = "text|" + std::to_string(vocab_size) + "|" + std::to_string(max_len) + "|" +
                        std::to_string(model_dim) + "|" + std::to_string(heads) + "|" + std::to_string(layers) +
                        "|" + std::to_string(projection_dim);
        return fnv1a64(s);
    }
};

// Named parameter tensors in a fixed order. Immutable after creation by
// convention; share across threads read-only.
template <typename T>
struct Weights {
    std::vector<std::pair<std::string, Tensor<T>>> tensors;

    const Tensor<T>& at(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        fail(ErrKind::kConfig, "weights: no tensor named '" + name + "'");
    }
    Tensor<T>& at_mut(const std::string& name) {
        return const_cast<Tensor<T>&>(static_cast<const Weights*>(this)->at(name));
    }
    bool has(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return true;
        return false;
    }

    // hash over names, shapes and the f32 payload
    uint64_t fingerprint() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& [n, t] : tensors) {
            h = fnv1a64(n, h);
            for (int d : t.shape) h = fnv1a64(&d, sizeof(d), h);
            for (T v : t.data) {
                float f = static_cast<float>(v);
                h = fnv1a64(&f, sizeof(f), h);
            }
        }
        return h;
    }
};

namespace detail {

inline void append_block_schema(std::vector<std::pair<std::string, Shape>>& out, int layer, int dim, int hidden) {
    std::string p = "layers." + std::to_string(layer) + ".";
    out.emplace_back(p + "ln1.gain", Shape{dim});
    out.emplace_back(p + "ln1.bias", Shape{dim});
    for (const char* m : {"wq", "wk", "wv", "wo"}) out.emplace_back(p + "attn." + m, Shape{dim, dim});
    for (const char* m : {"bq", "bk", "bv", "bo"}) out.emplace_back(p + "attn." + m, Shape{dim});
    out.emplace_back(p + "ln2.gain", Shape{dim});
    out.emplace_back(p + "ln2.bias", Shape{dim});
    out.emplace_back(p + "mlp.w1", Shape{dim, hidden});
    out.emplace_back(p + "mlp.b1", Shape{hidden});
    out.emplace_back(p + "mlp.w2", Shape{hidden, dim});
    out.emplace_back(p + "mlp.b2", Shape{dim});
}

// Weight matrices and embeddings draw from N(0, 0.02^2); bias-like tensors
// (last name component starting with 'b') start at zero, layernorm gains at
// one.
inline char tensor_init_kind(const std::string& name) {
    size_t dot = name.rfind('.');
    std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    if (leaf == "gain") return 'o';
    if (!leaf.empty() && leaf[0] == 'b') return 'z';
    return 'g';
}

template <typename T>
Weights<T> init_from_schema(const std::vector<std::pair<std::string, Shape>>& schema, uint64_t seed) {
    Weights<T> w;
    for (const auto& [name, shape] : schema) {
        Tensor<T> t(shape);
        char kind = tensor_init_kind(name);
        if (kind == 'g') {
            CounterRng rng(seed, fnv1a64(name));
            for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = T(0.02 * rng.normal_at(i));
        } else if (kind == 'o') {
            std::fill(t.data.begin(), t.data.end(), T(1));
        }  // bias tensors stay zero
        w.tensors.emplace_back(name, std::move(t));
    }
    return w;
}

}  // namespace detail

inline std::vector<std::pair<std::string, Shape>> image_weight_schema(const ViTConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, Shape>> s;
    s.emplace_back("patch_embed.weight", Shape{cfg.patch_len(), cfg.model_dim});
    s.emplace_back("patch_embed.bias", Shape{cfg.model_dim});
    s.emplace_back("cls_token", Shape{1, cfg.model_dim});
    s.emplace_back("pos_embed", Shape{cfg.tokens() + 1, cfg.model_dim});
    for (int l = 0; l < cfg.layers; ++l)
        detail::append_block_schema(s, l, cfg.model_dim, cfg.model_dim * cfg.mlp_ratio);
    s.emplace_back("ln_f.gain", Shape{cfg.model_dim});
    s.emplace_back("ln_f.bias", Shape{cfg.model_dim});
    s.emplace_back("proj", Shape{cfg.model_dim, cfg.projection_dim});
    return s;
}

inline std::vector<std::pair<std::string, Shape>> text_weight_schema(const TextConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, Shape>> s;
    s.emplace_back("tok_embed", Shape{cfg.vocab_size, cfg.model_dim});
    s.emplace_back("pos_embed", Shape{cfg.max_len, cfg.model_dim});
    for (int l = 0; l < cfg.layers; ++l)
        detail::append_block_schema(s, l, cfg.model_dim, cfg.model_dim * TextConfig::kMlpRatio);
    s.emplace_back("ln_f.gain", Shape{cfg.model_dim});
    s.emplace_back("ln_f.bias", Shape{cfg.model_dim});
    s.emplace_back("proj", Shape{cfg.model_dim, cfg.projection_dim});
    return s;
}

// Deterministic Gaussian init (std 0.02), one counter stream per tensor name.
// Values are drawn in double and rounded to T, so float and double
// instantiations of the same config agree.
template <typename T = float>
Weights<T> init_image_weights(const ViTConfig& cfg) {
    return detail::init_from_schema<T>(image_weight_schema(cfg), cfg.seed);
}

template <typename T = float>
Weights<T> init_text_weights(const TextConfig& cfg) {
    return detail::init_from_schema<T>(text_weight_schema(cfg), cfg.seed);
}

template <typename T>
struct EncoderOutput {
    Tensor<T> cls;     // projected [CLS] state, length projection_dim
    Tensor<T> tokens;  // L x model_dim patch states, [CLS] row excluded
};

template <typename T>
struct EncodedImageIds {
    typename Graph<T>::Id cls;
    typename Graph<T>::Id tokens;
};

namespace detail {

template <typename T>
typename Graph<T>::Id transformer_block(Graph<T>& g, const Weights<T>& w, typename Graph<T>::Id x, int layer,
                                        int dim, int heads) {
    using Id = typename Graph<T>::Id;
    std::string p = "layers." + std::to_string(layer) + ".";
    auto c = [&](const std::string& name) { return g.constant(w.at(name)); };

    Id normed = g.layer_norm(x, c(p + "ln1.gain"), c(p + "ln1.bias"));
    Id q = g.add_rowwise(g.matmul(normed, c(p + "attn.wq")), c(p + "attn.bq"));
    Id k = g.add_rowwise(g.matmul(normed, c(p + "attn.wk")), c(p + "attn.bk"));
    Id v = g.add_rowwise(g.matmul(normed, c(p + "attn.wv")), c(p + "attn.bv"));

    int head_dim = dim / heads;
    T scale = T(1.0 / std::sqrt(double(head_dim)));
    std::vector<Id> ctx;
    for (int h = 0; h < heads; ++h) {
        Id qh = g.slice_cols(q, h * head_dim, (h + 1) * head_dim);
        Id kh = g.slice_cols(k, h * head_dim, (h + 1) * head_dim);
        Id vh = g.slice_cols(v, h * head_dim, (h + 1) * head_dim);
        Id scores = g.scalar_mul(g.matmul(qh, g.transpose(kh)), scale);
        Id attn = g.softmax(scores, 1);
        ctx.push_back(g.matmul(attn, vh));
    }
    Id merged = heads == 1 ? ctx[0] : g.concat_cols(ctx);
    Id attn_out = g.add_rowwise(g.matmul(merged, c(p + "attn.wo")), c(p + "attn.bo"));
    Id x1 = g.add(x, attn_out);

    Id normed2 = g.layer_norm(x1, c(p + "ln2.gain"), c(p + "ln2.bias"));
    Id hidden = g.gelu(g.add_rowwise(g.matmul(normed2, c(p + "mlp.w1")), c(p + "mlp.b1")));
    Id mlp_out = g.add_rowwise(g.matmul(hidden, c(p + "mlp.w2")), c(p + "mlp.b2"));
    return g.add(x1, mlp_out);
}

}  // namespace detail

// Records the image encoder into g, differentiable w.r.t. the image node.
// Pixels are standardized inside (mean 0.5, std 0.5 per channel), so the
// caller's image stays in [0,1] space.
template <typename T>
EncodedImageIds<T> encode_image_into(Graph<T>& g, const Weights<T>& w, const ViTConfig& cfg,
                                     typename Graph<T>::Id image) {
    using Id = typename Graph<T>::Id;
    cfg.validate();
    const auto& shape = g.value(image).shape;
    Shape want{cfg.image_size, cfg.image_size, cfg.channels};
    if (shape != want)
        fail(ErrKind::kShape, "encode_image: image shape " + shape_str(shape) + " does not match config " +
                                  shape_str(want));
    Id standardized = g.scalar_add(g.scalar_mul(image, T(2)), T(-1));
    Id patches = g.patchify(standardized, cfg.patch_size);
    Id tok = g.add_rowwise(g.matmul(patches, g.constant(w.at("patch_embed.weight"))),
                           g.constant(w.at("patch_embed.bias")));
    Id seq = g.concat_rows({g.constant(w.at("cls_token")), tok});
    seq = g.add(seq, g.constant(w.at("pos_embed")));
    for (int l = 0; l < cfg.layers; ++l)
        seq = detail::transformer_block(g, w, seq, l, cfg.model_dim, cfg.heads);
    Id final_states = g.layer_norm(seq, g.constant(w.at("ln_f.gain")), g.constant(w.at("ln_f.bias")));
    Id tokens = g.slice_rows(final_states, 1, cfg.tokens() + 1);
    Id cls_state = g.slice_rows(final_states, 0, 1);
    Id cls = g.reshape(g.matmul(cls_state, g.constant(w.at("proj"))), Shape{cfg.projection_dim});
    return {cls, tokens};
}

template <typename T>
EncoderOutput<T> encode_image(const Weights<T>& w, const ViTConfig& cfg, const Tensor<T>& image) {
    for (T v : image.data)
        if (!(double(v) >= 0.0 && double(v) <= 1.0))
            fail(ErrKind::kNumeric, "encode_image: pixel value " + std::to_string(double(v)) + " outside [0,1]");
    Graph<T> g;
    auto id = g.input("image", image);
    auto enc = encode_image_into(g, w, cfg, id);
    EncoderOutput<T> out{g.value(enc.cls), g.value(enc.tokens)};
    if (!out.cls.all_finite() || !out.tokens.all_finite())
        fail(ErrKind::kNumeric, "encode_image: non-finite encoder output");
    return out;
}

inline std::vector<int> caption_to_ids(const std::string& caption, int max_len) {
    if (caption.empty()) fail(ErrKind::kConfig, "encode_text: empty caption");
    std::vector<int> ids;
    for (size_t i = 0; i < caption.size() && static_cast<int>(i) < max_len; ++i)
        ids.push_back(static_cast<int>(static_cast<unsigned char>(caption[i])));
    return ids;
}

// Byte-level text tower; returns the projected first-position state.
template <typename T>
typename Graph<T>::Id encode_text_into(Graph<T>& g, const Weights<T>& w, const TextConfig& cfg,
                                       const std::string& caption) {
    using Id = typename Graph<T>::Id;
    cfg.validate();
    std::vector<int> ids = caption_to_ids(caption, cfg.max_len);
    Id emb = g.embedding_lookup(g.constant(w.at("tok_embed")), ids);
    Id pos = g.slice_rows(g.constant(w.at("pos_embed")), 0, static_cast<int>(ids.size()));
    Id seq = g.add(emb, pos);
    for (int l = 0; l < cfg.layers; ++l)
        seq = detail::transformer_block(g, w, seq, l, cfg.model_dim, cfg.heads);
    Id final_states = g.layer_norm(seq, g.constant(w.at("ln_f.gain")), g.constant(w.at("ln_f.bias")));
    Id first = g.slice_rows(final_states, 0, 1);
    return g.reshape(g.matmul(first, g.constant(w.at("proj"))), Shape{cfg.projection_dim});
}

template <typename T>
Tensor<T> encode_text(const Weights<T>& w, const TextConfig& cfg, const std::string& caption) {
    Graph<T> g;
    auto id = encode_text_into(g, w, cfg, caption);
    Tensor<T> out = g.value(id);
    if (!out.all_finite()) fail(ErrKind::kNumeric, "encode_text: non-finite encoder output");
    return out;
}

}  // namespace vtforge
