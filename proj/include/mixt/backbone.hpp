#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "mixt/graph.hpp"
#include "mixt/params.hpp"
#include "mixt/rng.hpp"
#include "mixt/window.hpp"

namespace mixt {

// Tiny unified encoder-decoder transformer. Pre-LN blocks, learned absolute
// positions over the full encoder input, weight-tied readout.
struct BackboneConfig {
    int d_model = 128;
    int n_heads = 4;
    int enc_layers = 2;
    int dec_layers = 2;
    int ffn_dim = 512;
    int patch_size = 8;
    int vocab_size = 0;
    int max_positions = 3072;
    int max_target_positions = 32;
    int max_image_patches = 576;
    double dropout = 0.0;

    void validate() const {
        require(d_model > 0 && n_heads > 0, "BackboneConfig: d_model and n_heads must be positive");
        if (d_model % n_heads != 0)
            fail("BackboneConfig: d_model ", d_model, " not divisible by n_heads ", n_heads);
        require(enc_layers >= 0 && dec_layers >= 0, "BackboneConfig: negative layer count");
        require(ffn_dim > 0 && patch_size > 0, "BackboneConfig: ffn_dim and patch_size must be positive");
        require(vocab_size > 0, "BackboneConfig: vocab_size not set");
        require(max_positions > 0 && max_target_positions > 0 && max_image_patches > 0,
                "BackboneConfig: position capacities must be positive");
        require(dropout >= 0.0 && dropout < 1.0, "BackboneConfig: dropout outside [0,1)");
    }

    int head_dim() const { return d_model / n_heads; }

    // Flat text form, hashed into checkpoints so a resume with a different
    // architecture is rejected.
    std::string snapshot() const {
        std::string s;
        const auto kv = [&s](const char* k, double v) {
            s += k;
            s += '=';
            if (v == static_cast<long long>(v))
                s += std::to_string(static_cast<long long>(v));
            else
                s += std::to_string(v);
            s += '\n';
        };
        kv("d_model", d_model);
        kv("n_heads", n_heads);
        kv("enc_layers", enc_layers);
        kv("dec_layers", dec_layers);
        kv("ffn_dim", ffn_dim);
        kv("patch_size", patch_size);
        kv("vocab_size", vocab_size);
        kv("max_positions", max_positions);
        kv("max_target_positions", max_target_positions);
        kv("max_image_patches", max_image_patches);
        kv("dropout", dropout);
        return s;
    }
};

namespace detail {

// Scaled-normal init, std 1/sqrt(d_model), per-tensor rng derived from the
// parameter name so values do not depend on insertion order.
inline void add_projection(ParameterStore& store, const std::string& name, int rows, int cols,
                           uint64_t seed, double stddev) {
    Rng rng = derived_rng(seed, name);
    store.add(name, Tensor::normal(rows, cols, stddev, rng), true);
}

inline void add_zeros(ParameterStore& store, const std::string& name, int rows, int cols) {
    store.add(name, Tensor::zeros(rows, cols), true);
}

}  // namespace detail

// All parameter names for one attention block: wq/bq, wk/bk, wv/bv, wo/bo.
inline void add_attention_params(ParameterStore& store, const std::string& prefix, int d_model,
                                 uint64_t seed, double stddev) {
    for (const char* part : {"wq", "wk", "wv", "wo"})
        detail::add_projection(store, prefix + part, d_model, d_model, seed, stddev);
    for (const char* part : {"bq", "bk", "bv", "bo"}) detail::add_zeros(store, prefix + part, 1, d_model);
}

inline void add_layer_norm_params(ParameterStore& store, const std::string& prefix, int d_model) {
    store.add(prefix + "gamma", Tensor::full(1, d_model, 1.0), true);
    store.add(prefix + "beta", Tensor::zeros(1, d_model), true);
}

inline void add_ffn_params(ParameterStore& store, const std::string& prefix, int d_model,
                           int ffn_dim, uint64_t seed, double stddev) {
    detail::add_projection(store, prefix + "w1", ffn_dim, d_model, seed, stddev);
    detail::add_zeros(store, prefix + "b1", 1, ffn_dim);
    detail::add_projection(store, prefix + "w2", d_model, ffn_dim, seed, stddev);
    detail::add_zeros(store, prefix + "b2", 1, d_model);
}

// Patch projection plus learned patch-position table. The position table
// lives inside the visual encoder so patch locations travel with the image
// regardless of where the image lands in the packed sequence.
inline void add_visual_encoder_params(ParameterStore& store, const std::string& prefix,
                                      const BackboneConfig& cfg, uint64_t seed) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const int patch_dim = 3 * cfg.patch_size * cfg.patch_size;
    detail::add_projection(store, prefix + "patch_w", cfg.d_model, patch_dim, seed, stddev);
    detail::add_zeros(store, prefix + "patch_b", 1, cfg.d_model);
    detail::add_projection(store, prefix + "pos_emb", cfg.max_image_patches, cfg.d_model, seed,
                           stddev);
}

inline ParameterStore init_backbone_params(const BackboneConfig& cfg, uint64_t seed) {
    cfg.validate();
    const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    ParameterStore store;
    detail::add_projection(store, "backbone.tok_emb", cfg.vocab_size, cfg.d_model, seed, stddev);
    detail::add_projection(store, "backbone.pos_emb", cfg.max_positions, cfg.d_model, seed, stddev);
    detail::add_projection(store, "backbone.dec_pos_emb", cfg.max_target_positions, cfg.d_model,
                           seed, stddev);
    add_visual_encoder_params(store, "backbone.vis.", cfg, seed);
    for (int i = 0; i < cfg.enc_layers; ++i) {
        const std::string p = "backbone.enc." + std::to_string(i) + ".";
        add_layer_norm_params(store, p + "ln1.", cfg.d_model);
        add_attention_params(store, p + "attn.", cfg.d_model, seed, stddev);
        add_layer_norm_params(store, p + "ln2.", cfg.d_model);
        add_ffn_params(store, p + "ffn.", cfg.d_model, cfg.ffn_dim, seed, stddev);
    }
    if (cfg.enc_layers > 0) add_layer_norm_params(store, "backbone.enc.final_ln.", cfg.d_model);
    for (int i = 0; i < cfg.dec_layers; ++i) {
        const std::string p = "backbone.dec." + std::to_string(i) + ".";
        add_layer_norm_params(store, p + "ln1.", cfg.d_model);
        add_attention_params(store, p + "self.", cfg.d_model, seed, stddev);
        add_layer_norm_params(store, p + "ln2.", cfg.d_model);
        add_attention_params(store, p + "cross.", cfg.d_model, seed, stddev);
        add_layer_norm_params(store, p + "ln3.", cfg.d_model);
        add_ffn_params(store, p + "ffn.", cfg.d_model, cfg.ffn_dim, seed, stddev);
    }
    if (cfg.dec_layers > 0) add_layer_norm_params(store, "backbone.dec.final_ln.", cfg.d_model);
    return store;
}

// Per-sample forward-graph builder. Caches parameter leaf nodes by index and
// carries the optional dropout state (null rng = inference, no dropout).
struct ModelGraph {
    Graph& g;
    const ParameterStore& store;
    const BackboneConfig& cfg;
    Rng* dropout_rng = nullptr;

    std::unordered_map<int, int> leaf_cache;

    int p(const std::string& name) {
        const int idx = store.index_of(name);
        auto it = leaf_cache.find(idx);
        if (it != leaf_cache.end()) return it->second;
        const int node = param_ref(g, store, idx);
        leaf_cache.emplace(idx, node);
        return node;
    }

    // Inverted dropout via an elementwise constant mask.
    int dropout(int x) {
        if (!dropout_rng || cfg.dropout <= 0.0) return x;
        const Tensor& v = g.value(x);
        Tensor mask(v.rows, v.cols);
        const double keep = 1.0 - cfg.dropout;
        for (auto& m : mask.data) m = (dropout_rng->next_double() < keep) ? 1.0 / keep : 0.0;
        return g.mul(x, g.input(std::move(mask)));
    }
};

// Multi-head attention over pre-normalized inputs. q_src attends to kv_src.
inline int attention(ModelGraph& m, const std::string& prefix, int q_src, int kv_src,
                     bool causal) {
    Graph& g = m.g;
    const int q = g.linear(q_src, m.p(prefix + "wq"), m.p(prefix + "bq"));
    const int k = g.linear(kv_src, m.p(prefix + "wk"), m.p(prefix + "bk"));
    const int v = g.linear(kv_src, m.p(prefix + "wv"), m.p(prefix + "bv"));
    const int dh = m.cfg.head_dim();
    std::vector<int> heads;
    for (int h = 0; h < m.cfg.n_heads; ++h) {
        const int qh = g.slice_cols(q, h * dh, dh);
        const int kh = g.slice_cols(k, h * dh, dh);
        const int vh = g.slice_cols(v, h * dh, dh);
        const int scores = g.scale(g.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        heads.push_back(g.matmul(g.softmax_rows(scores, causal), vh));
    }
    const int ctx = m.cfg.n_heads == 1 ? heads[0] : g.concat_cols(heads);
    return g.linear(ctx, m.p(prefix + "wo"), m.p(prefix + "bo"));
}

inline int ffn_block(ModelGraph& m, const std::string& prefix, int x) {
    Graph& g = m.g;
    const int h = g.relu(g.linear(x, m.p(prefix + "w1"), m.p(prefix + "b1")));
    return g.linear(h, m.p(prefix + "w2"), m.p(prefix + "b2"));
}

inline int layer_norm_block(ModelGraph& m, const std::string& prefix, int x) {
    return m.g.layer_norm(x, m.p(prefix + "gamma"), m.p(prefix + "beta"));
}

// Pre-LN encoder: x += attn(LN(x)); x += ffn(LN(x)); final LN after the stack.
inline int encoder_stack(ModelGraph& m, int x) {
    Graph& g = m.g;
    for (int i = 0; i < m.cfg.enc_layers; ++i) {
        const std::string p = "backbone.enc." + std::to_string(i) + ".";
        const int n1 = layer_norm_block(m, p + "ln1.", x);
        x = g.add(x, m.dropout(attention(m, p + "attn.", n1, n1, false)));
        x = g.add(x, m.dropout(ffn_block(m, p + "ffn.", layer_norm_block(m, p + "ln2.", x))));
    }
    if (m.cfg.enc_layers > 0) x = layer_norm_block(m, "backbone.enc.final_ln.", x);
    return x;
}

inline int decoder_stack(ModelGraph& m, int y, int memory) {
    Graph& g = m.g;
    for (int i = 0; i < m.cfg.dec_layers; ++i) {
        const std::string p = "backbone.dec." + std::to_string(i) + ".";
        const int n1 = layer_norm_block(m, p + "ln1.", y);
        y = g.add(y, m.dropout(attention(m, p + "self.", n1, n1, true)));
        y = g.add(y, m.dropout(attention(m, p + "cross.", layer_norm_block(m, p + "ln2.", y),
                                         memory, false)));
        y = g.add(y, m.dropout(ffn_block(m, p + "ffn.", layer_norm_block(m, p + "ln3.", y))));
    }
    if (m.cfg.dec_layers > 0) y = layer_norm_block(m, "backbone.dec.final_ln.", y);
    return y;
}

// Patch pixels (row-major patches, row-major pixels, RGB innermost, scaled
// to [0,1]) through the strided linear projection, plus patch positions.
inline int embed_image(ModelGraph& m, const Image& img, const std::string& vis_prefix) {
    const int ps = m.cfg.patch_size;
    const int patches = image_patch_count(img, ps);
    if (patches > m.cfg.max_image_patches)
        fail("embed_image: ", patches, " patches exceed capacity ", m.cfg.max_image_patches);
    const int grid_w = img.width / ps;
    Tensor px(patches, 3 * ps * ps);
    for (int pi = 0; pi < patches; ++pi) {
        const int gy = pi / grid_w, gx = pi % grid_w;
        int c = 0;
        for (int y = gy * ps; y < (gy + 1) * ps; ++y)
            for (int x = gx * ps; x < (gx + 1) * ps; ++x) {
                const size_t off = img.offset(y, x);
                px.at(pi, c++) = img.rgb[off] / 255.0;
                px.at(pi, c++) = img.rgb[off + 1] / 255.0;
                px.at(pi, c++) = img.rgb[off + 2] / 255.0;
            }
    }
    Graph& g = m.g;
    const int proj = g.linear(g.input(std::move(px)), m.p(vis_prefix + "patch_w"),
                              m.p(vis_prefix + "patch_b"));
    return g.add(proj, g.slice_rows(m.p(vis_prefix + "pos_emb"), 0, patches));
}

// Query source embeddings: backbone visual patches then instruction token
// embeddings. Sequence positions are NOT added here; callers position the
// block as one segment.
inline int query_source_embeddings(ModelGraph& m, const Image& img,
                                   const std::vector<int>& instruction) {
    Graph& g = m.g;
    const int vis = embed_image(m, img, "backbone.vis.");
    if (instruction.empty()) return vis;
    const int txt = g.embed_rows(m.p("backbone.tok_emb"), instruction);
    return g.concat_rows({vis, txt});
}

// Adds learned sequence positions 0..len-1 to one segment. Positions are
// segment-local: every context example and the query restart at row 0, so a
// backbone pretrained on bare queries sees the same position codes when a
// prefix is attached. Patch-grid locations are carried separately by the
// visual encoder's own position table.
inline int add_positions(ModelGraph& m, int x) {
    Graph& g = m.g;
    const int len = g.value(x).rows;
    if (len > m.cfg.max_positions)
        fail("add_positions: segment length ", len, " exceeds max positions ",
             m.cfg.max_positions);
    return g.add(x, g.slice_rows(m.p("backbone.pos_emb"), 0, len));
}

// Runs the encoder over already-positioned rows (one or more segments).
inline int encode_positioned(ModelGraph& m, int x) {
    const int len = m.g.value(x).rows;
    if (len > m.cfg.max_positions)
        fail("encode_positioned: input length ", len, " exceeds max positions ",
             m.cfg.max_positions);
    return encoder_stack(m, m.dropout(x));
}

// Positions and encodes a single-segment source (the bare-backbone path).
inline int encode_source(ModelGraph& m, int source) {
    return encode_positioned(m, add_positions(m, source));
}

// Teacher-forced decode: input ids are [BOS, target...]; returns logits
// against the tied token embedding.
inline int decode_logits(ModelGraph& m, int memory, const std::vector<int>& decoder_input) {
    require(!decoder_input.empty(), "decode_logits: empty decoder input");
    if (static_cast<int>(decoder_input.size()) > m.cfg.max_target_positions)
        fail("decode_logits: target length ", decoder_input.size(), " exceeds max ",
             m.cfg.max_target_positions);
    Graph& g = m.g;
    const int emb = g.embed_rows(m.p("backbone.tok_emb"), decoder_input);
    const int pos = g.slice_rows(m.p("backbone.dec_pos_emb"), 0,
                                 static_cast<int>(decoder_input.size()));
    const int y = decoder_stack(m, m.dropout(g.add(emb, pos)), memory);
    return g.matmul_nt(y, m.p("backbone.tok_emb"));
}

// Mean NLL over unmasked label positions. Returns the loss node; the count
// is needed by batch aggregation, so it is an out-parameter.
inline int loss_nll(ModelGraph& m, int logits, const std::vector<int>& labels,
                    const std::vector<uint8_t>& mask, int* unmasked_count = nullptr) {
    int count = 0;
    if (mask.empty())
        count = static_cast<int>(labels.size());
    else
        for (uint8_t v : mask) count += v ? 1 : 0;
    if (count == 0) fail("loss_nll: every label position is masked");
    if (unmasked_count) *unmasked_count = count;
    return m.g.scale(m.g.nll_sum(logits, labels, mask), 1.0 / count);
}

// Zero-shot teacher-forced loss on a bare (image, instruction, target).
struct ForwardResult {
    int logits = -1;
    int loss = -1;
    int label_count = 0;
    std::vector<int> labels;
};

inline ForwardResult backbone_query_loss(ModelGraph& m, const Image& img,
                                         const std::vector<int>& instruction,
                                         const std::vector<int>& target) {
    require(!target.empty(), "backbone_query_loss: query target is empty");
    ForwardResult r;
    const int memory = encode_source(m, query_source_embeddings(m, img, instruction));
    std::vector<int> dec_input{Vocabulary::kBos};
    dec_input.insert(dec_input.end(), target.begin(), target.end());
    r.labels = target;
    r.labels.push_back(Vocabulary::kEos);
    r.logits = decode_logits(m, memory, dec_input);
    r.loss = loss_nll(m, r.logits, r.labels, {}, &r.label_count);
    return r;
}

}  // namespace mixt
