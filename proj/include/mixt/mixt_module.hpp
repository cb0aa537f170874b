#pragma once

#include <string>
#include <vector>

#include "mixt/backbone.hpp"
#include "mixt/collate.hpp"
#include "mixt/window.hpp"

namespace mixt {

// The in-context tuning module: a separate visual encoder, a text embedding
// dictionary, and a target embedding table, all under the "mixt." name
// prefix. Every part starts as a value-copy of its backbone counterpart and
// then trains independently while the backbone stays frozen.
inline void init_mixt_from_backbone(ParameterStore& store, const BackboneConfig& cfg,
                                    uint64_t /*seed*/) {
    cfg.validate();
    const Tensor& tok = store.value("backbone.tok_emb");
    if (tok.cols != cfg.d_model)
        fail("init_mixt_from_backbone: token embedding width ", tok.cols,
             " does not match d_model ", cfg.d_model);
    store.add("mixt.text_emb", tok, true);
    store.add("mixt.target_emb", tok, true);
    // The module's visual encoder also starts as a value-copy of the
    // backbone's, then trains independently. A fresh random encoder would
    // feed the frozen backbone activations unlike anything it was
    // pretrained on, and the short tuning budget goes to undoing that
    // disruption instead of improving on the zero-shot baseline.
    for (const char* part : {"patch_w", "patch_b", "pos_emb"}) {
        const Tensor src = store.value(std::string("backbone.vis.") + part);
        store.add(std::string("mixt.vis.") + part, src, true);
    }
}

// Marks the standard in-context tuning freeze: backbone frozen, module
// trainable.
inline void apply_icl_freeze(ParameterStore& store) {
    store.set_trainable_prefix("backbone.", false);
    if (store.set_trainable_prefix("mixt.", true) == 0)
        fail("apply_icl_freeze: store has no mixt parameters");
}

// [BOS_emb, visual patches, instruction embeddings, target embeddings,
// EOS_emb] -- all through the module's own tables, with sequence positions
// restarting at 0 for the example. Length equals the example's declared
// token budget.
inline int encode_context_example(ModelGraph& m, const MultimodalTriple& triple) {
    Graph& g = m.g;
    std::vector<int> parts;
    parts.push_back(g.embed_rows(m.p("mixt.text_emb"), {Vocabulary::kBos}));
    parts.push_back(embed_image(m, triple.image, "mixt.vis."));
    if (!triple.instruction.empty())
        parts.push_back(g.embed_rows(m.p("mixt.text_emb"), triple.instruction));
    if (!triple.target.empty())
        parts.push_back(g.embed_rows(m.p("mixt.target_emb"), triple.target));
    parts.push_back(g.embed_rows(m.p("mixt.text_emb"), {Vocabulary::kEos}));
    return add_positions(m, g.concat_rows(parts));
}

struct PrefixSequence {
    int node = -1;  // graph node of the L x d_model embedding block; -1 if L=0
    int length = 0;
    std::vector<std::pair<int, int>> boundaries;
};

// Concatenates per-example segments in order. N=0 yields an empty prefix.
inline PrefixSequence build_prefix(ModelGraph& m, const std::vector<MultimodalTriple>& context) {
    PrefixSequence p;
    std::vector<int> segments;
    for (const auto& triple : context) {
        const int seg = encode_context_example(m, triple);
        const int len = m.g.value(seg).rows;
        p.boundaries.emplace_back(p.length, p.length + len - 1);
        p.length += len;
        segments.push_back(seg);
    }
    if (!segments.empty())
        p.node = segments.size() == 1 ? segments[0] : m.g.concat_rows(segments);
    return p;
}

// Prefix rows precede query rows. Both sides arrive already positioned
// (positions restart per segment, so the frozen backbone sees the query at
// the same position rows with or without a prefix). An empty prefix returns
// the query node itself, which is what makes the N=0 reduction exact.
inline int attach_prefix(ModelGraph& m, const PrefixSequence& prefix, int query_source) {
    if (prefix.length == 0) return query_source;
    return m.g.concat_rows({prefix.node, query_source});
}

// Eq.-style in-context loss: NLL over the query target only. Context
// targets enter as conditioning embeddings, never as loss terms.
inline ForwardResult icl_loss(ModelGraph& m, const PackedContextWindow& window) {
    require(!window.query_target.empty(), "icl_loss: window has no query target");
    const PrefixSequence prefix = build_prefix(m, window.context);
    require(prefix.length == window.budget - image_patch_count(window.query_image, m.cfg.patch_size) -
                                 static_cast<int>(window.query_instruction.size()),
            "icl_loss: prefix length does not match the declared context budget");
    const int query =
        add_positions(m, query_source_embeddings(m, window.query_image, window.query_instruction));
    const int memory = encode_positioned(m, attach_prefix(m, prefix, query));

    ForwardResult r;
    std::vector<int> dec_input{Vocabulary::kBos};
    dec_input.insert(dec_input.end(), window.query_target.begin(), window.query_target.end());
    r.labels = window.query_target;
    r.labels.push_back(Vocabulary::kEos);
    r.logits = decode_logits(m, memory, dec_input);
    r.loss = loss_nll(m, r.logits, r.labels, {}, &r.label_count);
    return r;
}

// Encoder memory for a window without touching the decoder; used by
// generation, where decoder inputs grow token by token.
inline int icl_encode(ModelGraph& m, const PackedContextWindow& window) {
    const PrefixSequence prefix = build_prefix(m, window.context);
    const int query =
        add_positions(m, query_source_embeddings(m, window.query_image, window.query_instruction));
    return encode_positioned(m, attach_prefix(m, prefix, query));
}

}  // namespace mixt
