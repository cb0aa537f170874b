#pragma once

#include <vector>

#include "mixt/common.hpp"
#include "mixt/tensor.hpp"
#include "mixt/vocab.hpp"

namespace mixt {

// One labeled example: [Image, Instruction, Target] in token-id space.
struct MultimodalTriple {
    Image image;
    std::vector<int> instruction;
    std::vector<int> target;  // may mix text and bin ids; empty = absent
};

struct PackConfig {
    int patch_size = 8;
    int max_source_text_len = 80;
    int max_target_len = 30;
    int context_limit = 3072;
};

inline int image_patch_count(const Image& img, int patch_size) {
    if (patch_size <= 0) fail("image_patch_count: patch size ", patch_size, " must be positive");
    if (img.height % patch_size != 0 || img.width % patch_size != 0)
        fail("image_patch_count: image ", img.height, "x", img.width,
             " not divisible by patch size ", patch_size);
    return (img.height / patch_size) * (img.width / patch_size);
}

// Token-budget accounting for one delimited context example:
// patch_count + |instruction| + |target| + 2 (BOS and EOS).
inline int example_budget(const MultimodalTriple& t, int patch_size) {
    return image_patch_count(t.image, patch_size) + static_cast<int>(t.instruction.size()) +
           static_cast<int>(t.target.size()) + 2;
}

// N context examples followed by the query. Boundary markers record where
// each example's BOS and EOS land in the flattened source sequence.
struct PackedContextWindow {
    std::vector<MultimodalTriple> context;
    Image query_image;
    std::vector<int> query_instruction;
    std::vector<int> query_target;  // empty at inference
    std::vector<std::pair<int, int>> boundaries;  // (bos_pos, eos_pos) per example
    int budget = 0;

    int shots() const { return static_cast<int>(context.size()); }
};

namespace detail {
inline void validate_triple(const MultimodalTriple& t, const Vocabulary& vocab,
                            const PackConfig& cfg, const char* what) {
    if (static_cast<int>(t.instruction.size()) > cfg.max_source_text_len)
        fail(what, ": instruction length ", t.instruction.size(), " exceeds max ",
             cfg.max_source_text_len);
    if (static_cast<int>(t.target.size()) > cfg.max_target_len)
        fail(what, ": target length ", t.target.size(), " exceeds max ", cfg.max_target_len);
    for (int id : t.instruction)
        if (id < 0 || id >= vocab.size())
            fail(what, ": instruction id ", id, " outside vocabulary of size ", vocab.size());
    for (int id : t.target)
        if (id < 0 || id >= vocab.size())
            fail(what, ": target id ", id, " outside vocabulary of size ", vocab.size());
}
}  // namespace detail

// Packs N context triples and a query into one window. Only context examples
// are BOS/EOS-delimited; the query keeps the plain backbone layout, so N=0 is
// exactly a bare backbone query.
inline PackedContextWindow pack_context_window(const std::vector<MultimodalTriple>& context,
                                               const MultimodalTriple& query,
                                               const Vocabulary& vocab,
                                               const PackConfig& cfg = {}) {
    PackedContextWindow w;
    w.context = context;
    w.query_image = query.image;
    w.query_instruction = query.instruction;
    w.query_target = query.target;

    int pos = 0;
    for (size_t i = 0; i < context.size(); ++i) {
        detail::validate_triple(context[i], vocab, cfg, "pack_context_window: context example");
        if (context[i].target.empty())
            fail("pack_context_window: context example ", i, " has no target");
        const int b = example_budget(context[i], cfg.patch_size);
        w.boundaries.emplace_back(pos, pos + b - 1);
        pos += b;
    }
    detail::validate_triple(query, vocab, cfg, "pack_context_window: query");
    const int query_source = image_patch_count(query.image, cfg.patch_size) +
                             static_cast<int>(query.instruction.size());
    w.budget = pos + query_source;
    if (w.budget > cfg.context_limit)
        fail("pack_context_window: budget ", w.budget, " exceeds limit ", cfg.context_limit,
             " by ", w.budget - cfg.context_limit, " tokens");
    return w;
}

}  // namespace mixt
