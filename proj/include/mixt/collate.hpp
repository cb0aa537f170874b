#pragma once

#include <vector>

#include "mixt/common.hpp"
#include "mixt/window.hpp"

namespace mixt {

// One shot position's instruction or target sequences, padded to the batch
// maximum at that position. mask: 1 = real token, 0 = padding.
struct PaddedBlock {
    std::vector<std::vector<int>> ids;       // [B][width]
    std::vector<std::vector<uint8_t>> mask;  // [B][width]
    int width = 0;

    std::vector<int> unpadded(int b) const {
        std::vector<int> out;
        for (int i = 0; i < width; ++i)
            if (mask[b][i]) out.push_back(ids[b][i]);
        return out;
    }
};

namespace detail {
inline PaddedBlock pad_block(const std::vector<const std::vector<int>*>& rows, int pad_id) {
    PaddedBlock blk;
    for (const auto* r : rows) blk.width = std::max(blk.width, static_cast<int>(r->size()));
    for (const auto* r : rows) {
        std::vector<int> ids(blk.width, pad_id);
        std::vector<uint8_t> mask(blk.width, 0);
        for (size_t i = 0; i < r->size(); ++i) {
            ids[i] = (*r)[i];
            mask[i] = 1;
        }
        blk.ids.push_back(std::move(ids));
        blk.mask.push_back(std::move(mask));
    }
    return blk;
}
}  // namespace detail

// Windows padded per shot position: every example at shot k shares the batch
// maximum instruction/target width for k. Padding is mask-only — unpadding
// reproduces the inputs bit-exactly via window(b).
struct CollatedBatch {
    int shots = 0;
    int pad_id = 0;
    std::vector<std::vector<Image>> context_images;  // [N][B]
    std::vector<PaddedBlock> instructions;           // [N]
    std::vector<PaddedBlock> targets;                // [N]
    std::vector<Image> query_images;                 // [B]
    PaddedBlock query_instruction;
    PaddedBlock query_target;
    std::vector<std::vector<std::pair<int, int>>> boundaries;  // per window
    std::vector<int> budgets;                                  // per window

    int batch_size() const { return static_cast<int>(query_images.size()); }

    PackedContextWindow window(int b) const {
        PackedContextWindow w;
        for (int k = 0; k < shots; ++k) {
            MultimodalTriple t;
            t.image = context_images[k][b];
            t.instruction = instructions[k].unpadded(b);
            t.target = targets[k].unpadded(b);
            w.context.push_back(std::move(t));
        }
        w.query_image = query_images[b];
        w.query_instruction = query_instruction.unpadded(b);
        w.query_target = query_target.unpadded(b);
        w.boundaries = boundaries[b];
        w.budget = budgets[b];
        return w;
    }
};

inline CollatedBatch collate_batch(const std::vector<PackedContextWindow>& windows, int pad_id) {
    require(!windows.empty(), "collate_batch: empty batch");
    CollatedBatch out;
    out.shots = windows[0].shots();
    out.pad_id = pad_id;
    for (size_t i = 1; i < windows.size(); ++i)
        if (windows[i].shots() != out.shots)
            fail("collate_batch: mixed shot counts in one batch: window 0 has ", out.shots,
                 ", window ", i, " has ", windows[i].shots());

    const int B = static_cast<int>(windows.size());
    for (int k = 0; k < out.shots; ++k) {
        std::vector<Image> imgs;
        std::vector<const std::vector<int>*> instrs, tgts;
        for (int b = 0; b < B; ++b) {
            imgs.push_back(windows[b].context[k].image);
            instrs.push_back(&windows[b].context[k].instruction);
            tgts.push_back(&windows[b].context[k].target);
        }
        out.context_images.push_back(std::move(imgs));
        out.instructions.push_back(detail::pad_block(instrs, pad_id));
        out.targets.push_back(detail::pad_block(tgts, pad_id));
    }
    std::vector<const std::vector<int>*> qi, qt;
    for (int b = 0; b < B; ++b) {
        out.query_images.push_back(windows[b].query_image);
        qi.push_back(&windows[b].query_instruction);
        qt.push_back(&windows[b].query_target);
        out.boundaries.push_back(windows[b].boundaries);
        out.budgets.push_back(windows[b].budget);
    }
    out.query_instruction = detail::pad_block(qi, pad_id);
    out.query_target = detail::pad_block(qt, pad_id);
    return out;
}

}  // namespace mixt
