#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mixt/backbone.hpp"
#include "mixt/common.hpp"
#include "mixt/mixt_module.hpp"
#include "mixt/params.hpp"
#include "mixt/vocab.hpp"
#include "mixt/window.hpp"

namespace mixt {

// Next-token distribution source for decoding. The prefix is the target
// generated so far, without BOS or EOS.
class StepScorer {
  public:
    virtual ~StepScorer() = default;
    virtual int vocab_size() const = 0;
    virtual std::vector<double> next_log_probs(const std::vector<int>& prefix) = 0;
};

// Scores continuations with the model: the packed window (context examples
// plus query source) is encoded once, then each call runs the decoder over
// [BOS, prefix] and reads out log-probabilities for the next token. All
// decode passes extend one graph so the encoded memory is reused.
class ModelScorer : public StepScorer {
  public:
    ModelScorer(const ParameterStore& store, const BackboneConfig& cfg,
                const PackedContextWindow& window)
        : model_{graph_, store, cfg} {
        memory_ = icl_encode(model_, window);
    }

    int vocab_size() const override { return model_.cfg.vocab_size; }

    std::vector<double> next_log_probs(const std::vector<int>& prefix) override {
        const int len = static_cast<int>(prefix.size()) + 1;
        if (len > model_.cfg.max_target_positions)
            fail("decode prefix length ", len, " exceeds max target positions ",
                 model_.cfg.max_target_positions);
        std::vector<int> dec_input{Vocabulary::kBos};
        dec_input.insert(dec_input.end(), prefix.begin(), prefix.end());
        Graph& g = graph_;
        const int emb = g.embed_rows(model_.p("backbone.tok_emb"), dec_input);
        const int pos = g.slice_rows(model_.p("backbone.dec_pos_emb"), 0, len);
        const int y = decoder_stack(model_, g.add(emb, pos), memory_);
        // Only the final position feeds the next-token choice; slicing before
        // the vocabulary readout keeps the graph small.
        const int last = g.slice_rows(y, len - 1, 1);
        const int logits = g.matmul_nt(last, model_.p("backbone.tok_emb"));
        const Tensor& row = g.value(logits);
        double max_logit = row.data[0];
        for (double v : row.data) max_logit = std::max(max_logit, v);
        double sum = 0.0;
        for (double v : row.data) sum += std::exp(v - max_logit);
        const double lse = max_logit + std::log(sum);
        std::vector<double> out(row.data.size());
        for (size_t i = 0; i < row.data.size(); ++i) out[i] = row.data[i] - lse;
        return out;
    }

  private:
    Graph graph_;
    ModelGraph model_;
    int memory_ = -1;
};

// A decoded sequence (without EOS) with its summed log-probability.
// finished=false means the length cap was hit before EOS appeared.
struct BeamResult {
    std::vector<int> tokens;
    double log_prob = 0.0;
    bool finished = false;
};

// Greedy decoding: always take the argmax token, stop at EOS or max_len.
inline BeamResult greedy_decode(StepScorer& scorer, int max_len) {
    require(max_len >= 1, "greedy_decode: max_len must be at least 1");
    BeamResult r;
    for (int t = 0; t < max_len; ++t) {
        const std::vector<double> lp = scorer.next_log_probs(r.tokens);
        const int best = static_cast<int>(
            std::max_element(lp.begin(), lp.end()) - lp.begin());
        r.log_prob += lp[static_cast<size_t>(best)];
        if (best == Vocabulary::kEos) {
            r.finished = true;
            return r;
        }
        r.tokens.push_back(best);
    }
    return r;
}

// Beam search scored by summed log-probability (no length normalization).
// EOS retires a hypothesis into the finished pool; the best finished
// hypothesis wins. Because every token only lowers a sum of log-probs, the
// search stops once the best finished score matches or beats every live one.
// If max_len passes with nothing finished, the best live hypothesis is
// returned flagged unfinished. With beam=1 each step keeps exactly the
// argmax continuation, so the result equals greedy decoding.
inline BeamResult beam_search(StepScorer& scorer, int beam, int max_len) {
    require(beam >= 1, "beam_search: beam must be at least 1");
    require(max_len >= 1, "beam_search: max_len must be at least 1");

    struct Hyp {
        std::vector<int> tokens;
        double log_prob = 0.0;
    };
    std::vector<Hyp> live{Hyp{}};
    std::vector<BeamResult> finished;

    for (int t = 0; t < max_len && !live.empty(); ++t) {
        struct Cand {
            int hyp;
            int token;
            double score;
        };
        std::vector<Cand> cands;
        cands.reserve(live.size() * static_cast<size_t>(scorer.vocab_size()));
        for (int h = 0; h < static_cast<int>(live.size()); ++h) {
            const std::vector<double> lp = scorer.next_log_probs(live[h].tokens);
            for (int tok = 0; tok < static_cast<int>(lp.size()); ++tok)
                cands.push_back({h, tok, live[h].log_prob + lp[static_cast<size_t>(tok)]});
        }
        const size_t keep = std::min(cands.size(), static_cast<size_t>(beam));
        std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                          [](const Cand& a, const Cand& b) {
                              if (a.score != b.score) return a.score > b.score;
                              if (a.hyp != b.hyp) return a.hyp < b.hyp;
                              return a.token < b.token;
                          });
        std::vector<Hyp> next;
        for (size_t c = 0; c < keep; ++c) {
            const Hyp& parent = live[static_cast<size_t>(cands[c].hyp)];
            if (cands[c].token == Vocabulary::kEos) {
                finished.push_back(BeamResult{parent.tokens, cands[c].score, true});
            } else {
                Hyp h = parent;
                h.tokens.push_back(cands[c].token);
                h.log_prob = cands[c].score;
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);
        if (!finished.empty() && !live.empty()) {
            const double best_finished =
                std::max_element(finished.begin(), finished.end(),
                                 [](const BeamResult& a, const BeamResult& b) {
                                     return a.log_prob < b.log_prob;
                                 })
                    ->log_prob;
            const double best_live =
                std::max_element(live.begin(), live.end(), [](const Hyp& a, const Hyp& b) {
                    return a.log_prob < b.log_prob;
                })->log_prob;
            if (best_finished >= best_live) break;
        }
    }

    if (!finished.empty()) {
        return *std::max_element(finished.begin(), finished.end(),
                                 [](const BeamResult& a, const BeamResult& b) {
                                     return a.log_prob < b.log_prob;
                                 });
    }
    require(!live.empty(), "beam_search: no hypotheses survive");
    const Hyp& best = *std::max_element(
        live.begin(), live.end(),
        [](const Hyp& a, const Hyp& b) { return a.log_prob < b.log_prob; });
    return BeamResult{best.tokens, best.log_prob, false};
}

}  // namespace mixt
