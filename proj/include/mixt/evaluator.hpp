#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mixt/backbone.hpp"
#include "mixt/batching.hpp"
#include "mixt/beam.hpp"
#include "mixt/common.hpp"
#include "mixt/dataset.hpp"
#include "mixt/rng.hpp"
#include "mixt/scene.hpp"
#include "mixt/tasks.hpp"
#include "mixt/vocab.hpp"
#include "mixt/window.hpp"

namespace mixt {

// Intersection over union of two axis-aligned boxes; any degenerate or
// non-positive union scores 0.
inline double iou(const NormBox& a, const NormBox& b) {
    const auto area = [](const NormBox& r) {
        return std::max(0.0, r.x1 - r.x0) * std::max(0.0, r.y1 - r.y0);
    };
    const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const double inter = ix * iy;
    const double uni = area(a) + area(b) - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

// Support examples for one query: m draws without replacement, never the
// query itself, deterministic per (seed, query id).
inline std::vector<int> draw_context(int pool_size, int query_index, int m, uint64_t seed,
                                     const std::string& query_id) {
    Rng rng = derived_rng(seed, "draw_context", fnv1a64(query_id));
    return sample_context_indices(pool_size, query_index, m, rng);
}

struct EvalConfig {
    int shots = 0;
    int beam = 4;
    int max_len = 30;
    uint64_t rng_seed = 0;
    std::string run_id = "eval";

    void validate() const {
        require(shots >= 0, "EvalConfig: shots must be non-negative");
        require(beam >= 1, "EvalConfig: beam must be at least 1");
        require(max_len >= 1, "EvalConfig: max_len must be at least 1");
    }
};

// One metric over one task at one shot count.
struct MetricRecord {
    std::string run_id;
    std::string task;
    int shots = 0;
    std::string metric;
    double value = 0.0;
    int n_samples = 0;
    int malformed_count = 0;
};

namespace detail {

inline std::string canonical_text(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    std::string out = s.substr(b, e - b);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

// Token-level F1 between prediction and gold over word multisets.
inline double token_f1(const std::string& pred, const std::string& gold) {
    const auto pw = split_words(canonical_text(pred));
    const auto gw = split_words(canonical_text(gold));
    if (pw.empty() || gw.empty()) return pw.empty() && gw.empty() ? 1.0 : 0.0;
    std::map<std::string, int> gold_counts;
    for (const auto& w : gw) ++gold_counts[w];
    int common = 0;
    for (const auto& w : pw) {
        auto it = gold_counts.find(w);
        if (it != gold_counts.end() && it->second > 0) {
            ++common;
            --it->second;
        }
    }
    if (common == 0) return 0.0;
    const double p = static_cast<double>(common) / static_cast<double>(pw.size());
    const double r = static_cast<double>(common) / static_cast<double>(gw.size());
    return 2.0 * p * r / (p + r);
}

// First four bin tokens anywhere in the output, dequantized to a box.
// Returns false when fewer than four appear (a malformed prediction).
inline bool decode_box(const std::vector<int>& ids, const Vocabulary& vocab, NormBox* out) {
    std::vector<int> bins;
    for (int id : ids) {
        if (vocab.is_bin(id)) bins.push_back(id);
        if (bins.size() == 4) break;
    }
    if (bins.size() < 4) return false;
    *out = deserialize_target_box(vocab, bins);
    return true;
}

struct DetectedObject {
    NormBox box;
    Shape shape = Shape::circle;
    Color color = Color::red;
};

// Parses "bin bin bin bin shape color" groups from the start of the output;
// parsing stops at the first token that breaks the pattern.
inline std::vector<DetectedObject> parse_detection(const std::vector<int>& ids,
                                                   const Vocabulary& vocab) {
    std::vector<DetectedObject> out;
    size_t i = 0;
    while (i + 6 <= ids.size()) {
        std::vector<int> bins(ids.begin() + static_cast<long>(i),
                              ids.begin() + static_cast<long>(i) + 4);
        if (!std::all_of(bins.begin(), bins.end(), [&](int id) { return vocab.is_bin(id); }))
            break;
        DetectedObject obj;
        obj.box = deserialize_target_box(vocab, bins);
        try {
            obj.shape = shape_from_name(vocab.surface(ids[i + 4]));
            obj.color = color_from_name(vocab.surface(ids[i + 5]));
        } catch (const Error&) {
            break;
        }
        out.push_back(obj);
        i += 6;
    }
    return out;
}

}  // namespace detail

// Per-sample scores for one prediction; keys are metric names. `malformed`
// marks predictions whose structure could not be decoded at all.
struct SampleScore {
    std::map<std::string, double> values;
    bool malformed = false;
};

// Scores one decoded prediction against a sample's gold data. A hit requires
// IoU >= 0.5 where boxes are involved; the tie at exactly 0.5 counts.
inline SampleScore score_prediction(const TaskSample& sample, const std::vector<int>& predicted,
                                    const Vocabulary& vocab) {
    SampleScore s;
    const std::string pred_text = vocab.decode(predicted);
    switch (sample.task) {
        case Task::caption: {
            const bool exact =
                detail::canonical_text(pred_text) == detail::canonical_text(sample.target_text);
            s.values["exact"] = exact ? 1.0 : 0.0;
            s.values["token_f1"] = detail::token_f1(pred_text, sample.target_text);
            break;
        }
        case Task::vqa:
        case Task::mim: {
            const bool exact =
                detail::canonical_text(pred_text) == detail::canonical_text(sample.target_text);
            s.values["exact"] = exact ? 1.0 : 0.0;
            break;
        }
        case Task::grounding: {
            require(sample.has_gold_box, "grounding sample without a gold box");
            NormBox pred_box;
            if (!detail::decode_box(predicted, vocab, &pred_box)) {
                s.malformed = true;
                s.values["acc@0.5"] = 0.0;
                break;
            }
            const NormBox gold =
                normalized_box(sample.gold_box, sample.scene.height, sample.scene.width);
            s.values["acc@0.5"] = iou(pred_box, gold) >= 0.5 ? 1.0 : 0.0;
            break;
        }
        case Task::detection: {
            const auto pred_objs = detail::parse_detection(predicted, vocab);
            const auto& gold_objs = sample.scene.objects;
            require(!gold_objs.empty(), "detection sample without objects");
            std::vector<bool> matched(gold_objs.size(), false);
            int hits = 0;
            // Greedy: each predicted object, in output order, claims the
            // first unmatched gold object of the same shape and color that
            // it overlaps at IoU >= 0.5.
            for (const auto& p : pred_objs) {
                for (size_t gi = 0; gi < gold_objs.size(); ++gi) {
                    if (matched[gi]) continue;
                    const auto& g = gold_objs[gi];
                    if (g.shape != p.shape || g.color != p.color) continue;
                    const NormBox gold =
                        normalized_box(g.bbox, sample.scene.height, sample.scene.width);
                    if (iou(p.box, gold) >= 0.5) {
                        matched[gi] = true;
                        ++hits;
                        break;
                    }
                }
            }
            if (pred_objs.empty()) s.malformed = true;
            s.values["acc@0.5"] = static_cast<double>(hits) / static_cast<double>(gold_objs.size());
            break;
        }
    }
    return s;
}

// Decodes one query with its drawn context and returns the prediction.
inline BeamResult decode_query(const ParameterStore& store, const BackboneConfig& cfg,
                               const std::vector<MultimodalTriple>& context,
                               const TaskSample& query, const Vocabulary& vocab,
                               const EvalConfig& ec) {
    PackConfig pack;
    pack.patch_size = cfg.patch_size;
    pack.context_limit = cfg.max_positions;
    const PackedContextWindow window =
        pack_context_window(context, query.triple, vocab, pack);
    ModelScorer scorer(store, cfg, window);
    return beam_search(scorer, ec.beam, std::min(ec.max_len, cfg.max_target_positions - 1));
}

// Evaluates every task present in the eval set. Context examples come from
// `support` when given, otherwise from the eval set itself (with the query
// excluded from its own context). Returns one record per (task, metric).
inline std::vector<MetricRecord> evaluate(const ParameterStore& store, const BackboneConfig& cfg,
                                          const Dataset& eval_set, const Dataset* support,
                                          const EvalConfig& ec) {
    ec.validate();
    require(!eval_set.samples.empty(), "evaluate: empty eval set");
    require(cfg.vocab_size == eval_set.vocab.size(),
            "evaluate: model vocab size does not match the dataset vocabulary");
    if (support && ec.shots > static_cast<int>(support->samples.size()))
        fail("support pool of ", support->samples.size(), " samples cannot supply ", ec.shots,
             " shots");

    const std::vector<TaskSample>& pool_samples = support ? support->samples : eval_set.samples;
    const int pool_size = static_cast<int>(pool_samples.size());

    struct Accum {
        std::map<std::string, double> sums;
        int n = 0;
        int malformed = 0;
    };
    std::map<Task, Accum> by_task;

    for (int qi = 0; qi < static_cast<int>(eval_set.samples.size()); ++qi) {
        const TaskSample& query = eval_set.samples[static_cast<size_t>(qi)];
        const int exclude = support ? -1 : qi;
        const std::vector<int> ctx =
            draw_context(pool_size, exclude, ec.shots, ec.rng_seed, query.id);
        std::vector<MultimodalTriple> context;
        context.reserve(ctx.size());
        for (int c : ctx) context.push_back(pool_samples[static_cast<size_t>(c)].triple);

        const BeamResult decoded = decode_query(store, cfg, context, query, eval_set.vocab, ec);
        const SampleScore score = score_prediction(query, decoded.tokens, eval_set.vocab);

        Accum& acc = by_task[query.task];
        for (const auto& [name, value] : score.values) acc.sums[name] += value;
        acc.n += 1;
        acc.malformed += score.malformed ? 1 : 0;
    }

    std::vector<MetricRecord> records;
    for (const auto& [task, acc] : by_task) {
        for (const auto& [name, sum] : acc.sums) {
            MetricRecord rec;
            rec.run_id = ec.run_id;
            rec.task = task_name(task);
            rec.shots = ec.shots;
            rec.metric = name;
            rec.value = sum / acc.n;
            rec.n_samples = acc.n;
            rec.malformed_count = acc.malformed;
            records.push_back(std::move(rec));
        }
    }
    return records;
}

}  // namespace mixt
