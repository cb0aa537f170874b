#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixt/backbone.hpp"
#include "mixt/batching.hpp"
#include "mixt/checkpoint.hpp"
#include "mixt/common.hpp"
#include "mixt/dataset.hpp"
#include "mixt/mixt_module.hpp"
#include "mixt/optim.hpp"
#include "mixt/params.hpp"
#include "mixt/rng.hpp"
#include "mixt/window.hpp"

namespace mixt {

// In-context tuning hyperparameters. `mixture` records the intended task
// composition of the dataset; it is provenance for manifests and is enforced
// at generation time, not here. `train_target` selects which parameter group
// trains: "mixt" freezes the backbone and trains the prefix module (the
// normal mode); "backbone" trains a bare backbone zero-shot, used to produce
// the frozen starting point.
struct TrainConfig {
    double lr = 1e-4;
    double warmup_ratio = 0.01;
    double weight_decay = 0.01;
    double grad_clip = 5.0;
    int epochs = 20;
    int batch_size = 8;
    ShotPolicy shot_policy = ShotPolicy::make_fixed(2);
    uint64_t rng_seed = 0;
    std::string mixture;
    std::vector<std::string> exclude_tasks;
    std::string train_target = "mixt";
    int max_steps = 0;        // 0 = run the full epoch plan
    double data_fraction = 1.0;

    void validate() const {
        require(lr > 0.0, "TrainConfig: lr must be positive");
        require(warmup_ratio >= 0.0 && warmup_ratio <= 1.0,
                "TrainConfig: warmup_ratio outside [0, 1]");
        require(weight_decay >= 0.0, "TrainConfig: weight_decay must be non-negative");
        require(grad_clip > 0.0, "TrainConfig: grad_clip must be positive");
        require(epochs >= 1, "TrainConfig: epochs must be at least 1");
        require(batch_size >= 1, "TrainConfig: batch_size must be at least 1");
        require(max_steps >= 0, "TrainConfig: max_steps must be non-negative");
        require(data_fraction > 0.0 && data_fraction <= 1.0,
                "TrainConfig: data_fraction outside (0, 1]");
        if (train_target != "mixt" && train_target != "backbone")
            fail("TrainConfig: train_target must be \"mixt\" or \"backbone\", got \"",
                 train_target, "\"");
        if (train_target == "backbone" &&
            (shot_policy.kind != ShotPolicy::Kind::fixed || shot_policy.n != 0))
            fail("TrainConfig: backbone pretraining is zero-shot; use shot policy fixed:0");
    }
};

// Model parameters plus optimizer state and progress counter. `train_shots`
// records the shot policy the parameters were trained under; harnesses that
// cross trained-shots against evaluated-shots read it back from checkpoints.
struct TrainState {
    BackboneConfig cfg;
    ParameterStore store;
    AdamW opt;
    uint64_t step = 0;
    std::string train_shots = "none";
};

inline TrainState make_train_state(const BackboneConfig& cfg, uint64_t seed) {
    TrainState st;
    st.cfg = cfg;
    st.store = init_backbone_params(cfg, seed);
    return st;
}

// Adds the trainable prefix module on top of (possibly pretrained) backbone
// parameters, freezes the backbone, and resets optimizer state for the new
// training phase.
inline void attach_mixt(TrainState& st, uint64_t seed) {
    init_mixt_from_backbone(st.store, st.cfg, seed);
    apply_icl_freeze(st.store);
    st.opt = AdamW{};
    st.step = 0;
    st.train_shots = "none";
}

namespace detail {

inline std::map<std::string, std::string> parse_kv_lines(const std::string& text) {
    std::map<std::string, std::string> kv;
    size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("bad config line \"", line, "\": expected key=value");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace detail

// Parses the flat text form written by BackboneConfig::snapshot. Extra keys
// (e.g. the recorded shot policy) are permitted; missing ones are not.
inline BackboneConfig parse_backbone_snapshot(const std::string& text) {
    const auto kv = detail::parse_kv_lines(text);
    const auto get = [&kv](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) fail("config snapshot is missing key \"", key, "\"");
        return it->second;
    };
    BackboneConfig cfg;
    cfg.d_model = std::stoi(get("d_model"));
    cfg.n_heads = std::stoi(get("n_heads"));
    cfg.enc_layers = std::stoi(get("enc_layers"));
    cfg.dec_layers = std::stoi(get("dec_layers"));
    cfg.ffn_dim = std::stoi(get("ffn_dim"));
    cfg.patch_size = std::stoi(get("patch_size"));
    cfg.vocab_size = std::stoi(get("vocab_size"));
    cfg.max_positions = std::stoi(get("max_positions"));
    cfg.max_target_positions = std::stoi(get("max_target_positions"));
    cfg.max_image_patches = std::stoi(get("max_image_patches"));
    cfg.dropout = std::stod(get("dropout"));
    cfg.validate();
    return cfg;
}

inline std::string train_state_snapshot(const TrainState& st) {
    return st.cfg.snapshot() + "train_shots=" + st.train_shots + "\n";
}

inline void save_train_state(const TrainState& st, const std::string& path) {
    Checkpoint ck;
    ck.step = st.step;
    ck.adam_t = st.opt.t;
    ck.config_snapshot = train_state_snapshot(st);
    ck.store = st.store;
    ck.opt_m = st.opt.m;
    ck.opt_v = st.opt.v;
    save_checkpoint(path, ck);
}

// Loads a training checkpoint. When expected_cfg is given, a checkpoint
// built under any other architecture is rejected.
inline TrainState load_train_state(const std::string& path,
                                   const BackboneConfig* expected_cfg = nullptr) {
    Checkpoint ck = load_checkpoint(path);
    TrainState st;
    st.cfg = parse_backbone_snapshot(ck.config_snapshot);
    if (expected_cfg && expected_cfg->snapshot() != st.cfg.snapshot())
        fail("checkpoint ", path, " was built under a different config:\n", st.cfg.snapshot(),
             "does not match the requested\n", expected_cfg->snapshot());
    const auto kv = detail::parse_kv_lines(ck.config_snapshot);
    const auto it = kv.find("train_shots");
    st.train_shots = it == kv.end() ? "none" : it->second;
    st.store = std::move(ck.store);
    st.opt.t = ck.adam_t;
    st.opt.m = std::move(ck.opt_m);
    st.opt.v = std::move(ck.opt_v);
    st.step = ck.step;
    return st;
}

struct TrainLogRecord {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
    int shots = 0;
    int tasks_in_batch = 0;
};

struct TrainReport {
    std::vector<double> losses;           // one entry per executed step
    std::vector<TrainLogRecord> records;
    int samples_used = 0;
    int steps_planned = 0;
    int steps_run = 0;
};

namespace detail {

// Indices of the samples a run actually trains on: excluded tasks are
// dropped, then the leading ceil(fraction * n) of what remains is kept.
inline std::vector<int> training_pool(const Dataset& data, const TrainConfig& tc) {
    std::set<std::string> excluded(tc.exclude_tasks.begin(), tc.exclude_tasks.end());
    for (const auto& name : excluded) task_from_name(name);  // validates the name
    std::vector<int> pool;
    for (int i = 0; i < static_cast<int>(data.samples.size()); ++i)
        if (!excluded.count(task_name(data.samples[i].task))) pool.push_back(i);
    if (pool.empty()) fail("no training samples remain after task exclusion");
    const auto keep = static_cast<size_t>(
        std::ceil(tc.data_fraction * static_cast<double>(pool.size())));
    pool.resize(std::max<size_t>(1, std::min(keep, pool.size())));
    return pool;
}

}  // namespace detail

// One optimizer update on a batch of packed windows. Per-sample graphs are
// built and backpropagated separately; their gradients combine into the
// gradient of (sum of per-token NLL over the batch) / (total unmasked label
// count), so the batch behaves as one pooled likelihood. Returns that pooled
// mean loss.
inline double train_step(TrainState& st, const std::vector<PackedContextWindow>& windows,
                         const std::vector<std::string>& sample_ids, int step, double lr_now,
                         const TrainConfig& tc) {
    require(!windows.empty(), "train_step: empty batch");
    GradBuffer batch_grads;
    double nll_total = 0.0;
    int label_total = 0;
    for (size_t slot = 0; slot < windows.size(); ++slot) {
        Graph g;
        ModelGraph m{g, st.store, st.cfg};
        Rng drop_rng = derived_rng(tc.rng_seed, "dropout", static_cast<uint64_t>(step),
                                   static_cast<uint64_t>(slot));
        if (st.cfg.dropout > 0.0) m.dropout_rng = &drop_rng;
        const ForwardResult res = icl_loss(m, windows[slot]);
        nll_total += g.scalar_value(res.loss) * res.label_count;
        label_total += res.label_count;
        g.backward(res.loss);
        GradBuffer sample_grads;
        g.add_param_grads(sample_grads);
        batch_grads.accumulate(sample_grads, static_cast<double>(res.label_count));
    }
    const double loss = nll_total / label_total;
    if (!std::isfinite(loss)) {
        std::string ids;
        for (size_t i = 0; i < sample_ids.size(); ++i) {
            if (i) ids += ", ";
            ids += sample_ids[i];
        }
        fail("non-finite loss at step ", step, " (batch samples: ", ids, ")");
    }
    batch_grads.scale_all(1.0 / label_total);
    clip_global_norm(batch_grads, tc.grad_clip);
    st.opt.step(st.store, batch_grads, lr_now, tc.weight_decay);
    return loss;
}

// Mixed-task training loop. Resumes from st.step: because every random draw
// (epoch shuffle, shot count, context choice, dropout mask) is derived
// functionally from (rng_seed, step), a loaded checkpoint continues exactly
// where the uninterrupted run would be. Writes one JSON record per step to
// `log` when given.
inline TrainReport train(TrainState& st, const Dataset& data, const TrainConfig& tc,
                         std::ostream* log = nullptr) {
    tc.validate();
    if (tc.train_target == "mixt")
        require(st.store.has("mixt.text_emb"),
                "train_target=mixt but the state has no prefix module; call attach_mixt first");
    else
        require(!st.store.has("mixt.text_emb"),
                "train_target=backbone but the state carries a prefix module");
    require(st.cfg.vocab_size == data.vocab.size(),
            "model vocab size does not match the dataset vocabulary");

    const std::vector<int> pool = detail::training_pool(data, tc);
    const int n = static_cast<int>(pool.size());
    BatchPlanner planner(n, tc.batch_size, tc.rng_seed);
    // The schedule spans the whole epoch plan; max_steps only stops execution
    // early, so a truncated run sees the same learning rates as a full one
    // and a resumed run continues the same schedule.
    const int planned = tc.epochs * planner.batches_per_epoch();
    const int horizon = tc.max_steps > 0 ? std::min(planned, tc.max_steps) : planned;

    PackConfig pack;
    pack.patch_size = st.cfg.patch_size;
    pack.context_limit = st.cfg.max_positions;

    TrainReport report;
    report.samples_used = n;
    report.steps_planned = planned;
    st.train_shots = tc.shot_policy.to_string();

    for (int step = static_cast<int>(st.step); step < horizon; ++step) {
        const std::vector<int> slots = planner.batch_at(step);
        const int shots = shots_for_step(tc.shot_policy, tc.rng_seed, step);
        std::vector<PackedContextWindow> windows;
        std::vector<std::string> ids;
        std::set<Task> tasks;
        windows.reserve(slots.size());
        for (size_t slot = 0; slot < slots.size(); ++slot) {
            const int query = pool[static_cast<size_t>(slots[slot])];
            Rng ctx_rng = derived_rng(tc.rng_seed, "ctx", static_cast<uint64_t>(step),
                                      static_cast<uint64_t>(slot));
            const std::vector<int> ctx = sample_context_indices(n, slots[slot], shots, ctx_rng);
            std::vector<MultimodalTriple> context;
            context.reserve(ctx.size());
            for (int c : ctx) context.push_back(data.samples[static_cast<size_t>(pool[static_cast<size_t>(c)])].triple);
            const TaskSample& qs = data.samples[static_cast<size_t>(query)];
            windows.push_back(pack_context_window(context, qs.triple, data.vocab, pack));
            ids.push_back(qs.id);
            tasks.insert(qs.task);
        }
        const double lr_now = lr_at(step, planned, tc.lr, tc.warmup_ratio);
        const double loss = train_step(st, windows, ids, step, lr_now, tc);

        TrainLogRecord rec;
        rec.step = step;
        rec.lr = lr_now;
        rec.loss = loss;
        rec.shots = shots;
        rec.tasks_in_batch = static_cast<int>(tasks.size());
        report.records.push_back(rec);
        report.losses.push_back(loss);
        ++report.steps_run;
        st.step = static_cast<uint64_t>(step) + 1;

        if (log) {
            nlohmann::json j;
            j["step"] = rec.step;
            j["lr"] = rec.lr;
            j["loss"] = rec.loss;
            j["shots"] = rec.shots;
            j["tasks_in_batch"] = rec.tasks_in_batch;
            *log << j.dump() << "\n";
        }
    }
    return report;
}

}  // namespace mixt
