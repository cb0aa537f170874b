// Acceptance suite. Each criterion is a standalone check that prints exactly
// one PASS/FAIL line on stdout; progress chatter goes to stderr. Run with no
// arguments to execute every criterion, or pass criterion numbers to run a
// subset. The process exits nonzero when any executed criterion fails.
#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixt/commands.hpp"
#include "mixt/oracle.hpp"

namespace mixt {
namespace {

// Tolerances and limits, pinned here.
constexpr double kGradRelTol = 1e-3;        // criterion 3: FD vs analytic
constexpr double kGradFdStep = 1e-5;        // criterion 3: central-difference step
constexpr double kGradDeadZone = 1e-8;      // criterion 3: skip scalars with no gradient flow
constexpr double kCausalityTol = 1e-6;      // criterion 5: max drift at positions <= j
constexpr double kQuantSlack = 1e-12;       // criterion 4: slack over the exact 1/(2(B-1)) bound
constexpr double kShotShareTol = 0.02;      // criterion 9: |empirical - 1/3|, absolute
constexpr double kFewShotGain = 0.10;       // criterion 7: required Acc@0.5 gain
constexpr double kResumeTol = 1e-12;        // criterion 12: loss-trace drift
constexpr double kFreezeLimitSec = 120.0;   // criterion 1 runtime bound
constexpr double kGradLimitSec = 60.0;      // criterion 3 runtime bound
constexpr double kGainLimitSec = 2700.0;    // criterion 7 runtime bound

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path work_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "mixt_acceptance" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

BackboneConfig tiny_arch(int vocab_size) {
    BackboneConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.ffn_dim = 32;
    cfg.max_positions = 512;
    cfg.max_target_positions = 32;
    cfg.max_image_patches = 64;
    cfg.vocab_size = vocab_size;
    return cfg;
}

Dataset tiny_mixture(int count, uint64_t seed, int bins = 50) {
    Dataset d;
    d.vocab = default_vocabulary(bins);
    d.samples = generate_mixture(uniform_mixture(), count, seed, d.vocab);
    return d;
}

TrainState fresh_icl_state(const BackboneConfig& cfg, uint64_t seed) {
    TrainState st = make_train_state(cfg, derive_seed(seed, "backbone_init"));
    attach_mixt(st, derive_seed(seed, "mixt_init"));
    return st;
}

// --------------------------------------------------------------------------
// 1. Freeze contract: 200 steps on a 64-sample mixture leave every backbone
//    tensor bit-identical while each module group has >= 1 changed tensor.
Outcome criterion_freeze_contract() {
    Stopwatch watch;
    const Dataset data = tiny_mixture(64, 41);
    const BackboneConfig cfg = tiny_arch(data.vocab.size());
    TrainState st = fresh_icl_state(cfg, 42);

    std::vector<uint64_t> before(static_cast<size_t>(st.store.count()));
    for (int i = 0; i < st.store.count(); ++i)
        before[static_cast<size_t>(i)] = st.store.value(i).checksum();

    TrainConfig tc;
    tc.epochs = 25;  // 64 samples / batch 8 -> 8 steps per epoch -> 200 steps
    tc.batch_size = 8;
    tc.lr = 1e-3;
    tc.rng_seed = 42;
    const TrainReport report = train(st, data, tc);

    int backbone_changed = 0;
    std::map<std::string, int> group_changed{
        {"mixt.vis.", 0}, {"mixt.text_emb", 0}, {"mixt.target_emb", 0}};
    for (int i = 0; i < st.store.count(); ++i) {
        const bool changed = st.store.value(i).checksum() != before[static_cast<size_t>(i)];
        if (!changed) continue;
        const std::string& name = st.store.name(i);
        if (name.rfind("backbone.", 0) == 0) ++backbone_changed;
        for (auto& [prefix, n] : group_changed)
            if (name.rfind(prefix, 0) == 0) ++n;
    }

    const double sec = watch.seconds();
    std::ostringstream d;
    d << "steps=" << report.steps_run << ", backbone tensors changed=" << backbone_changed
      << ", module groups updated=" << (group_changed["mixt.vis."] > 0) +
                                           (group_changed["mixt.text_emb"] > 0) +
                                           (group_changed["mixt.target_emb"] > 0)
      << "/3, " << std::fixed << std::setprecision(1) << sec << "s (limit " << kFreezeLimitSec
      << "s)";
    Outcome o;
    o.pass = report.steps_run == 200 && backbone_changed == 0 &&
             group_changed["mixt.vis."] >= 1 && group_changed["mixt.text_emb"] >= 1 &&
             group_changed["mixt.target_emb"] >= 1 && sec < kFreezeLimitSec;
    o.detail = d.str();
    return o;
}

// --------------------------------------------------------------------------
// 2. Zero-shot reduction: with an empty context the wrapped model's loss and
//    logits are bit-identical to the bare backbone on 50 random queries.
Outcome criterion_zero_shot_reduction() {
    const Dataset data = tiny_mixture(50, 43);
    const BackboneConfig cfg = tiny_arch(data.vocab.size());
    const TrainState st = fresh_icl_state(cfg, 43);
    PackConfig pc;
    pc.patch_size = cfg.patch_size;

    int mismatches = 0;
    for (const TaskSample& s : data.samples) {
        const PackedContextWindow w = pack_context_window({}, s.triple, data.vocab, pc);
        Graph g1;
        ModelGraph m1{g1, st.store, cfg};
        const ForwardResult icl = icl_loss(m1, w);
        Graph g2;
        ModelGraph m2{g2, st.store, cfg};
        const ForwardResult bare =
            backbone_query_loss(m2, s.triple.image, s.triple.instruction, s.triple.target);
        const double a = g1.scalar_value(icl.loss);
        const double b = g2.scalar_value(bare.loss);
        if (std::memcmp(&a, &b, sizeof a) != 0 ||
            g1.value(icl.logits).checksum() != g2.value(bare.logits).checksum())
            ++mismatches;
    }
    Outcome o;
    o.pass = mismatches == 0;
    o.detail = "bit-exact on " + std::to_string(50 - mismatches) + "/50 queries";
    return o;
}

// --------------------------------------------------------------------------
// 3. Gradient correctness: central finite differences against analytic
//    gradients on 20 random scalars of a d_model=32 model.
Outcome criterion_gradient_check() {
    Stopwatch watch;
    const Dataset data = tiny_mixture(4, 44);
    BackboneConfig cfg;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.ffn_dim = 64;
    cfg.max_positions = 512;
    cfg.max_target_positions = 32;
    cfg.max_image_patches = 64;
    cfg.vocab_size = data.vocab.size();
    TrainState st = fresh_icl_state(cfg, 44);
    // The freeze mask is part of training, not of calculus: re-enable the
    // backbone so gradients flow to every parameter under test.
    st.store.set_trainable_prefix("backbone.", true);

    PackConfig pc;
    pc.patch_size = cfg.patch_size;
    const PackedContextWindow w =
        pack_context_window({data.samples[0].triple}, data.samples[1].triple, data.vocab, pc);

    auto loss_value = [&]() {
        Graph g;
        ModelGraph m{g, st.store, cfg};
        return g.scalar_value(icl_loss(m, w).loss);
    };
    GradBuffer analytic;
    {
        Graph g;
        ModelGraph m{g, st.store, cfg};
        const ForwardResult r = icl_loss(m, w);
        g.backward(r.loss);
        g.add_param_grads(analytic);
    }

    Rng rng = derived_rng(44, "fd_picks");
    double worst = 0.0;
    std::string worst_name;
    int checked = 0;
    int attempts = 0;
    while (checked < 20 && attempts < 4000) {
        ++attempts;
        const int p = static_cast<int>(rng.next_below(static_cast<uint64_t>(st.store.count())));
        if (p >= static_cast<int>(analytic.grads.size()) || analytic.grads[p].data.empty())
            continue;
        Tensor& t = st.store.value(p);
        const size_t k = static_cast<size_t>(rng.next_below(t.data.size()));
        const double an = analytic.grads[p].data[k];
        if (std::abs(an) <= kGradDeadZone) continue;  // scalar unused by this window
        const double orig = t.data[k];
        t.data[k] = orig + kGradFdStep;
        const double up = loss_value();
        t.data[k] = orig - kGradFdStep;
        const double down = loss_value();
        t.data[k] = orig;
        const double fd = (up - down) / (2.0 * kGradFdStep);
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
        if (rel > worst) {
            worst = rel;
            worst_name = st.store.name(p);
        }
        ++checked;
        std::cerr << "[criterion 3] " << checked << "/20 " << st.store.name(p) << "[" << k
                  << "] rel err " << rel << "\n";
    }

    const double sec = watch.seconds();
    std::ostringstream d;
    d << checked << " scalars, worst rel err " << std::scientific << std::setprecision(2) << worst
      << " (" << worst_name << ", tol " << kGradRelTol << "), " << std::fixed
      << std::setprecision(1) << sec << "s (limit " << kGradLimitSec << "s)";
    Outcome o;
    o.pass = checked == 20 && worst < kGradRelTol && sec < kGradLimitSec;
    o.detail = d.str();
    return o;
}

// --------------------------------------------------------------------------
// 4. Quantization: roundtrip error bounded by 1/(2(B-1)) and the coordinate
//    token surface form parses back to its bin index.
Outcome criterion_quantization() {
    Rng rng = derived_rng(45, "quant");
    int violations = 0;
    double worst_ratio = 0.0;  // observed error over the exact bound
    for (const int bins : {5, 100, 1000}) {
        const double bound = 0.5 / (bins - 1);
        for (int i = 0; i < 1000; ++i) {
            const double x = rng.next_double();
            const int b = quantize_coord(x, bins);
            const double err = std::abs(dequantize_coord(b, bins) - x);
            worst_ratio = std::max(worst_ratio, err / bound);
            if (err > bound + kQuantSlack) ++violations;
        }
    }
    const Vocabulary vocab = default_vocabulary(1000);
    const int id = vocab.id_of("<bin>456");
    const bool parses = vocab.bin_index(id) == 456;

    std::ostringstream d;
    d << "3000 roundtrips, worst error at " << std::fixed << std::setprecision(4)
      << 100.0 * worst_ratio << "% of the 1/(2(B-1)) bound; \"<bin>456\" -> "
      << vocab.bin_index(id);
    Outcome o;
    o.pass = violations == 0 && parses;
    o.detail = d.str();
    return o;
}

// --------------------------------------------------------------------------
// 5. Causality: perturbing the query target at position j never moves logits
//    at positions <= j.
Outcome criterion_causality() {
    const Dataset data = tiny_mixture(120, 46);
    const BackboneConfig cfg = tiny_arch(data.vocab.size());
    const TrainState st = fresh_icl_state(cfg, 46);
    PackConfig pc;
    pc.patch_size = cfg.patch_size;

    Rng rng = derived_rng(46, "perturb");
    int windows = 0;
    int downstream_moved = 0;
    double worst = 0.0;
    for (size_t qi = 0; windows < 100 && qi < data.samples.size(); ++qi) {
        const TaskSample& q = data.samples[qi];
        if (q.triple.target.empty()) continue;
        std::vector<MultimodalTriple> ctx;
        for (int s = 0; s < windows % 3; ++s)
            ctx.push_back(data.samples[(qi + 17 * static_cast<size_t>(s + 1)) %
                                       data.samples.size()]
                              .triple);
        PackedContextWindow w = pack_context_window(ctx, q.triple, data.vocab, pc);

        Graph g1;
        ModelGraph m1{g1, st.store, cfg};
        const Tensor base = g1.value(icl_loss(m1, w).logits);

        const int len = static_cast<int>(w.query_target.size());
        const int j = static_cast<int>(rng.next_below(static_cast<uint64_t>(len)));
        int replacement =
            static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.vocab_size)));
        if (replacement == w.query_target[static_cast<size_t>(j)])
            replacement = (replacement + 1) % cfg.vocab_size;
        w.query_target[static_cast<size_t>(j)] = replacement;

        Graph g2;
        ModelGraph m2{g2, st.store, cfg};
        const Tensor pert = g2.value(icl_loss(m2, w).logits);

        for (int r = 0; r <= j; ++r)
            for (int c = 0; c < base.cols; ++c)
                worst = std::max(worst, std::abs(base.data[static_cast<size_t>(r * base.cols + c)] -
                                                 pert.data[static_cast<size_t>(r * base.cols + c)]));
        for (int r = j + 1; r < base.rows && r <= j + 1; ++r)
            for (int c = 0; c < base.cols; ++c)
                if (base.data[static_cast<size_t>(r * base.cols + c)] !=
                    pert.data[static_cast<size_t>(r * base.cols + c)]) {
                    ++downstream_moved;
                    r = base.rows;
                    break;
                }
        ++windows;
    }

    std::ostringstream d;
    d << windows << " windows, max drift at positions <= j: " << std::scientific
      << std::setprecision(2) << worst << " (tol " << kCausalityTol
      << "); downstream logits moved in " << downstream_moved << "/" << windows << " windows";
    Outcome o;
    o.pass = windows == 100 && worst <= kCausalityTol;
    o.detail = d.str();
    return o;
}

// --------------------------------------------------------------------------
// 6. Beam search: beam=1 equals greedy on 100 model windows, and beam=8
//    matches exhaustive enumeration on a hand-set three-token instance.
class TableScorer : public StepScorer {
  public:
    using Table = std::map<std::vector<int>, std::array<double, 3>>;
    explicit TableScorer(Table table) : table_(std::move(table)) {}
    int vocab_size() const override { return 3; }
    std::vector<double> next_log_probs(const std::vector<int>& prefix) override {
        const auto it = table_.find(prefix);
        if (it == table_.end()) fail("TableScorer: unexpected prefix of length ", prefix.size());
        return {it->second[0], it->second[1], it->second[2]};
    }

  private:
    Table table_;
};

struct EnumCandidate {
    std::vector<int> tokens;
    double log_prob = 0.0;
    bool finished = false;
};

void enumerate_sequences(TableScorer& scorer, std::vector<int>& prefix, double log_prob,
                         int max_len, std::vector<EnumCandidate>& out) {
    const std::vector<double> lp = scorer.next_log_probs(prefix);
    for (int tok = 0; tok < 3; ++tok) {
        const double total = log_prob + lp[static_cast<size_t>(tok)];
        if (tok == Vocabulary::kEos) {
            out.push_back({prefix, total, true});
            continue;
        }
        prefix.push_back(tok);
        if (static_cast<int>(prefix.size()) == max_len)
            out.push_back({prefix, total, false});
        else
            enumerate_sequences(scorer, prefix, total, max_len, out);
        prefix.pop_back();
    }
}

Outcome criterion_beam_search() {
    // Part 1: beam=1 vs greedy on real model windows.
    const Dataset data = tiny_mixture(100, 47);
    const BackboneConfig cfg = tiny_arch(data.vocab.size());
    const TrainState st = fresh_icl_state(cfg, 47);
    PackConfig pc;
    pc.patch_size = cfg.patch_size;

    int agree = 0;
    for (size_t i = 0; i < data.samples.size(); ++i) {
        std::vector<MultimodalTriple> ctx;
        for (size_t s = 0; s < i % 3; ++s)
            ctx.push_back(data.samples[(i + 31 * (s + 1)) % data.samples.size()].triple);
        const PackedContextWindow w =
            pack_context_window(ctx, data.samples[i].triple, data.vocab, pc);
        ModelScorer s1(st.store, cfg, w);
        const BeamResult beam1 = beam_search(s1, 1, 8);
        ModelScorer s2(st.store, cfg, w);
        const BeamResult greedy = greedy_decode(s2, 8);
        if (beam1.tokens == greedy.tokens && beam1.finished == greedy.finished &&
            std::memcmp(&beam1.log_prob, &greedy.log_prob, sizeof(double)) == 0)
            ++agree;
        if ((i + 1) % 25 == 0) std::cerr << "[criterion 6] " << i + 1 << "/100 windows\n";
    }

    // Part 2: a table where greedy is suboptimal, so beam reordering shows.
    // Tokens are {0, EOS=1, 2}; probabilities per prefix sum to 1.
    auto lp3 = [](double a, double b, double c) {
        return std::array<double, 3>{std::log(a), std::log(b), std::log(c)};
    };
    TableScorer::Table table;
    table[{}] = lp3(0.50, 0.10, 0.40);
    table[{0}] = lp3(0.30, 0.30, 0.40);
    table[{2}] = lp3(0.05, 0.90, 0.05);
    table[{0, 0}] = lp3(0.20, 0.60, 0.20);
    table[{0, 2}] = lp3(0.10, 0.80, 0.10);
    table[{2, 0}] = lp3(0.30, 0.40, 0.30);
    table[{2, 2}] = lp3(0.25, 0.50, 0.25);

    TableScorer ts(table);
    const BeamResult wide = beam_search(ts, 8, 3);
    std::vector<EnumCandidate> all;
    std::vector<int> prefix;
    enumerate_sequences(ts, prefix, 0.0, 3, all);
    const EnumCandidate* best = nullptr;
    for (const EnumCandidate& c : all) {
        if (!best) best = &c;
        else if (c.finished != best->finished)
            best = c.finished ? &c : best;
        else if (c.log_prob > best->log_prob)
            best = &c;
    }
    TableScorer ts2(table);
    const BeamResult table_greedy = greedy_decode(ts2, 3);

    const bool exhaustive_match = best && wide.tokens == best->tokens &&
                                  wide.finished == best->finished &&
                                  std::abs(wide.log_prob - best->log_prob) < 1e-12;
    const bool nontrivial = table_greedy.tokens != wide.tokens;

    std::ostringstream d;
    d << "beam=1 == greedy on " << agree << "/100 windows; beam=8 "
      << (exhaustive_match ? "matches" : "misses") << " the exhaustive argmax over " << all.size()
      << " sequences" << (nontrivial ? " (greedy picks a different, worse sequence)" : "");
    Outcome o;
    o.pass = agree == 100 && exhaustive_match && nontrivial;
    o.detail = d.str();
    return o;
}

// --------------------------------------------------------------------------
// 7. Few-shot gain: pretrain a backbone zero-shot on a 5000-sample mixture,
//    wrap it with a frozen-backbone module trained at fixed 2 shots on the
//    same mixture, and compare grounding Acc@0.5 on 500 held-out queries.
Outcome criterion_few_shot_gain() {
    Stopwatch watch;
    const fs::path root = work_dir("few_shot_gain");

    // Toy-scale knobs for the scaled-down experiment. 5000 samples at batch
    // 64 give 78 batches per epoch; 25 epochs plan 1950 steps, within the
    // 2000-step budget for each phase. Both phases get the same budget and
    // recipe so the comparison is symmetric.
    const char* kMix = "grounding:0.7,detection:0.1,caption:0.1,vqa:0.05,mim:0.05";
    const int kCanvas = 32;
    const int kBins = 25;
    const int kEpochs = 25;
    const int kBatch = 64;
    const double kLr = 1e-3;

    std::cerr << "[criterion 7] generating 5000 training and 500 held-out samples\n";
    GenDataOptions gen;
    gen.out_dir = (root / "train").string();
    gen.size = 5000;
    gen.mix = kMix;
    gen.seed = 101;
    gen.canvas = kCanvas;
    gen.bins = kBins;
    cmd_gen_data(gen, std::cerr);
    GenDataOptions held = gen;
    held.out_dir = (root / "heldout").string();
    held.size = 500;
    held.mix = "grounding:1.0";
    held.seed = 202;
    cmd_gen_data(held, std::cerr);

    {
        std::ofstream arch(root / "arch.txt");
        arch << "d_model=64\nn_heads=4\nenc_layers=3\ndec_layers=2\nffn_dim=256\n"
             << "max_positions=1024\nmax_target_positions=32\nmax_image_patches=64\n";
    }

    std::cerr << "[criterion 7] phase 1: zero-shot backbone pretraining\n";
    TrainOptions a;
    a.data_dir = gen.out_dir;
    a.out_dir = (root / "backbone").string();
    a.arch_path = (root / "arch.txt").string();
    a.shots = "fixed:0";
    a.train_target = "backbone";
    a.epochs = kEpochs;
    a.batch_size = kBatch;
    a.lr = kLr;
    a.seed = 7;
    const TrainOutcome phase_a = cmd_train(a, std::cerr);

    std::cerr << "[criterion 7] phase 2: in-context module over the frozen backbone\n";
    TrainOptions b;
    b.data_dir = gen.out_dir;
    b.out_dir = (root / "module").string();
    b.init_backbone = phase_a.checkpoint_path;
    b.shots = "fixed:2";
    b.epochs = kEpochs;
    b.batch_size = kBatch;
    b.lr = kLr;
    b.seed = 8;
    const TrainOutcome phase_b = cmd_train(b, std::cerr);

    auto grounding_acc = [&](const std::string& ckpt, int shots, const char* tag) {
        std::cerr << "[criterion 7] evaluating " << tag << " (" << shots << "-shot)\n";
        EvalOptions e;
        e.ckpt = ckpt;
        e.data_dir = held.out_dir;
        e.out_dir = (root / tag).string();
        e.shots = shots;
        e.beam = 1;
        e.seed = 9;
        const EvalOutcome out = cmd_eval(e, std::cerr);
        for (const MetricRecord& r : out.records)
            if (r.task == "grounding" && r.metric == "acc@0.5") return r.value;
        fail("few-shot gain: evaluation produced no grounding acc@0.5 record");
    };
    const double zero_shot = grounding_acc(phase_a.checkpoint_path, 0, "eval_zero_shot");
    const double two_shot = grounding_acc(phase_b.checkpoint_path, 2, "eval_two_shot");

    // End-to-end smoke of the inference command on one held-out query; its
    // box quality is reported, not gated.
    std::string infer_note = "infer smoke: skipped";
    try {
        const Dataset held_data = read_dataset(held.out_dir);
        const TaskSample& q = held_data.samples[0];
        InferOptions io;
        io.ckpt = phase_b.checkpoint_path;
        io.image_path = (fs::path(held.out_dir) / "images" / (q.id + ".ppm")).string();
        io.instruction = q.instruction_text;
        io.support_dir = held.out_dir;
        io.out_dir = (root / "infer").string();
        io.shots = 2;
        io.beam = 1;
        io.seed = 9;
        const InferOutcome inf = cmd_infer(io, std::cerr);
        NormBox pred{};
        if (detail::decode_box(inf.tokens, held_data.vocab, &pred)) {
            const NormBox gold =
                normalized_box(q.gold_box, q.triple.image.height, q.triple.image.width);
            std::ostringstream n;
            n << "infer smoke IoU " << std::fixed << std::setprecision(2) << iou(pred, gold);
            infer_note = n.str();
        } else {
            infer_note = "infer smoke: decoded \"" + inf.text + "\"";
        }
    } catch (const std::exception& e) {
        infer_note = std::string("infer smoke failed: ") + e.what();
    }

    const double sec = watch.seconds();
    std::ostringstream d;
    d << std::fixed << std::setprecision(3) << "zero-shot acc@0.5 " << zero_shot
      << ", 2-shot acc@0.5 " << two_shot << ", gain " << two_shot - zero_shot << " (need >= "
      << kFewShotGain << "); steps " << phase_a.report.steps_run << "+" << phase_b.report.steps_run
      << " (<=2000 each); " << std::setprecision(0) << sec << "s (limit " << kGainLimitSec
      << "s); " << infer_note;
    Outcome o;
    o.pass = two_shot - zero_shot >= kFewShotGain && phase_a.report.steps_run <= 2000 &&
             phase_b.report.steps_run <= 2000 && sec <= kGainLimitSec;
    o.detail = d.str();
    return o;
}

// --------------------------------------------------------------------------
// 8. Shots-matrix harness: three toy checkpoints trained at 1/2/3 shots give
//    a complete 3x3 grid with a full record schema; the diagonal pattern is
//    reported, never thresholded.
Outcome criterion_shots_matrix() {
    const fs::path root = work_dir("shots_matrix");
    GenDataOptions gen;
    gen.out_dir = (root / "data").string();
    gen.size = 64;
    gen.seed = 51;
    gen.bins = 50;
    cmd_gen_data(gen, std::cerr);
    {
        std::ofstream arch(root / "arch.txt");
        arch << "d_model=16\nn_heads=2\nenc_layers=1\ndec_layers=1\nffn_dim=32\n"
             << "max_positions=512\nmax_target_positions=32\nmax_image_patches=64\n";
    }

    std::vector<std::string> ckpts;
    for (int m : {1, 2, 3}) {
        std::cerr << "[criterion 8] training toy checkpoint at " << m << " shots\n";
        TrainOptions t;
        t.data_dir = gen.out_dir;
        t.out_dir = (root / ("trained" + std::to_string(m))).string();
        t.arch_path = (root / "arch.txt").string();
        t.shots = "fixed:" + std::to_string(m);
        t.epochs = 1;
        t.batch_size = 8;
        t.lr = 1e-3;
        t.seed = 60 + static_cast<uint64_t>(m);
        ckpts.push_back(cmd_train(t, std::cerr).checkpoint_path);
    }

    ShotsMatrixOptions o;
    o.ckpts = ckpts;
    o.data_dir = gen.out_dir;
    o.out_dir = (root / "matrix").string();
    o.eval_shots = {1, 2, 3};
    o.beam = 1;
    o.max_len = 8;
    o.seed = 70;
    const ShotsMatrixOutcome outcome = cmd_shots_matrix(o, std::cerr);

    // Grid completeness: every (trained, eval) pair from {1,2,3}^2 exactly once.
    std::set<std::pair<int, int>> pairs;
    for (const ShotsMatrixCell& c : outcome.report.cells)
        pairs.insert({c.trained_shots, c.eval_shots});
    bool complete = outcome.report.cells.size() == 9 && pairs.size() == 9;
    for (int tr : {1, 2, 3})
        for (int ev : {1, 2, 3})
            if (!pairs.count({tr, ev})) complete = false;

    // Record schema, asserted against the persisted grid records.
    const std::vector<std::string> required_keys{
        "run_id", "task", "shots", "metric", "value",
        "n_samples", "malformed_count", "trained_shots", "eval_shots"};
    int schema_ok = 0;
    int record_count = 0;
    std::ifstream grid(fs::path(o.out_dir) / "metrics" / "matrix.jsonl");
    std::string line;
    while (std::getline(grid, line)) {
        if (line.empty()) continue;
        ++record_count;
        const nlohmann::json j = nlohmann::json::parse(line);
        bool ok = true;
        for (const std::string& key : required_keys)
            if (!j.contains(key)) ok = false;
        ok = ok && j["value"].is_number() && j["n_samples"].is_number_integer() &&
             j["trained_shots"].is_number_integer() && j["eval_shots"].is_number_integer() &&
             j["task"].is_string() && j["metric"].is_string() && j["run_id"].is_string() &&
             j["shots"] == j["eval_shots"];
        if (ok) ++schema_ok;
    }

    std::ostringstream d;
    d << "grid " << pairs.size() << "/9 cells, schema ok on " << schema_ok << "/" << record_count
      << " records; diagonal mean " << std::fixed << std::setprecision(4)
      << outcome.report.diagonal_mean() << " vs off-diagonal "
      << outcome.report.off_diagonal_mean() << " (" << outcome.report.task << " "
      << outcome.report.metric << "; reported, not gated)";
    Outcome out;
    out.pass = complete && record_count == 9 && schema_ok == 9;
    out.detail = d.str();
    return out;
}

// --------------------------------------------------------------------------
// 9. Stable-shots harness: a uniform {1,2,3} run completes, and the per-step
//    shot sampler it logs from is uniform to within +/-2% over 30000 draws.
Outcome criterion_stable_shots() {
    const Dataset data = tiny_mixture(64, 52);
    const BackboneConfig cfg = tiny_arch(data.vocab.size());
    TrainState st = fresh_icl_state(cfg, 52);

    TrainConfig tc;
    tc.epochs = 2;  // 16 steps: enough to show a uniform-shots run completing
    tc.batch_size = 8;
    tc.lr = 1e-3;
    tc.rng_seed = 52;
    tc.shot_policy = parse_shot_policy("uniform:1,2,3");
    const TrainReport report = train(st, data, tc);

    bool logged_in_range = report.steps_run == 16;
    std::set<int> seen;
    for (const TrainLogRecord& r : report.records) {
        seen.insert(r.shots);
        if (r.shots < 1 || r.shots > 3) logged_in_range = false;
    }

    // The empirical distribution of the exact sampler the loop draws from,
    // at the scale the criterion asks for.
    const int kDraws = 30000;
    std::map<int, int> counts;
    for (int step = 0; step < kDraws; ++step)
        ++counts[shots_for_step(tc.shot_policy, tc.rng_seed, step)];
    double worst = 0.0;
    bool support_ok = true;
    for (const auto& [shots, n] : counts)
        if (shots < 1 || shots > 3) support_ok = false;
    std::ostringstream shares;
    for (int s : {1, 2, 3}) {
        const double share = static_cast<double>(counts[s]) / kDraws;
        worst = std::max(worst, std::abs(share - 1.0 / 3.0));
        shares << (s > 1 ? "/" : "") << std::fixed << std::setprecision(4) << share;
    }

    std::ostringstream d;
    d << "run completed (" << report.steps_run << " steps, " << seen.size()
      << " distinct shot counts logged); sampler shares " << shares.str() << " over " << kDraws
      << " draws, worst |share-1/3| = " << std::fixed << std::setprecision(4) << worst << " (tol "
      << kShotShareTol << ")";
    Outcome o;
    o.pass = logged_in_range && support_ok && worst <= kShotShareTol;
    o.detail = d.str();
    return o;
}

// --------------------------------------------------------------------------
// 10. Mixed-batch heterogeneity: with three equal tasks and batch size 8, at
//     least 90 of the first 100 batches span two or more tasks.
Outcome criterion_mixed_batches() {
    Dataset d;
    d.vocab = default_vocabulary(50);
    const std::vector<std::pair<Task, double>> mix{
        {Task::caption, 1.0 / 3.0}, {Task::vqa, 1.0 / 3.0}, {Task::grounding, 1.0 / 3.0}};
    d.samples = generate_mixture(mix, 240, 53, d.vocab);

    BatchPlanner planner(static_cast<int>(d.samples.size()), 8, 54);
    int heterogeneous = 0;
    for (int step = 0; step < 100; ++step) {
        std::set<Task> tasks;
        for (int idx : planner.batch_at(step)) tasks.insert(d.samples[static_cast<size_t>(idx)].task);
        if (tasks.size() >= 2) ++heterogeneous;
    }

    Outcome o;
    o.pass = heterogeneous >= 90;
    o.detail = std::to_string(heterogeneous) +
               "/100 batches contain >= 2 tasks (need >= 90; analytic expectation ~99.95%)";
    return o;
}

// --------------------------------------------------------------------------
// 11. Oracle equivalence: 1000 generated samples per task carry exactly the
//     answer an independent brute-force oracle derives from the scene.
Outcome criterion_oracle_equivalence() {
    const Vocabulary vocab = default_vocabulary(1000);
    int mismatches = 0;
    int total = 0;
    std::ostringstream per_task;
    for (const Task t : kAllTasks) {
        const std::vector<TaskSample> samples =
            generate_mixture({{t, 1.0}}, 1000, derive_seed(55, task_name(t)), vocab);
        int bad = 0;
        for (const TaskSample& s : samples) {
            ++total;
            if (s.target_text != oracle_answer(s.scene, s.instruction_text, 1000)) ++bad;
        }
        mismatches += bad;
        per_task << (t == kAllTasks.front() ? "" : ", ") << task_name(t) << " "
                 << samples.size() - static_cast<size_t>(bad) << "/" << samples.size();
        std::cerr << "[criterion 11] " << task_name(t) << ": " << bad << " mismatches\n";
    }
    Outcome o;
    o.pass = mismatches == 0 && total == 5000;
    o.detail = per_task.str();
    return o;
}

// --------------------------------------------------------------------------
// 12. Resumption determinism: a run interrupted at step 6 and resumed from
//     its checkpoint reproduces the uninterrupted 12-step loss trace.
Outcome criterion_resumption() {
    const Dataset data = tiny_mixture(64, 56);
    const BackboneConfig cfg = tiny_arch(data.vocab.size());

    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.lr = 1e-3;
    tc.rng_seed = 77;
    tc.max_steps = 12;

    TrainState uninterrupted = fresh_icl_state(cfg, 77);
    const TrainReport full = train(uninterrupted, data, tc);

    TrainState first_half = fresh_icl_state(cfg, 77);
    TrainConfig tc_half = tc;
    tc_half.max_steps = 6;
    const TrainReport before = train(first_half, data, tc_half);

    const fs::path ckpt = work_dir("resumption") / "mid.ckpt";
    save_train_state(first_half, ckpt.string());
    TrainState resumed = load_train_state(ckpt.string());
    const TrainReport after = train(resumed, data, tc);

    std::vector<double> stitched = before.losses;
    stitched.insert(stitched.end(), after.losses.begin(), after.losses.end());

    double worst = 0.0;
    bool shape_ok = full.losses.size() == 12 && stitched.size() == 12;
    if (shape_ok)
        for (size_t i = 0; i < stitched.size(); ++i)
            worst = std::max(worst, std::abs(stitched[i] - full.losses[i]));
    const bool params_match = uninterrupted.store.checksum("") == resumed.store.checksum("");

    std::ostringstream d;
    d << "12-step trace, max |loss drift| = " << std::scientific << std::setprecision(2) << worst
      << " (tol " << kResumeTol << "), final parameters "
      << (params_match ? "bit-identical" : "DIFFER");
    Outcome o;
    o.pass = shape_ok && worst <= kResumeTol && params_match;
    o.detail = d.str();
    return o;
}

}  // namespace
}  // namespace mixt

int main(int argc, char** argv) {
    using namespace mixt;
    struct Entry {
        const char* title;
        std::function<Outcome()> run;
    };
    const std::map<int, Entry> criteria{
        {1, {"freeze contract", criterion_freeze_contract}},
        {2, {"zero-shot reduction", criterion_zero_shot_reduction}},
        {3, {"gradient correctness", criterion_gradient_check}},
        {4, {"coordinate quantization", criterion_quantization}},
        {5, {"decoder causality", criterion_causality}},
        {6, {"beam search", criterion_beam_search}},
        {7, {"few-shot gain", criterion_few_shot_gain}},
        {8, {"shots matrix", criterion_shots_matrix}},
        {9, {"stable shots", criterion_stable_shots}},
        {10, {"mixed batches", criterion_mixed_batches}},
        {11, {"oracle equivalence", criterion_oracle_equivalence}},
        {12, {"resumption determinism", criterion_resumption}},
    };

    std::vector<int> picks;
    for (int i = 1; i < argc; ++i) {
        try {
            picks.push_back(std::stoi(argv[i]));
        } catch (const std::exception&) {
            std::cerr << "not a criterion number: " << argv[i] << "\n";
            return 2;
        }
    }
    if (picks.empty())
        for (const auto& [n, entry] : criteria) picks.push_back(n);

    int failures = 0;
    for (const int n : picks) {
        const auto it = criteria.find(n);
        if (it == criteria.end()) {
            std::cerr << "no criterion " << n << " (valid: 1..12)\n";
            return 2;
        }
        Outcome o;
        try {
            o = it->second.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        std::cout << "criterion " << n << " (" << it->second.title
                  << "): " << (o.pass ? "PASS" : "FAIL") << " -- " << o.detail << "\n"
                  << std::flush;
        if (!o.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
