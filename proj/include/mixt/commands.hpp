#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixt/config_file.hpp"
#include "mixt/dataset.hpp"
#include "mixt/evaluator.hpp"
#include "mixt/manifest.hpp"
#include "mixt/shots_matrix.hpp"
#include "mixt/trainer.hpp"

namespace mixt {

// Parses "caption:0.3,vqa:0.3,grounding:0.2,detection:0.1,mim:0.1". The
// proportions are user-supplied and must sum to 1 within 1e-9.
inline std::vector<std::pair<Task, double>> parse_mix(const std::string& text) {
    require(!text.empty(), "parse_mix: empty mixture string");
    std::vector<std::pair<Task, double>> mix;
    std::set<Task> seen;
    double sum = 0.0;
    for (const std::string& part : detail::split_csv(text)) {
        const auto colon = part.find(':');
        if (colon == std::string::npos || colon == 0 || colon == part.size() - 1)
            fail("mixture entry \"", part, "\": expected task:weight");
        const Task t = task_from_name(part.substr(0, colon));
        const std::string wtext = part.substr(colon + 1);
        double w = 0.0;
        try {
            size_t pos = 0;
            w = std::stod(wtext, &pos);
            if (pos != wtext.size()) throw std::invalid_argument(wtext);
        } catch (const std::exception&) {
            fail("mixture entry \"", part, "\": cannot parse weight \"", wtext, "\"");
        }
        if (w < 0.0) fail("mixture entry \"", part, "\": negative weight");
        if (!seen.insert(t).second) fail("mixture lists task ", task_name(t), " twice");
        mix.emplace_back(t, w);
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        fail("mixture proportions sum to ", format_double(sum), "; they must sum to 1");
    return mix;
}

// Drops excluded tasks from the mixture; the remaining proportions are
// renormalized implicitly by generation (weights are relative).
inline std::vector<std::pair<Task, double>> exclude_from_mix(
    std::vector<std::pair<Task, double>> mix, const std::vector<std::string>& names) {
    std::set<Task> drop;
    for (const auto& name : names) drop.insert(task_from_name(name));
    std::erase_if(mix, [&drop](const auto& e) { return drop.count(e.first) != 0; });
    if (mix.empty()) fail("task exclusion leaves an empty mixture");
    return mix;
}

// Black one-pixel frame through the given inclusive pixel corners, clamped
// to the canvas; corners may arrive inverted (model output is unconstrained).
inline void draw_box_outline(Image& img, int x0, int y0, int x1, int y1) {
    if (x1 < x0) std::swap(x0, x1);
    if (y1 < y0) std::swap(y0, y1);
    const auto cx = [&img](int x) { return std::clamp(x, 0, img.width - 1); };
    const auto cy = [&img](int y) { return std::clamp(y, 0, img.height - 1); };
    x0 = cx(x0), x1 = cx(x1), y0 = cy(y0), y1 = cy(y1);
    for (int x = x0; x <= x1; ++x) {
        img.set(y0, x, 0, 0, 0);
        img.set(y1, x, 0, 0, 0);
    }
    for (int y = y0; y <= y1; ++y) {
        img.set(y, x0, 0, 0, 0);
        img.set(y, x1, 0, 0, 0);
    }
}

// Inverse of the coordinate normalization: bin value v maps to pixel
// round(v * (dim - 1)).
inline int denormalize_coord(double v, int dim) {
    const long px = std::lround(v * (dim - 1));
    return static_cast<int>(std::clamp<long>(px, 0, dim - 1));
}

namespace detail {

inline void ensure_run_layout(const fs::path& out) {
    fs::create_directories(out / "checkpoints");
    fs::create_directories(out / "logs");
    fs::create_directories(out / "metrics");
}

// "eval" -> use the eval set itself; "external:<dir>" -> that dataset.
inline std::optional<Dataset> load_support(const std::string& spec, const Vocabulary& eval_vocab) {
    if (spec == "eval") return std::nullopt;
    if (spec.rfind("external:", 0) == 0) {
        Dataset support = read_dataset(spec.substr(9));
        if (support.vocab.fingerprint() != eval_vocab.fingerprint())
            fail("support dataset vocabulary differs from the eval dataset vocabulary");
        return support;
    }
    fail("bad support spec \"", spec, "\": expected \"eval\" or \"external:<dir>\"");
}

inline nlohmann::json metric_record_json(const MetricRecord& r) {
    nlohmann::json j;
    j["run_id"] = r.run_id;
    j["task"] = r.task;
    j["shots"] = r.shots;
    j["metric"] = r.metric;
    j["value"] = r.value;
    j["n_samples"] = r.n_samples;
    j["malformed_count"] = r.malformed_count;
    return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
    std::string out_dir;
    int size = 0;
    std::string mix;  // empty = uniform over all tasks
    uint64_t seed = 0;
    int canvas = 64;
    int bins = 1000;
    std::vector<std::string> exclude_tasks;
    bool force = false;
};

// Writes a synthetic dataset directory. Fully determined by the options, so
// rerunning with the same options produces byte-identical files; the manifest
// therefore records no timings.
inline void cmd_gen_data(const GenDataOptions& o, std::ostream& log) {
    require(!o.out_dir.empty(), "gen-data: --out is required");
    require(o.size >= 1, "gen-data: --size must be at least 1");
    const fs::path dir = o.out_dir;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!o.force)
            fail("output directory ", dir.string(),
                 " is not empty (pass --force to replace its contents)");
        for (const char* name : {"images", "manifest.jsonl", "checksums", "vocab.txt", "manifest"})
            fs::remove_all(dir / name);
    }
    fs::create_directories(dir);

    auto mix = o.mix.empty() ? uniform_mixture() : parse_mix(o.mix);
    if (!o.exclude_tasks.empty()) mix = exclude_from_mix(std::move(mix), o.exclude_tasks);
    const Vocabulary vocab = default_vocabulary(o.bins);
    const std::vector<TaskSample> samples =
        generate_mixture(mix, o.size, o.seed, vocab, o.canvas, o.canvas);
    write_dataset(samples, dir, vocab);

    ExperimentManifest m;
    m.command = "gen-data";
    m.seed = o.seed;
    m.config_snapshot = "size=" + std::to_string(o.size) + "\n" +
                        "mix=" + (o.mix.empty() ? "uniform" : o.mix) + "\n" +
                        "seed=" + std::to_string(o.seed) + "\n" +
                        "canvas=" + std::to_string(o.canvas) + "\n" +
                        "bins=" + std::to_string(o.bins) + "\n" +
                        "exclude_tasks=" + detail::join_csv(o.exclude_tasks) + "\n";
    m.dataset_checksums["dataset"] = to_hex(dataset_fingerprint(dir));
    m.artifacts = {"manifest.jsonl", "checksums", "vocab.txt", "images"};
    write_manifest(dir / "manifest", m);
    log << "wrote " << samples.size() << " samples to " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string data_dir;
    std::string out_dir;
    std::string config_path;                // TrainConfig keys
    std::string arch_path;                  // BackboneConfig keys
    std::string init_backbone;              // checkpoint to wrap with a fresh prefix module
    std::string resume;                     // checkpoint to continue
    std::vector<std::string> set_kv;        // extra key=value overrides (TrainConfig keys)
    // Named flag overrides; negative / empty means "not given".
    std::string shots;
    double data_fraction = -1.0;
    long long seed = -1;
    int epochs = -1;
    int batch_size = -1;
    int max_steps = -1;
    double lr = -1.0;
    std::vector<std::string> exclude_tasks;
    std::string train_target;
};

// Defaults, then the config file, then --set pairs, then named flags.
inline TrainConfig resolve_train_config(const TrainOptions& o) {
    TrainConfig tc;
    if (!o.config_path.empty()) tc = load_train_config(o.config_path);
    for (const std::string& pair : o.set_kv) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos || eq == 0)
            fail("--set expects key=value, got \"", pair, "\"");
        apply_train_kv(tc, pair.substr(0, eq), pair.substr(eq + 1));
    }
    if (!o.shots.empty()) tc.shot_policy = parse_shot_policy(o.shots);
    if (o.data_fraction >= 0.0) tc.data_fraction = o.data_fraction;
    if (o.seed >= 0) tc.rng_seed = static_cast<uint64_t>(o.seed);
    if (o.epochs > 0) tc.epochs = o.epochs;
    if (o.batch_size > 0) tc.batch_size = o.batch_size;
    if (o.max_steps >= 0) tc.max_steps = o.max_steps;
    if (o.lr > 0.0) tc.lr = o.lr;
    if (!o.exclude_tasks.empty()) tc.exclude_tasks = o.exclude_tasks;
    if (!o.train_target.empty()) tc.train_target = o.train_target;
    return tc;
}

struct TrainOutcome {
    TrainReport report;
    std::string checkpoint_path;
};

inline TrainOutcome cmd_train(const TrainOptions& o, std::ostream& log) {
    require(!o.data_dir.empty(), "train: --data is required");
    require(!o.out_dir.empty(), "train: --out is required");
    if (!o.resume.empty() && !o.init_backbone.empty())
        fail("train: --resume and --init-backbone are mutually exclusive");
    if (!o.arch_path.empty() && (!o.resume.empty() || !o.init_backbone.empty()))
        fail("train: --arch conflicts with --resume/--init-backbone; "
             "the checkpoint fixes the architecture");

    const TrainConfig tc = resolve_train_config(o);
    tc.validate();
    const Dataset data = read_dataset(o.data_dir);

    TrainState st;
    if (!o.resume.empty()) {
        st = load_train_state(o.resume);
    } else if (!o.init_backbone.empty()) {
        require(tc.train_target == "mixt",
                "train: --init-backbone starts prefix-module training; use train_target=mixt");
        st = load_train_state(o.init_backbone);
        if (st.store.has("mixt.text_emb"))
            fail("train: checkpoint ", o.init_backbone, " already carries a prefix module");
        attach_mixt(st, derive_seed(tc.rng_seed, "mixt_init"));
    } else {
        BackboneConfig arch;
        if (!o.arch_path.empty()) arch = load_arch_config(o.arch_path);
        if (arch.vocab_size == 0) arch.vocab_size = data.vocab.size();
        st = make_train_state(arch, derive_seed(tc.rng_seed, "backbone_init"));
        if (tc.train_target == "mixt") attach_mixt(st, derive_seed(tc.rng_seed, "mixt_init"));
    }

    const fs::path out = o.out_dir;
    detail::ensure_run_layout(out);
    const fs::path log_path = out / "logs" / "train_log.jsonl";
    std::ofstream train_log(log_path,
                            o.resume.empty() ? std::ios::binary : std::ios::binary | std::ios::app);
    if (!train_log) fail("cannot open training log for writing: ", log_path.string());

    Stopwatch total;
    TrainOutcome outcome;
    outcome.report = train(st, data, tc, &train_log);
    const double train_sec = total.seconds();
    log << "training pool: " << outcome.report.samples_used << " samples; ran "
        << outcome.report.steps_run << " of " << outcome.report.steps_planned
        << " planned steps\n";

    const fs::path ckpt = out / "checkpoints" / "final.ckpt";
    save_train_state(st, ckpt.string());
    outcome.checkpoint_path = ckpt.string();

    ExperimentManifest m;
    m.command = "train";
    m.seed = tc.rng_seed;
    m.config_snapshot = st.cfg.snapshot() + train_config_text(tc);
    m.dataset_checksums["train_data"] = to_hex(dataset_fingerprint(o.data_dir));
    m.artifacts = {"checkpoints/final.ckpt", "logs/train_log.jsonl"};
    m.timings_sec["train_sec"] = train_sec;
    m.timings_sec["total_sec"] = total.seconds();
    write_manifest(out / "manifest", m);
    if (!outcome.report.losses.empty())
        log << "final loss " << format_double(outcome.report.losses.back()) << "\n";
    log << "checkpoint: " << outcome.checkpoint_path << "\n";
    return outcome;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::string ckpt;
    std::string data_dir;
    std::string out_dir;
    std::string support = "eval";
    int shots = 0;
    int beam = 4;
    int max_len = 30;
    uint64_t seed = 0;
    std::string run_id;  // empty = default
};

struct EvalOutcome {
    std::vector<MetricRecord> records;
};

inline EvalOutcome cmd_eval(const EvalOptions& o, std::ostream& log) {
    require(!o.ckpt.empty(), "eval: --ckpt is required");
    require(!o.data_dir.empty(), "eval: --data is required");
    require(!o.out_dir.empty(), "eval: --out is required");

    const TrainState st = load_train_state(o.ckpt);
    const Dataset data = read_dataset(o.data_dir);
    const std::optional<Dataset> support = detail::load_support(o.support, data.vocab);

    EvalConfig ec;
    ec.shots = o.shots;
    ec.beam = o.beam;
    ec.max_len = o.max_len;
    ec.rng_seed = o.seed;
    if (!o.run_id.empty()) ec.run_id = o.run_id;

    Stopwatch total;
    EvalOutcome outcome;
    outcome.records = evaluate(st.store, st.cfg, data, support ? &*support : nullptr, ec);

    const fs::path out = o.out_dir;
    detail::ensure_run_layout(out);
    const fs::path records_path = out / "metrics" / "records.jsonl";
    {
        std::ofstream f(records_path, std::ios::binary);
        if (!f) fail("cannot open metric records for writing: ", records_path.string());
        for (const MetricRecord& r : outcome.records)
            f << detail::metric_record_json(r).dump() << "\n";
    }
    for (const MetricRecord& r : outcome.records)
        log << r.task << " " << r.metric << " = " << format_double(r.value) << " (n=" << r.n_samples
            << ", malformed=" << r.malformed_count << ")\n";

    ExperimentManifest m;
    m.command = "eval";
    m.seed = o.seed;
    m.config_snapshot = st.cfg.snapshot() + "ckpt=" + o.ckpt + "\n" +
                        "shots=" + std::to_string(o.shots) + "\n" +
                        "beam=" + std::to_string(o.beam) + "\n" +
                        "max_len=" + std::to_string(o.max_len) + "\n" +
                        "rng_seed=" + std::to_string(o.seed) + "\n" +
                        "support=" + o.support + "\n";
    m.dataset_checksums["eval_data"] = to_hex(dataset_fingerprint(o.data_dir));
    if (o.support.rfind("external:", 0) == 0)
        m.dataset_checksums["support_data"] = to_hex(dataset_fingerprint(o.support.substr(9)));
    m.artifacts = {"metrics/records.jsonl"};
    m.timings_sec["total_sec"] = total.seconds();
    write_manifest(out / "manifest", m);
    return outcome;
}

// ---------------------------------------------------------------------------
// shots-matrix

struct ShotsMatrixOptions {
    std::vector<std::string> ckpts;
    std::string data_dir;
    std::string out_dir;
    std::string support = "eval";
    std::vector<int> eval_shots = {1, 2, 3};
    std::string task = "caption";
    std::string metric = "token_f1";
    int beam = 4;
    int max_len = 30;
    uint64_t seed = 0;
};

struct ShotsMatrixOutcome {
    ShotsMatrixReport report;
};

inline ShotsMatrixOutcome cmd_shots_matrix(const ShotsMatrixOptions& o, std::ostream& log) {
    require(!o.ckpts.empty(), "shots-matrix: at least one --ckpt is required");
    require(!o.data_dir.empty(), "shots-matrix: --data is required");
    require(!o.out_dir.empty(), "shots-matrix: --out is required");

    const Dataset data = read_dataset(o.data_dir);
    const std::optional<Dataset> support = detail::load_support(o.support, data.vocab);

    EvalConfig base;
    base.beam = o.beam;
    base.max_len = o.max_len;
    base.rng_seed = o.seed;
    base.run_id = "matrix";

    Stopwatch total;
    ShotsMatrixOutcome outcome;
    outcome.report = shots_matrix(o.ckpts, data, support ? &*support : nullptr, o.eval_shots,
                                  task_from_name(o.task), o.metric, base);

    const fs::path out = o.out_dir;
    detail::ensure_run_layout(out);
    const fs::path grid_path = out / "metrics" / "matrix.jsonl";
    {
        std::ofstream f(grid_path, std::ios::binary);
        if (!f) fail("cannot open matrix records for writing: ", grid_path.string());
        for (const ShotsMatrixCell& c : outcome.report.cells) {
            nlohmann::json j;
            j["run_id"] = base.run_id + "/trained" + std::to_string(c.trained_shots) + "/eval" +
                          std::to_string(c.eval_shots);
            j["task"] = c.task;
            j["shots"] = c.eval_shots;
            j["metric"] = c.metric;
            j["value"] = c.value;
            j["n_samples"] = c.n_samples;
            j["malformed_count"] = c.malformed_count;
            j["trained_shots"] = c.trained_shots;
            j["eval_shots"] = c.eval_shots;
            f << j.dump() << "\n";
        }
    }
    const std::string rendered = outcome.report.render();
    {
        const fs::path table_path = out / "metrics" / "matrix.txt";
        std::ofstream f(table_path, std::ios::binary);
        if (!f) fail("cannot open matrix table for writing: ", table_path.string());
        f << rendered;
    }
    log << rendered;

    ExperimentManifest m;
    m.command = "shots-matrix";
    m.seed = o.seed;
    m.config_snapshot = "ckpts=" + detail::join_csv(o.ckpts) + "\n" + "eval_shots=";
    for (size_t i = 0; i < o.eval_shots.size(); ++i)
        m.config_snapshot += (i ? "," : "") + std::to_string(o.eval_shots[i]);
    m.config_snapshot += "\ntask=" + o.task + "\nmetric=" + o.metric + "\n" +
                         "beam=" + std::to_string(o.beam) + "\n" +
                         "max_len=" + std::to_string(o.max_len) + "\n" +
                         "rng_seed=" + std::to_string(o.seed) + "\n" + "support=" + o.support + "\n";
    m.dataset_checksums["eval_data"] = to_hex(dataset_fingerprint(o.data_dir));
    if (o.support.rfind("external:", 0) == 0)
        m.dataset_checksums["support_data"] = to_hex(dataset_fingerprint(o.support.substr(9)));
    m.artifacts = {"metrics/matrix.jsonl", "metrics/matrix.txt"};
    m.timings_sec["total_sec"] = total.seconds();
    write_manifest(out / "manifest", m);
    return outcome;
}

// ---------------------------------------------------------------------------
// infer

struct InferOptions {
    std::string ckpt;
    std::string image_path;
    std::string instruction;
    std::string support_dir;
    std::string out_dir;
    int shots = 2;
    int beam = 4;
    int max_len = 30;
    uint64_t seed = 0;
};

struct InferOutcome {
    std::string text;
    std::vector<int> tokens;
    bool finished = false;
    bool wrote_box_image = false;
    std::string box_image_path;
};

// Decodes one ad-hoc query. When the prediction carries coordinate tokens
// (grounding/detection style output) the first predicted box is drawn onto a
// copy of the query image.
inline InferOutcome cmd_infer(const InferOptions& o, std::ostream& log) {
    require(!o.ckpt.empty(), "infer: --ckpt is required");
    require(!o.image_path.empty(), "infer: --image is required");
    require(!o.instruction.empty(), "infer: --instruction is required");
    require(!o.support_dir.empty(), "infer: --support is required");
    require(!o.out_dir.empty(), "infer: --out is required");

    const TrainState st = load_train_state(o.ckpt);
    const Dataset support = read_dataset(o.support_dir);
    require(st.cfg.vocab_size == support.vocab.size(),
            "infer: checkpoint vocab size does not match the support dataset vocabulary");

    TaskSample query;
    query.id = "infer";
    query.triple.image = read_ppm(o.image_path);
    query.triple.instruction = support.vocab.encode(o.instruction);

    const std::vector<int> ctx = draw_context(static_cast<int>(support.samples.size()), -1,
                                              o.shots, o.seed, o.image_path + "\n" + o.instruction);
    std::vector<MultimodalTriple> context;
    context.reserve(ctx.size());
    for (int c : ctx) context.push_back(support.samples[static_cast<size_t>(c)].triple);

    EvalConfig ec;
    ec.shots = o.shots;
    ec.beam = o.beam;
    ec.max_len = o.max_len;
    ec.rng_seed = o.seed;
    ec.run_id = "infer";

    Stopwatch total;
    const BeamResult result = decode_query(st.store, st.cfg, context, query, support.vocab, ec);

    InferOutcome outcome;
    outcome.tokens = result.tokens;
    outcome.finished = result.finished;
    outcome.text = support.vocab.decode(result.tokens);
    log << outcome.text << "\n";
    if (!result.finished) log << "note: decoding hit max length before <eos>\n";

    const fs::path out = o.out_dir;
    fs::create_directories(out);
    NormBox box;
    if (detail::decode_box(result.tokens, support.vocab, &box)) {
        Image annotated = query.triple.image;
        draw_box_outline(annotated, denormalize_coord(box.x0, annotated.width),
                         denormalize_coord(box.y0, annotated.height),
                         denormalize_coord(box.x1, annotated.width),
                         denormalize_coord(box.y1, annotated.height));
        const fs::path img_path = out / "prediction.ppm";
        write_ppm(img_path, annotated);
        outcome.wrote_box_image = true;
        outcome.box_image_path = img_path.string();
        log << "wrote " << outcome.box_image_path << "\n";
    }

    ExperimentManifest m;
    m.command = "infer";
    m.seed = o.seed;
    m.config_snapshot = st.cfg.snapshot() + "ckpt=" + o.ckpt + "\n" + "image=" + o.image_path +
                        "\n" + "instruction=" + o.instruction + "\n" +
                        "shots=" + std::to_string(o.shots) + "\n" +
                        "beam=" + std::to_string(o.beam) + "\n" +
                        "max_len=" + std::to_string(o.max_len) + "\n" +
                        "rng_seed=" + std::to_string(o.seed) + "\n" + "support=" + o.support_dir +
                        "\n";
    m.dataset_checksums["support_data"] = to_hex(dataset_fingerprint(o.support_dir));
    if (outcome.wrote_box_image) m.artifacts.push_back("prediction.ppm");
    m.timings_sec["total_sec"] = total.seconds();
    write_manifest(out / "manifest", m);
    return outcome;
}

}  // namespace mixt
