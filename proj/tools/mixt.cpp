#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixt/commands.hpp"

namespace {

// One-line machine-parseable error record on stderr.
void print_error(const std::string& command, const std::string& message) {
    nlohmann::json j;
    j["error"] = message;
    j["command"] = command.empty() ? "mixt" : command;
    std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal in-context tuning on synthetic shape scenes"};
    app.require_subcommand(1);
    std::string active;

    mixt::GenDataOptions gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
    gen_cmd->add_option("--out", gen.out_dir, "Output dataset directory")->required();
    gen_cmd->add_option("--size", gen.size, "Number of samples")->required();
    gen_cmd->add_option("--mix", gen.mix,
                        "Task proportions, e.g. caption:0.3,vqa:0.3,grounding:0.2,"
                        "detection:0.1,mim:0.1 (default: uniform; must sum to 1)");
    gen_cmd->add_option("--seed", gen.seed, "Generation seed");
    gen_cmd->add_option("--canvas", gen.canvas, "Canvas side length in pixels");
    gen_cmd->add_option("--bins", gen.bins, "Coordinate quantization bins");
    gen_cmd->add_option("--exclude-task", gen.exclude_tasks,
                        "Task to drop from the mixture (repeatable)");
    gen_cmd->add_flag("--force", gen.force, "Replace a non-empty output directory");
    gen_cmd->callback([&] {
        active = "gen-data";
        mixt::cmd_gen_data(gen, std::cout);
    });

    mixt::TrainOptions tr;
    CLI::App* train_cmd = app.add_subcommand("train", "Train the prefix module or a backbone");
    train_cmd->add_option("--data", tr.data_dir, "Training dataset directory")->required();
    train_cmd->add_option("--out", tr.out_dir, "Run output directory")->required();
    train_cmd->add_option("--config", tr.config_path, "Training config file (key=value lines)");
    train_cmd->add_option("--arch", tr.arch_path, "Architecture config file (key=value lines)");
    train_cmd->add_option("--init-backbone", tr.init_backbone,
                          "Backbone checkpoint to wrap with a fresh prefix module");
    train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue training from");
    train_cmd->add_option("--set", tr.set_kv, "Training config override key=value (repeatable)");
    train_cmd->add_option("--shots", tr.shots, "Shot policy: fixed:N or uniform:a,b,c");
    train_cmd->add_option("--data-fraction", tr.data_fraction,
                          "Train on the leading fraction of the dataset");
    train_cmd->add_option("--seed", tr.seed, "Training seed");
    train_cmd->add_option("--epochs", tr.epochs, "Number of epochs");
    train_cmd->add_option("--batch-size", tr.batch_size, "Batch size");
    train_cmd->add_option("--max-steps", tr.max_steps, "Stop after this many steps (0 = full plan)");
    train_cmd->add_option("--lr", tr.lr, "Peak learning rate");
    train_cmd->add_option("--exclude-task", tr.exclude_tasks,
                          "Task to exclude from training (repeatable)");
    train_cmd->add_option("--train-target", tr.train_target, "\"mixt\" or \"backbone\"");
    train_cmd->callback([&] {
        active = "train";
        mixt::cmd_train(tr, std::cout);
    });

    mixt::EvalOptions ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint few-shot");
    eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint to evaluate")->required();
    eval_cmd->add_option("--data", ev.data_dir, "Evaluation dataset directory")->required();
    eval_cmd->add_option("--out", ev.out_dir, "Run output directory")->required();
    eval_cmd->add_option("--shots", ev.shots, "Context examples per query");
    eval_cmd->add_option("--beam", ev.beam, "Beam size (1 = greedy)");
    eval_cmd->add_option("--max-len", ev.max_len, "Maximum decoded length");
    eval_cmd->add_option("--support", ev.support, "\"eval\" or external:<dataset dir>");
    eval_cmd->add_option("--seed", ev.seed, "Context-draw seed");
    eval_cmd->add_option("--run-id", ev.run_id, "Run id stamped on metric records");
    eval_cmd->callback([&] {
        active = "eval";
        mixt::cmd_eval(ev, std::cout);
    });

    mixt::ShotsMatrixOptions sm;
    CLI::App* matrix_cmd =
        app.add_subcommand("shots-matrix", "Cross trained shots against evaluation shots");
    matrix_cmd->add_option("--ckpt", sm.ckpts, "Checkpoint (repeatable, one per trained-shots row)")
        ->required();
    matrix_cmd->add_option("--data", sm.data_dir, "Evaluation dataset directory")->required();
    matrix_cmd->add_option("--out", sm.out_dir, "Run output directory")->required();
    matrix_cmd->add_option("--eval-shots", sm.eval_shots, "Evaluation shot counts (default 1 2 3)");
    matrix_cmd->add_option("--task", sm.task, "Task to score");
    matrix_cmd->add_option("--metric", sm.metric, "Metric name for the grid");
    matrix_cmd->add_option("--beam", sm.beam, "Beam size");
    matrix_cmd->add_option("--max-len", sm.max_len, "Maximum decoded length");
    matrix_cmd->add_option("--support", sm.support, "\"eval\" or external:<dataset dir>");
    matrix_cmd->add_option("--seed", sm.seed, "Context-draw seed");
    matrix_cmd->callback([&] {
        active = "shots-matrix";
        mixt::cmd_shots_matrix(sm, std::cout);
    });

    mixt::InferOptions in;
    CLI::App* infer_cmd = app.add_subcommand("infer", "Decode one query image + instruction");
    infer_cmd->add_option("--ckpt", in.ckpt, "Checkpoint")->required();
    infer_cmd->add_option("--image", in.image_path, "Query image (PPM)")->required();
    infer_cmd->add_option("--instruction", in.instruction, "Query instruction text")->required();
    infer_cmd->add_option("--support", in.support_dir, "Support dataset directory")->required();
    infer_cmd->add_option("--out", in.out_dir, "Output directory")->required();
    infer_cmd->add_option("--shots", in.shots, "Context examples");
    infer_cmd->add_option("--beam", in.beam, "Beam size");
    infer_cmd->add_option("--max-len", in.max_len, "Maximum decoded length");
    infer_cmd->add_option("--seed", in.seed, "Context-draw seed");
    infer_cmd->callback([&] {
        active = "infer";
        mixt::cmd_infer(in, std::cout);
    });

    const auto parsed_command = [&]() -> std::string {
        if (!active.empty()) return active;
        const auto subs = app.get_subcommands();
        return subs.empty() ? "" : subs.front()->get_name();
    };
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        print_error(parsed_command(), e.what());
        return e.get_exit_code();
    } catch (const std::exception& e) {
        print_error(parsed_command(), e.what());
        return 1;
    }
    return 0;
}
