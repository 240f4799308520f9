#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "seqrec/bench.hpp"
#include "seqrec/parallel.hpp"

using namespace seqrec;

int main(int argc, char** argv) {
    CLI::App app{"Sequential recommendation training and benchmarking"};
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "Worker threads (0 = hardware)");

    PrepareArgs prepare;
    std::string prepare_format = "preordered-pairs";
    auto* cmd_prepare = app.add_subcommand("prepare", "Ingest and preprocess an interaction log");
    cmd_prepare->add_option("--input", prepare.input, "Interaction file")->required();
    cmd_prepare->add_option("--format", prepare_format,
                             "timestamped-csv or preordered-pairs");
    cmd_prepare->add_option("--out", prepare.out_dir, "Output directory")->required();
    cmd_prepare->add_option("--min-per-user", prepare.min_per_user,
                             "Drop users with fewer interactions");
    cmd_prepare->add_option("--subsample-users", prepare.subsample_users,
                             "Keep only this many users (0 = all)");
    cmd_prepare->add_option("--subsample-seed", prepare.subsample_seed, "Subsample seed");

    TrainArgs train_args;
    std::uint64_t seed_override = 0;
    bool have_seed = false;
    auto* cmd_train = app.add_subcommand("train", "Train a model per config");
    cmd_train->add_option("--config", train_args.config_path, "Experiment config JSON")->required();
    cmd_train->add_option("--out", train_args.out_dir, "Output directory")->required();
    cmd_train->add_option("--seed", seed_override, "Override the config seed")
        ->each([&](const std::string&) { have_seed = true; });

    EvaluateArgs eval_args;
    auto* cmd_evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint (unsampled metrics)");
    cmd_evaluate->add_option("--checkpoint", eval_args.checkpoint,
                              "Checkpoint file or run directory")->required();
    cmd_evaluate->add_option("--phase", eval_args.phase, "validation or test");
    cmd_evaluate->add_flag("--filter-seen", eval_args.filter_seen,
                            "Exclude already-seen items from the ranking");
    cmd_evaluate->add_option("--out", eval_args.out_dir, "Output directory")->required();
    cmd_evaluate->add_option("--dataset", eval_args.dataset_override,
                              "Dataset path override");

    SweepArgs sweep_args;
    auto* cmd_sweep = app.add_subcommand("sweep", "Train/evaluate over a negative-count sweep");
    cmd_sweep->add_option("--config", sweep_args.config_path,
                           "Base config JSON with sweep_n")->required();
    cmd_sweep->add_option("--out", sweep_args.out_dir, "Output directory")->required();

    ReportArgs report_args;
    auto* cmd_report = app.add_subcommand("report", "Aggregate metrics JSONs into the comparison table");
    cmd_report->add_option("--dir", report_args.report_dir, "Directory of MetricsReport JSONs")
        ->required();
    cmd_report->add_option("--out", report_args.out_dir, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads > 0) set_num_threads(threads);
        if (cmd_prepare->parsed()) {
            prepare.format = parse_log_format(prepare_format);
            run_prepare(prepare);
        } else if (cmd_train->parsed()) {
            if (have_seed) train_args.seed_override = seed_override;
            run_train(train_args);
        } else if (cmd_evaluate->parsed()) {
            run_evaluate(eval_args);
        } else if (cmd_sweep->parsed()) {
            run_sweep(sweep_args);
        } else if (cmd_report->parsed()) {
            run_report(report_args);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
