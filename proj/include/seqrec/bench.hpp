#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seqrec/data.hpp"
#include "seqrec/models.hpp"
#include "seqrec/trainer.hpp"

namespace seqrec {

/// One experiment, fully resolved: dataset, model, training settings.
/// Parsed from a flat JSON object; unknown keys are a hard error.
struct ExperimentConfig {
    std::string dataset;  // interaction file (raw or prepared)
    LogFormat format = LogFormat::preordered_pairs;
    int min_per_user = 5;

    ModelConfig model;  // num_items/num_users filled after the dataset loads
    TrainConfig train;
    std::vector<std::uint64_t> seeds;  // multi-seed runs; empty -> {train.seed}
    bool filter_seen = false;
    int threads = 0;

    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
    std::string to_json() const;  // resolved echo, reproduces the run

    std::vector<std::uint64_t> seed_list() const;
};

/// Display name in the paper's convention: the SASRec backbone is named
/// by its training loss (SASRec = bce, SASRec+ = full cross-entropy,
/// "SASRec+ <N>" = sampled with N negatives).
std::string display_model_name(const ModelConfig& model, const LossSpec& loss);

struct PrepareArgs {
    std::string input;
    LogFormat format = LogFormat::preordered_pairs;
    std::string out_dir;
    int min_per_user = 5;
    int subsample_users = 0;  // 0 = keep all
    std::uint64_t subsample_seed = 42;
};

/// Ingest + preprocess: writes dataset.txt (canonical contiguous-id
/// pairs), stats.json, id_maps.json, prepare_config.json. Idempotent.
void run_prepare(const PrepareArgs& args);

struct TrainArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed_override;
};

/// Trains per config (once per seed; multi-seed runs nest under
/// seed_<s>/). Each run directory gets checkpoint.bin, train_record.csv
/// (epoch,loss,val_ndcg10 — deterministic under the seed), timing.csv
/// (wall clock, segregated), config.json, metadata.json.
void run_train(const TrainArgs& args);

struct EvaluateArgs {
    std::string checkpoint;  // checkpoint file, run dir, or multi-seed dir
    std::string phase = "test";
    bool filter_seen = false;
    std::string out_dir;
    std::string dataset_override;  // optional
};

/// Unsampled evaluation of the checkpoint's best weights; writes
/// metrics.json (and per-seed files plus metrics_mean.json for multi-seed
/// directories) and prints one summary line per report.
void run_evaluate(const EvaluateArgs& args);

struct SweepArgs {
    std::string config_path;  // base config plus "sweep_n": [...]
    std::string out_dir;
};

/// Trains and evaluates one run per negative count, sharing the base
/// seed; emits sweep.csv (n_negatives,ndcg10,hr10,train_seconds) with a
/// data row appended after each run so partial results survive failures.
void run_sweep(const SweepArgs& args);

struct ReportArgs {
    std::string report_dir;  // directory of MetricsReport JSON files
    std::string out_dir;
};

/// Aggregates reports into the comparison table (table.txt, table.csv).
void run_report(const ReportArgs& args);

}  // namespace seqrec
