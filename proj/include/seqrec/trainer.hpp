#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "seqrec/adam.hpp"
#include "seqrec/data.hpp"
#include "seqrec/losses.hpp"
#include "seqrec/models.hpp"

namespace seqrec {

struct TrainConfig {
    int batch_size = 128;
    double learning_rate = 1e-3;
    int max_epochs = 100;
    int patience = 10;
    LossSpec loss;
    std::uint64_t seed = 42;
    int validation_user_cap = 10000;
    int eval_cutoff_for_stopping = 10;  // NDCG@k driving early stopping
    double bpr_reg = 1e-4;              // bprmf only

    void validate() const;
};

struct EpochRow {
    int epoch = 0;  // 1-based
    double train_loss = 0;
    double val_metric = 0;  // NDCG@cutoff on the validation users
    double elapsed_s = 0;   // cumulative wall clock including validation
};

struct TrainRecord {
    std::vector<EpochRow> rows;
    int best_epoch = 0;
    double best_metric = 0;
    std::string stopped_reason;    // "patience" or "max_epochs"
    double train_only_seconds = 0;  // wall clock excluding validation passes
};

struct TimeSummary {
    double total_seconds = 0;
    double seconds_to_best = 0;
    double mean_epoch_seconds = 0;
};

/// Totals from the per-epoch cumulative clock.
TimeSummary time_epochs(const TrainRecord& record);

/// Patience bookkeeping, separated out so the stopping arithmetic can be
/// driven by synthetic metric traces. Improvement is a strict increase;
/// ties keep the earlier best epoch. Stops after patience epochs without
/// improvement or at max_epochs.
class EarlyStopper {
public:
    EarlyStopper(int patience, int max_epochs);

    /// Feed the validation metric of epoch (1-based, consecutive).
    /// Returns true if training must stop after this epoch.
    bool observe(int epoch, double metric);

    bool last_improved() const { return last_improved_; }
    int best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_metric_; }
    const std::string& reason() const { return reason_; }

private:
    int patience_, max_epochs_;
    int best_epoch_ = 0;
    double best_metric_;
    bool last_improved_ = false;
    std::string reason_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to evaluate the trained model or continue training:
/// current and best parameters, optimizer state, and the epoch record.
struct Checkpoint {
    ModelConfig model_config;
    TrainConfig train_config;
    ModelParams params;       // state after the last completed epoch
    ModelParams best_params;  // snapshot from the best validation epoch
    std::vector<AdamState> adam;  // aligned with params.named()
    TrainRecord record;
    int next_epoch = 1;
    std::string dataset_path;
    std::string dataset_format = "preordered-pairs";
    int dataset_min_per_user = 5;
    int data_users = 0;
    int data_items = 0;
};

/// Versioned binary container (header JSON + raw tensor payload + FNV-1a
/// checksum). Round-trips bit-exactly at the build's precision.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Epoch loop with per-epoch validation, early stopping, and best-weight
/// restoration. One optimizer step per batch; every user contributes one
/// (truncated) sequence per epoch. Emits
///   epoch=<i> loss=<f> val_ndcg10=<f> elapsed_s=<f>
/// per epoch to progress when given. Resuming from a checkpoint continues
/// the run exactly as if it had never stopped (wall clock aside).
/// Throws (naming epoch and batch) if the training loss turns non-finite.
Checkpoint train(const ModelConfig& model_config, const TrainConfig& train_config,
                 const LeaveOneOutSplit& split, std::ostream* progress = nullptr,
                 const Checkpoint* resume = nullptr);

}  // namespace seqrec
