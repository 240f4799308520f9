#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqrec/data.hpp"
#include "seqrec/models.hpp"

namespace seqrec {

enum class MetricKind { hit_rate, ndcg };
enum class EvalPhase { validation, test };

EvalPhase parse_eval_phase(const std::string& name);
std::string eval_phase_name(EvalPhase p);

/// One row of the comparison table: unsampled leave-one-out ranking
/// metrics plus training bookkeeping.
struct MetricsReport {
    double hr10 = 0, hr100 = 0, ndcg10 = 0, ndcg100 = 0;
    int num_users_evaluated = 0;
    bool filter_seen = false;
    std::string tie_policy = "optimistic";
    std::string model;    // display name, e.g. "SASRec+"
    std::string dataset;  // source path or label
    std::string phase;
    std::string loss;
    std::string negative_scope;
    double train_seconds = 0;
    int best_epoch = 0;
    std::uint64_t seed = 0;

    std::string to_json() const;
    static MetricsReport from_json_text(const std::string& text);
};

/// 1 + the number of items scoring strictly above the target (optimistic
/// tie handling: equal scores do not push the target down). Throws on NaN.
int rank_of_target(const std::vector<real>& scores, int target);

/// HR: 1 if rank <= k. NDCG: 1/log2(rank+1) if rank <= k (one relevant
/// item, so the ideal DCG is 1). Zero otherwise.
double metric_at_k(int rank, int k, MetricKind kind);

/// Unsampled evaluation over the full catalog. Per user the context is
/// the training prefix (validation phase) or the prefix plus the
/// validation item (test phase); the target is the held-out item of the
/// phase. filter_seen pushes context items to the bottom of the ranking
/// before ranking the target. user_subset (optional) restricts and
/// orders the evaluated users; out_ranks (optional) receives per-user
/// ranks in that order.
MetricsReport evaluate(const ModelParams& params, const LeaveOneOutSplit& split, EvalPhase phase,
                       bool filter_seen, const std::vector<int>* user_subset = nullptr,
                       std::vector<int>* out_ranks = nullptr);

/// Mean validation NDCG@10 over the user subset (the early-stopping
/// metric).
double validate_epoch(const ModelParams& params, const LeaveOneOutSplit& split,
                      const std::vector<int>& user_subset);

/// Renders reports in the paper's comparison layout (rows ordered
/// BPR-MF, GRU4Rec, BERT4Rec, SASRec, SASRec+, SASRec+ <N>; columns
/// HR@10, HR@100, NDCG@10, NDCG@100, training time, best epoch). The
/// best value per metric column is wrapped in ** and the second best in
/// _ in the text table; the CSV carries a <metric>_mark column with
/// "best"/"second" instead.
std::string comparison_table_text(std::vector<MetricsReport> reports);
std::string comparison_table_csv(std::vector<MetricsReport> reports);

/// Paper row order for a display name; unknown names sort last.
int model_order_rank(const std::string& display_name);

}  // namespace seqrec
