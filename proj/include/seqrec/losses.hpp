#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqrec/data.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

enum class LossKind { bce, full_ce, sampled_ce };
enum class NegativeScope { exclude_target, exclude_user_history };

LossKind parse_loss_kind(const std::string& name);
std::string loss_kind_name(LossKind k);
NegativeScope parse_negative_scope(const std::string& name);
std::string negative_scope_name(NegativeScope s);

/// Which training loss to use and how its negatives are drawn.
/// Default scopes: bce excludes the user's whole training history (as the
/// original SASRec training loop does); sampled_ce excludes only the
/// position's target, drawn independently per position. The shared
/// per-batch fast path reuses one negative set for every position of a
/// batch and relies on the loss-level target exclusion for collisions.
struct LossSpec {
    LossKind kind = LossKind::full_ce;
    int num_negatives = 1;
    NegativeScope scope = NegativeScope::exclude_user_history;
    bool scope_set = false;  // false -> per-kind default applied by resolve()
    bool share_per_batch = false;

    LossSpec resolved() const;
    void validate(int num_items) const;
};

/// Mean over positions of -[log sigmoid(pos) + log(1 - sigmoid(neg))],
/// one negative per positive, in softplus form. Requires >= 1 position.
TensorPtr bce_loss(const TensorPtr& pos_scores, const TensorPtr& neg_scores);

/// Mean over rows of -log softmax(logits)[target]. logits is
/// (rows, catalog); targets are item ids in [1, catalog].
TensorPtr full_ce_loss(const TensorPtr& logits, const std::vector<int>& targets);

/// Sampled softmax: logits is (rows, 1+N) with the positive in column 0;
/// excluded (rows x N, nonzero = drop) removes negatives equal to the
/// row's target from the denominator. A row with every negative excluded
/// contributes loss 0 (still counted); such rows are reported on stderr.
TensorPtr sampled_ce_loss(const TensorPtr& logits, const std::vector<std::uint8_t>& excluded);

/// Fused full cross-entropy over the catalog with tied item embeddings:
/// logits row i = hidden_i . embedding_row(j) for items j in [1, catalog].
/// Equivalent to full_ce_loss over those logits, without materializing
/// them. hidden is (rows, d); embeddings is (catalog+2, d).
TensorPtr tied_ce_loss(const TensorPtr& hidden, const TensorPtr& embeddings,
                       const std::vector<int>& targets);

/// Uniform negatives with replacement over [1, num_items], rejecting the
/// exclusion set per scope; returns num_negatives ids per valid position
/// of the batch in row-major order. With share_per_batch a single set is
/// drawn (no rejection; collisions are handled by the loss exclusion
/// mask). Throws if the exclusion set covers the catalog.
std::vector<std::int32_t> sample_negatives(const Batch& batch, int num_negatives,
                                           NegativeScope scope, std::uint64_t seed,
                                           const LeaveOneOutSplit& split,
                                           bool share_per_batch = false);

/// Marks negatives that equal their position's target (the loss-level
/// exclusion used with shared negatives).
std::vector<std::uint8_t> target_collision_mask(const std::vector<int>& targets,
                                                const std::vector<std::int32_t>& negatives,
                                                int num_negatives);

}  // namespace seqrec
