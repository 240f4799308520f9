#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqrec/data.hpp"
#include "seqrec/losses.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

enum class ArchKind { sasrec, bert4rec, gru4rec, bprmf };

ArchKind parse_arch_kind(const std::string& name);
std::string arch_kind_name(ArchKind k);

inline constexpr real kLayerNormEps = real(1e-5);
inline constexpr real kInitStd = real(0.02);

struct ModelConfig {
    ArchKind kind = ArchKind::sasrec;
    int hidden_size = 64;
    int num_blocks = 2;
    int num_heads = 1;
    int max_len = 50;
    double dropout_prob = 0.1;
    double mask_prob = 0.2;  // bert4rec only
    int num_items = 0;       // catalog size V
    int num_users = 0;       // bprmf only
    int factors = 64;        // bprmf only

    void validate() const;
};

/// All trainable tensors of one model. Item embeddings are tied: the same
/// table embeds inputs and scores the catalog (no output bias). Positional
/// embeddings are learned and indexed by distance from the sequence end
/// (the last item always uses row max_len-1), which keeps left-padded
/// windows of different lengths consistent.
struct ModelParams {
    ModelConfig config;

    TensorPtr item_emb;  // (V+2, d); row 0 padding, row V+1 mask token
    TensorPtr pos_emb;   // (max_len, d)
    struct Block {
        TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
        TensorPtr ln1_g, ln1_b;
        TensorPtr w1, b1, w2, b2;
        TensorPtr ln2_g, ln2_b;
    };
    std::vector<Block> blocks;

    // gru4rec
    TensorPtr gru_wz, gru_uz, gru_bz, gru_wr, gru_ur, gru_br, gru_wh, gru_uh, gru_bh;

    // bprmf
    TensorPtr user_factors;  // (num_users+1, factors)
    TensorPtr item_factors;  // (V+2, factors)

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    /// Tensors in a fixed serialization order.
    std::vector<std::pair<std::string, TensorPtr>> named() const;
    std::vector<TensorPtr> trainable() const;
    std::int64_t parameter_count() const;

    /// Deep copy of values only (fresh tensors, no tape, grads dropped).
    ModelParams clone_values() const;
    void zero_grads() const;
};

/// Closed-form parameter count:
///   sasrec/bert4rec: (V+2+max_len)*d + num_blocks*(6*d*d + 10*d)
///     [per block: q,k,v,o projections 4*(d*d+d), feed-forward 2*(d*d+d),
///      two layer norms 2*(2*d)]
///   gru4rec:         (V+2)*d + 6*d*d + 3*d
///   bprmf:           (num_users+1 + V+2) * factors
std::int64_t expected_parameter_count(const ModelConfig& config);

/// Hidden states (batch, len, d) for the batch under each architecture.
/// Position t of a causal model sees inputs at positions <= t only;
/// bert4rec attends bidirectionally and accepts the mask token as input.
/// Throws if batch.max_len exceeds config.max_len.
TensorPtr sasrec_forward(const Batch& batch, const ModelParams& params, bool train_mode,
                         Rng* dropout_rng);
TensorPtr bert4rec_forward(const Batch& batch, const ModelParams& params, bool train_mode,
                           Rng* dropout_rng);
TensorPtr gru4rec_forward(const Batch& batch, const ModelParams& params, bool train_mode,
                          Rng* dropout_rng);
TensorPtr model_forward(const Batch& batch, const ModelParams& params, bool train_mode,
                        Rng* dropout_rng);

/// The training loss of one batch under the loss spec: forward, gather
/// the valid positions, apply the loss (drawing negatives from
/// negative_seed where the loss needs them).
TensorPtr batch_loss(const ModelParams& params, const Batch& batch, const LossSpec& spec,
                     const LeaveOneOutSplit& split, std::uint64_t negative_seed, bool train_mode,
                     Rng* dropout_rng);

/// scores[i] = hidden . embedding(item i+1), i in [0, V); the padding and
/// mask rows are excluded. For bprmf the item-factor table plays the role
/// of the embedding table.
std::vector<real> score_catalog(const std::vector<real>& hidden, const ModelParams& params);

/// Catalog scores for one user history via the model's prediction path:
/// sasrec/gru4rec read the hidden state at the final position of the last
/// max_len items; bert4rec appends the mask token to the last max_len-1
/// items and reads the mask position; bprmf uses the user's factor row
/// (user_index required, 1-based).
std::vector<real> predict_scores(const ModelParams& params, const std::vector<int>& user_items,
                                 int user_index = 0);

/// Top-k item ids by predicted score, descending (ties: lower id first).
std::vector<int> predict_next(const ModelParams& params, const std::vector<int>& user_items, int k,
                              int user_index = 0);

/// Batched eval-mode scoring of many contexts (one score vector per
/// context). user_indices is only consulted by bprmf.
std::vector<std::vector<real>> score_contexts(const ModelParams& params,
                                              const std::vector<std::vector<int>>& contexts,
                                              const std::vector<int>& user_indices);

/// BPR matrix factorization: SGD over (user, positive, negative) triples,
/// negatives drawn outside the user's training prefix, minimizing
/// -log sigmoid(x_ui - x_uj) + (reg/2)*L2 on the touched factors.
ModelParams bprmf_fit(const LeaveOneOutSplit& split, int factors, double lr, double reg,
                      int epochs, std::uint64_t seed);

/// One BPR epoch (as many triples as training interactions) on existing
/// parameters; epoch_seed fixes the triple draws.
void bprmf_epoch(ModelParams& params, const LeaveOneOutSplit& split, double lr, double reg,
                 std::uint64_t epoch_seed);

}  // namespace seqrec
