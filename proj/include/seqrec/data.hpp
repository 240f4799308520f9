#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "seqrec/common.hpp"

namespace seqrec {

struct Interaction {
    std::string user;
    std::string item;
    std::int64_t timestamp = 0;
};

enum class LogFormat { timestamped_csv, preordered_pairs };

LogFormat parse_log_format(const std::string& name);
std::string log_format_name(LogFormat f);

/// Reads an interaction log.
///   timestamped_csv: `user,item,timestamp` lines, optional header
///     (detected by a non-numeric third field on the first line).
///   preordered_pairs: whitespace-separated `user item` lines; per-user
///     order of appearance is the interaction order.
/// Malformed rows and empty files are errors naming the line.
std::vector<Interaction> load_interactions(const std::string& path, LogFormat format);

/// Per-user chronological item sequences over a contiguous catalog.
/// Users and items are indexed from 1; item 0 is padding and item
/// num_items+1 is the mask token, and neither ever appears in a sequence.
struct SequenceDataset {
    std::vector<std::vector<int>> sequences;  // index 0 unused; [u] for u in 1..num_users
    int num_users = 0;
    int num_items = 0;
    std::int64_t num_interactions = 0;
    std::vector<std::string> user_raw;  // index -> raw id, index 0 unused
    std::vector<std::string> item_raw;
    std::unordered_map<std::string, int> user_index;
    std::unordered_map<std::string, int> item_index;
    std::string source_path;

    int mask_token() const { return num_items + 1; }
    double avg_length() const {
        return num_users == 0 ? 0.0 : static_cast<double>(num_interactions) / num_users;
    }
    double density() const {
        return num_users == 0 || num_items == 0
                   ? 0.0
                   : static_cast<double>(num_interactions) /
                         (static_cast<double>(num_users) * static_cast<double>(num_items));
    }
};

/// Orders each user's items by timestamp (stable: ties keep input order),
/// drops users with fewer than min_per_user interactions, and remaps the
/// surviving raw ids to contiguous indices starting at 1 in order of first
/// appearance. Throws if nothing survives the filter.
SequenceDataset build_dataset(const std::vector<Interaction>& interactions, int min_per_user = 5);

/// Keeps a uniform random subset of count users (all users if count >=
/// num_users) and rebuilds contiguous user and item indices.
SequenceDataset subsample_users(const SequenceDataset& dataset, int count, std::uint64_t seed);

/// Per-user (train-prefix, validation-target, test-target) triple.
struct LeaveOneOutSplit {
    std::vector<std::vector<int>> train_prefix;  // index 0 unused
    std::vector<int> val_target;                 // index 0 unused
    std::vector<int> test_target;
    int num_users = 0;
    int num_items = 0;

    int mask_token() const { return num_items + 1; }
    /// All items of the user's train prefix, as a set (negative-sampling
    /// exclusion and seen-item filtering).
    std::unordered_set<int> prefix_set(int user) const;
};

LeaveOneOutSplit split_leave_one_out(const SequenceDataset& dataset);

/// One padded training batch. Row r holds user users[r]; inputs/targets
/// are left-padded with 0 to max_len; valid marks positions that carry a
/// loss term.
struct Batch {
    int batch_size = 0;
    int max_len = 0;
    std::vector<std::int32_t> inputs;   // batch_size * max_len
    std::vector<std::int32_t> targets;  // batch_size * max_len
    std::vector<std::uint8_t> valid;    // batch_size * max_len
    std::vector<std::int32_t> users;    // batch_size

    std::int64_t idx(int r, int t) const { return static_cast<std::int64_t>(r) * max_len + t; }
};

/// Drops leading all-padding columns (every row is left-padded, so this
/// is exact) to cut attention cost on short batches.
Batch trim_batch(const Batch& b);

/// Next-item batches: per user the last min(n, L+1) prefix items give
/// inputs items[0..m-2] and targets items[1..m-1]. Users are shuffled by
/// seed; batches of batch_size users in that order.
std::vector<Batch> causal_batches(const LeaveOneOutSplit& split, int max_len, int batch_size,
                                  std::uint64_t shuffle_seed);

/// Masked-item batches: per user the last min(n, L) prefix items; each
/// position is independently replaced by the mask token with probability
/// mask_prob, and targets carry the original item at masked positions
/// only. A sequence drawing zero masks gets its final position masked.
std::vector<Batch> masked_batches(const LeaveOneOutSplit& split, int max_len, double mask_prob,
                                  std::uint64_t seed, int batch_size);

/// Uniform sample of users without replacement; everything if count >=
/// num_users. Sorted ascending for deterministic evaluation order.
std::vector<int> sample_validation_users(const LeaveOneOutSplit& split, int count,
                                         std::uint64_t seed);

/// {users, items, interactions, avg_len, density} as a JSON string
/// (density is a fraction, not a percentage).
std::string dataset_stats_json(const SequenceDataset& dataset);

}  // namespace seqrec
