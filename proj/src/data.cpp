#include "seqrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace seqrec {

namespace {

bool parse_int64(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto res = std::from_chars(begin, end, out);
    return res.ec == std::errc{} && res.ptr == end;
}

std::string trimmed(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

LogFormat parse_log_format(const std::string& name) {
    if (name == "timestamped-csv") return LogFormat::timestamped_csv;
    if (name == "preordered-pairs") return LogFormat::preordered_pairs;
    throw std::invalid_argument("unknown interaction format: " + name);
}

std::string log_format_name(LogFormat f) {
    return f == LogFormat::timestamped_csv ? "timestamped-csv" : "preordered-pairs";
}

std::vector<Interaction> load_interactions(const std::string& path, LogFormat format) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open interaction file: " + path);

    std::vector<Interaction> out;
    std::string line;
    std::int64_t line_no = 0;
    bool first_data_line = true;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string row = trimmed(line);
        if (row.empty()) continue;

        if (format == LogFormat::timestamped_csv) {
            std::vector<std::string> fields;
            std::size_t start = 0;
            while (true) {
                const std::size_t comma = row.find(',', start);
                fields.push_back(trimmed(row.substr(start, comma - start)));
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
            if (fields.size() != 3) {
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": expected user,item,timestamp");
            }
            std::int64_t ts = 0;
            if (!parse_int64(fields[2], ts)) {
                if (first_data_line) {
                    first_data_line = false;  // header row
                    continue;
                }
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": non-numeric timestamp '" + fields[2] + "'");
            }
            if (fields[0].empty() || fields[1].empty()) {
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": empty user or item id");
            }
            out.push_back({fields[0], fields[1], ts});
            first_data_line = false;
        } else {
            std::istringstream ss(row);
            std::string user, item, extra;
            if (!(ss >> user >> item) || (ss >> extra)) {
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": expected 'user item'");
            }
            // Order of appearance is the per-user interaction order.
            out.push_back({user, item, static_cast<std::int64_t>(out.size())});
        }
    }
    if (out.empty()) throw std::runtime_error(path + ": no interactions found");
    return out;
}

SequenceDataset build_dataset(const std::vector<Interaction>& interactions, int min_per_user) {
    if (interactions.empty()) throw std::invalid_argument("build_dataset: empty interaction list");
    if (min_per_user < 1) throw std::invalid_argument("build_dataset: min_per_user must be >= 1");

    // Group by raw user, keeping input order within each group.
    std::unordered_map<std::string, std::vector<std::size_t>> by_user;
    std::vector<std::string> user_order;
    for (std::size_t i = 0; i < interactions.size(); ++i) {
        auto [it, inserted] = by_user.try_emplace(interactions[i].user);
        if (inserted) user_order.push_back(interactions[i].user);
        it->second.push_back(i);
    }

    SequenceDataset ds;
    ds.user_raw.emplace_back();  // index 0 unused
    ds.item_raw.emplace_back();
    ds.sequences.emplace_back();

    for (const auto& raw_user : user_order) {
        auto& rows = by_user[raw_user];
        if (static_cast<int>(rows.size()) < min_per_user) continue;
        // Stable sort by timestamp; ties keep input order.
        std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
            return interactions[a].timestamp < interactions[b].timestamp;
        });
        const int user_idx = ++ds.num_users;
        ds.user_raw.push_back(raw_user);
        ds.user_index.emplace(raw_user, user_idx);
        std::vector<int> seq;
        seq.reserve(rows.size());
        for (std::size_t row : rows) {
            const std::string& raw_item = interactions[row].item;
            auto [it, inserted] = ds.item_index.try_emplace(raw_item, ds.num_items + 1);
            if (inserted) {
                ++ds.num_items;
                ds.item_raw.push_back(raw_item);
            }
            seq.push_back(it->second);
        }
        ds.num_interactions += static_cast<std::int64_t>(seq.size());
        ds.sequences.push_back(std::move(seq));
    }
    if (ds.num_users == 0) {
        throw std::runtime_error("build_dataset: every user was removed by the min-interaction filter");
    }
    return ds;
}

SequenceDataset subsample_users(const SequenceDataset& dataset, int count, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("subsample_users: count must be >= 1");
    if (count >= dataset.num_users) return dataset;

    std::vector<int> users(dataset.num_users);
    for (int u = 1; u <= dataset.num_users; ++u) users[u - 1] = u;
    Rng rng(mix_seed(seed, 0x5ab5a31e));
    rng.shuffle(users);
    users.resize(count);
    std::sort(users.begin(), users.end());

    SequenceDataset out;
    out.source_path = dataset.source_path;
    out.user_raw.emplace_back();
    out.item_raw.emplace_back();
    out.sequences.emplace_back();
    for (int u : users) {
        const int user_idx = ++out.num_users;
        out.user_raw.push_back(dataset.user_raw[u]);
        out.user_index.emplace(dataset.user_raw[u], user_idx);
        std::vector<int> seq;
        seq.reserve(dataset.sequences[u].size());
        for (int item : dataset.sequences[u]) {
            const std::string& raw_item = dataset.item_raw[item];
            auto [it, inserted] = out.item_index.try_emplace(raw_item, out.num_items + 1);
            if (inserted) {
                ++out.num_items;
                out.item_raw.push_back(raw_item);
            }
            seq.push_back(it->second);
        }
        out.num_interactions += static_cast<std::int64_t>(seq.size());
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

std::unordered_set<int> LeaveOneOutSplit::prefix_set(int user) const {
    const auto& prefix = train_prefix[static_cast<std::size_t>(user)];
    return {prefix.begin(), prefix.end()};
}

LeaveOneOutSplit split_leave_one_out(const SequenceDataset& dataset) {
    LeaveOneOutSplit split;
    split.num_users = dataset.num_users;
    split.num_items = dataset.num_items;
    split.train_prefix.resize(static_cast<std::size_t>(dataset.num_users) + 1);
    split.val_target.assign(static_cast<std::size_t>(dataset.num_users) + 1, 0);
    split.test_target.assign(static_cast<std::size_t>(dataset.num_users) + 1, 0);
    for (int u = 1; u <= dataset.num_users; ++u) {
        const auto& seq = dataset.sequences[static_cast<std::size_t>(u)];
        if (seq.size() < 3) {
            throw std::runtime_error("split_leave_one_out: sequence of user " + std::to_string(u) +
                                     " is shorter than 3");
        }
        split.train_prefix[u].assign(seq.begin(), seq.end() - 2);
        split.val_target[u] = seq[seq.size() - 2];
        split.test_target[u] = seq[seq.size() - 1];
    }
    return split;
}

Batch trim_batch(const Batch& b) {
    int first_col = b.max_len;
    for (int r = 0; r < b.batch_size && first_col > 0; ++r) {
        for (int t = 0; t < first_col; ++t) {
            if (b.inputs[b.idx(r, t)] != 0) {
                first_col = t;
                break;
            }
        }
    }
    if (first_col == 0) return b;
    if (first_col == b.max_len) first_col = b.max_len - 1;  // keep one column

    Batch out;
    out.batch_size = b.batch_size;
    out.max_len = b.max_len - first_col;
    out.users = b.users;
    out.inputs.resize(static_cast<std::size_t>(out.batch_size) * out.max_len);
    out.targets.resize(out.inputs.size());
    out.valid.resize(out.inputs.size());
    for (int r = 0; r < b.batch_size; ++r) {
        for (int t = 0; t < out.max_len; ++t) {
            out.inputs[out.idx(r, t)] = b.inputs[b.idx(r, t + first_col)];
            out.targets[out.idx(r, t)] = b.targets[b.idx(r, t + first_col)];
            out.valid[out.idx(r, t)] = b.valid[b.idx(r, t + first_col)];
        }
    }
    return out;
}

namespace {

std::vector<int> shuffled_users(int num_users, std::uint64_t seed) {
    std::vector<int> users(static_cast<std::size_t>(num_users));
    for (int u = 1; u <= num_users; ++u) users[static_cast<std::size_t>(u - 1)] = u;
    Rng rng(mix_seed(seed, 0x0bc4e5));
    rng.shuffle(users);
    return users;
}

}  // namespace

std::vector<Batch> causal_batches(const LeaveOneOutSplit& split, int max_len, int batch_size,
                                  std::uint64_t shuffle_seed) {
    if (max_len < 2) throw std::invalid_argument("causal_batches: max_len must be >= 2");
    if (batch_size < 1) throw std::invalid_argument("causal_batches: batch_size must be >= 1");

    const std::vector<int> users = shuffled_users(split.num_users, shuffle_seed);
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < users.size(); start += static_cast<std::size_t>(batch_size)) {
        const int rows = static_cast<int>(
            std::min(users.size() - start, static_cast<std::size_t>(batch_size)));
        Batch b;
        b.batch_size = rows;
        b.max_len = max_len;
        b.inputs.assign(static_cast<std::size_t>(rows) * max_len, 0);
        b.targets.assign(static_cast<std::size_t>(rows) * max_len, 0);
        b.valid.assign(static_cast<std::size_t>(rows) * max_len, 0);
        b.users.resize(static_cast<std::size_t>(rows));
        for (int r = 0; r < rows; ++r) {
            const int u = users[start + static_cast<std::size_t>(r)];
            b.users[static_cast<std::size_t>(r)] = u;
            const auto& prefix = split.train_prefix[static_cast<std::size_t>(u)];
            const int m = static_cast<int>(std::min(prefix.size(), static_cast<std::size_t>(max_len) + 1));
            const int n_pos = m - 1;  // positions with (input, next-item target)
            const auto* tail = prefix.data() + prefix.size() - static_cast<std::size_t>(m);
            for (int t = 0; t < n_pos; ++t) {
                const std::int64_t pos = b.idx(r, max_len - n_pos + t);
                b.inputs[pos] = tail[t];
                b.targets[pos] = tail[t + 1];
                b.valid[pos] = 1;
            }
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

std::vector<Batch> masked_batches(const LeaveOneOutSplit& split, int max_len, double mask_prob,
                                  std::uint64_t seed, int batch_size) {
    if (max_len < 2) throw std::invalid_argument("masked_batches: max_len must be >= 2");
    if (!(mask_prob > 0.0 && mask_prob < 1.0))
        throw std::invalid_argument("masked_batches: mask_prob must be in (0, 1)");
    if (batch_size < 1) throw std::invalid_argument("masked_batches: batch_size must be >= 1");

    const int mask_token = split.mask_token();
    const std::vector<int> users = shuffled_users(split.num_users, seed);
    Rng rng(mix_seed(seed, 0x3a5c));
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < users.size(); start += static_cast<std::size_t>(batch_size)) {
        const int rows = static_cast<int>(
            std::min(users.size() - start, static_cast<std::size_t>(batch_size)));
        Batch b;
        b.batch_size = rows;
        b.max_len = max_len;
        b.inputs.assign(static_cast<std::size_t>(rows) * max_len, 0);
        b.targets.assign(static_cast<std::size_t>(rows) * max_len, 0);
        b.valid.assign(static_cast<std::size_t>(rows) * max_len, 0);
        b.users.resize(static_cast<std::size_t>(rows));
        for (int r = 0; r < rows; ++r) {
            const int u = users[start + static_cast<std::size_t>(r)];
            b.users[static_cast<std::size_t>(r)] = u;
            const auto& prefix = split.train_prefix[static_cast<std::size_t>(u)];
            const int m = static_cast<int>(std::min(prefix.size(), static_cast<std::size_t>(max_len)));
            const auto* tail = prefix.data() + prefix.size() - static_cast<std::size_t>(m);
            bool any_mask = false;
            for (int t = 0; t < m; ++t) {
                const std::int64_t pos = b.idx(r, max_len - m + t);
                const int item = tail[t];
                if (rng.next_double() < mask_prob) {
                    b.inputs[pos] = mask_token;
                    b.targets[pos] = item;
                    b.valid[pos] = 1;
                    any_mask = true;
                } else {
                    b.inputs[pos] = item;
                }
            }
            if (!any_mask) {
                // Zero-loss sequences are wasted compute; mask the last position.
                const std::int64_t pos = b.idx(r, max_len - 1);
                b.targets[pos] = tail[m - 1];
                b.inputs[pos] = mask_token;
                b.valid[pos] = 1;
            }
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

std::vector<int> sample_validation_users(const LeaveOneOutSplit& split, int count,
                                         std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("sample_validation_users: count must be >= 1");
    std::vector<int> users(static_cast<std::size_t>(split.num_users));
    for (int u = 1; u <= split.num_users; ++u) users[static_cast<std::size_t>(u - 1)] = u;
    if (count >= split.num_users) return users;
    Rng rng(mix_seed(seed, 0x7a1));
    rng.shuffle(users);
    users.resize(static_cast<std::size_t>(count));
    std::sort(users.begin(), users.end());
    return users;
}

std::string dataset_stats_json(const SequenceDataset& dataset) {
    nlohmann::ordered_json j;
    j["users"] = dataset.num_users;
    j["items"] = dataset.num_items;
    j["interactions"] = dataset.num_interactions;
    j["avg_len"] = dataset.avg_length();
    j["density"] = dataset.density();
    return j.dump(2) + "\n";
}

}  // namespace seqrec
