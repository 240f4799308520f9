#include "seqrec/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace seqrec {

EvalPhase parse_eval_phase(const std::string& name) {
    if (name == "validation") return EvalPhase::validation;
    if (name == "test") return EvalPhase::test;
    throw std::invalid_argument("unknown evaluation phase: " + name);
}

std::string eval_phase_name(EvalPhase p) {
    return p == EvalPhase::validation ? "validation" : "test";
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["model"] = model;
    j["dataset"] = dataset;
    j["phase"] = phase;
    j["hr10"] = hr10;
    j["hr100"] = hr100;
    j["ndcg10"] = ndcg10;
    j["ndcg100"] = ndcg100;
    j["train_seconds"] = train_seconds;
    j["best_epoch"] = best_epoch;
    j["num_users_evaluated"] = num_users_evaluated;
    j["filter_seen"] = filter_seen;
    j["tie_policy"] = tie_policy;
    j["loss"] = loss;
    j["negative_scope"] = negative_scope;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json_text(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    MetricsReport r;
    r.model = j.at("model").get<std::string>();
    r.dataset = j.value("dataset", std::string());
    r.phase = j.value("phase", std::string());
    r.hr10 = j.at("hr10").get<double>();
    r.hr100 = j.at("hr100").get<double>();
    r.ndcg10 = j.at("ndcg10").get<double>();
    r.ndcg100 = j.at("ndcg100").get<double>();
    r.train_seconds = j.at("train_seconds").get<double>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.num_users_evaluated = j.value("num_users_evaluated", 0);
    r.filter_seen = j.value("filter_seen", false);
    r.tie_policy = j.value("tie_policy", std::string("optimistic"));
    r.loss = j.value("loss", std::string());
    r.negative_scope = j.value("negative_scope", std::string());
    r.seed = j.value("seed", std::uint64_t(0));
    return r;
}

int rank_of_target(const std::vector<real>& scores, int target) {
    if (target < 1 || target > static_cast<int>(scores.size()))
        throw std::invalid_argument("rank_of_target: target out of range");
    const real target_score = scores[static_cast<std::size_t>(target - 1)];
    int above = 0;
    for (const real s : scores) {
        if (!std::isfinite(static_cast<double>(s)))
            throw std::invalid_argument("rank_of_target: non-finite score");
        if (s > target_score) ++above;
    }
    return 1 + above;
}

double metric_at_k(int rank, int k, MetricKind kind) {
    if (rank < 1) throw std::invalid_argument("metric_at_k: rank must be >= 1");
    if (k < 1) throw std::invalid_argument("metric_at_k: k must be >= 1");
    if (rank > k) return 0.0;
    if (kind == MetricKind::hit_rate) return 1.0;
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

MetricsReport evaluate(const ModelParams& params, const LeaveOneOutSplit& split, EvalPhase phase,
                       bool filter_seen, const std::vector<int>* user_subset,
                       std::vector<int>* out_ranks) {
    std::vector<int> users;
    if (user_subset) {
        users = *user_subset;
    } else {
        users.resize(static_cast<std::size_t>(split.num_users));
        for (int u = 1; u <= split.num_users; ++u) users[static_cast<std::size_t>(u - 1)] = u;
    }
    if (users.empty()) throw std::invalid_argument("evaluate: empty user subset");

    std::vector<std::vector<int>> contexts(users.size());
    std::vector<int> targets(users.size());
    for (std::size_t i = 0; i < users.size(); ++i) {
        const int u = users[i];
        if (u < 1 || u > split.num_users) throw std::invalid_argument("evaluate: user out of range");
        contexts[i] = split.train_prefix[static_cast<std::size_t>(u)];
        if (phase == EvalPhase::test) {
            contexts[i].push_back(split.val_target[static_cast<std::size_t>(u)]);
            targets[i] = split.test_target[static_cast<std::size_t>(u)];
        } else {
            targets[i] = split.val_target[static_cast<std::size_t>(u)];
        }
    }

    std::vector<std::vector<real>> scores = score_contexts(params, contexts, users);

    MetricsReport report;
    report.phase = eval_phase_name(phase);
    report.filter_seen = filter_seen;
    report.num_users_evaluated = static_cast<int>(users.size());
    if (out_ranks) out_ranks->assign(users.size(), 0);

    // The "minus infinity" used by filter_seen stays finite so the rank
    // computation's NaN guard still applies.
    const real bottom = std::numeric_limits<real>::lowest();
    double hr10 = 0, hr100 = 0, ndcg10 = 0, ndcg100 = 0;
    for (std::size_t i = 0; i < users.size(); ++i) {
        auto& s = scores[i];
        if (filter_seen) {
            for (const int item : contexts[i]) s[static_cast<std::size_t>(item - 1)] = bottom;
        }
        const int rank = rank_of_target(s, targets[i]);
        if (out_ranks) (*out_ranks)[i] = rank;
        hr10 += metric_at_k(rank, 10, MetricKind::hit_rate);
        hr100 += metric_at_k(rank, 100, MetricKind::hit_rate);
        ndcg10 += metric_at_k(rank, 10, MetricKind::ndcg);
        ndcg100 += metric_at_k(rank, 100, MetricKind::ndcg);
    }
    const double n = static_cast<double>(users.size());
    report.hr10 = hr10 / n;
    report.hr100 = hr100 / n;
    report.ndcg10 = ndcg10 / n;
    report.ndcg100 = ndcg100 / n;
    return report;
}

double validate_epoch(const ModelParams& params, const LeaveOneOutSplit& split,
                      const std::vector<int>& user_subset) {
    return evaluate(params, split, EvalPhase::validation, /*filter_seen=*/false, &user_subset)
        .ndcg10;
}

int model_order_rank(const std::string& display_name) {
    static const std::vector<std::string> order = {"BPR-MF", "GRU4Rec", "BERT4Rec", "SASRec",
                                                   "SASRec+"};
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (display_name == order[i]) return static_cast<int>(i);
    }
    if (display_name.rfind("SASRec+ ", 0) == 0) return static_cast<int>(order.size());
    return static_cast<int>(order.size()) + 1;
}

namespace {

struct ColumnMarks {
    std::vector<int> best_rows, second_rows;
};

// Best and second-best row per metric column (higher is better); ties
// share the mark.
std::vector<ColumnMarks> column_marks(const std::vector<MetricsReport>& reports) {
    const auto field = [](const MetricsReport& r, int c) -> double {
        switch (c) {
            case 0: return r.hr10;
            case 1: return r.hr100;
            case 2: return r.ndcg10;
            default: return r.ndcg100;
        }
    };
    std::vector<ColumnMarks> marks(4);
    for (int c = 0; c < 4; ++c) {
        double best = -1, second = -1;
        for (const auto& r : reports) {
            const double v = field(r, c);
            if (v > best) {
                second = best;
                best = v;
            } else if (v < best && v > second) {
                second = v;
            }
        }
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const double v = field(reports[i], c);
            if (v == best) marks[static_cast<std::size_t>(c)].best_rows.push_back(static_cast<int>(i));
            else if (v == second && reports.size() > 1)
                marks[static_cast<std::size_t>(c)].second_rows.push_back(static_cast<int>(i));
        }
    }
    return marks;
}

void sort_reports(std::vector<MetricsReport>& reports) {
    std::stable_sort(reports.begin(), reports.end(),
                     [](const MetricsReport& a, const MetricsReport& b) {
                         const int ra = model_order_rank(a.model), rb = model_order_rank(b.model);
                         if (ra != rb) return ra < rb;
                         return a.model < b.model;
                     });
}

std::string fmt4(double v) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(4);
    ss << v;
    return ss.str();
}

std::string fmt_seconds(double v) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(1);
    ss << v;
    return ss.str();
}

bool contains(const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

std::string comparison_table_text(std::vector<MetricsReport> reports) {
    if (reports.empty()) throw std::invalid_argument("comparison table: no reports");
    sort_reports(reports);
    const auto marks = column_marks(reports);

    const std::vector<std::string> header = {"Model",   "HR@10",   "HR@100",        "NDCG@10",
                                             "NDCG@100", "Training time", "Best epoch"};
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        const auto cell = [&](double v, int c) {
            std::string s = fmt4(v);
            if (contains(marks[static_cast<std::size_t>(c)].best_rows, static_cast<int>(i)))
                return "**" + s + "**";
            if (contains(marks[static_cast<std::size_t>(c)].second_rows, static_cast<int>(i)))
                return "_" + s + "_";
            return s;
        };
        rows.push_back({r.model, cell(r.hr10, 0), cell(r.hr100, 1), cell(r.ndcg10, 2),
                        cell(r.ndcg100, 3), fmt_seconds(r.train_seconds),
                        std::to_string(r.best_epoch)});
    }

    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream out;
    const auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out << row[c];
            if (c + 1 < row.size()) out << std::string(width[c] - row[c].size() + 2, ' ');
        }
        out << "\n";
    };
    emit(header);
    for (const auto& row : rows) emit(row);
    return out.str();
}

std::string comparison_table_csv(std::vector<MetricsReport> reports) {
    if (reports.empty()) throw std::invalid_argument("comparison table: no reports");
    sort_reports(reports);
    const auto marks = column_marks(reports);
    std::ostringstream out;
    out << "model,hr10,hr10_mark,hr100,hr100_mark,ndcg10,ndcg10_mark,ndcg100,ndcg100_mark,"
           "train_seconds,best_epoch\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        const auto mark = [&](int c) -> std::string {
            if (contains(marks[static_cast<std::size_t>(c)].best_rows, static_cast<int>(i))) return "best";
            if (contains(marks[static_cast<std::size_t>(c)].second_rows, static_cast<int>(i)))
                return "second";
            return "";
        };
        out << r.model << ',' << fmt4(r.hr10) << ',' << mark(0) << ',' << fmt4(r.hr100) << ','
            << mark(1) << ',' << fmt4(r.ndcg10) << ',' << mark(2) << ',' << fmt4(r.ndcg100) << ','
            << mark(3) << ',' << fmt_seconds(r.train_seconds) << ',' << r.best_epoch << "\n";
    }
    return out.str();
}

}  // namespace seqrec
