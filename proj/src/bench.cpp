#include "seqrec/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "seqrec/evaluator.hpp"
#include "seqrec/parallel.hpp"

namespace fs = std::filesystem;

namespace seqrec {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("short write: " + path);
}

std::string fmt_real(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

const std::set<std::string> kConfigKeys = {
    "dataset",      "format",        "min_per_user",   "model",
    "hidden_size",  "num_blocks",    "num_heads",      "max_len",
    "dropout",      "mask_prob",     "factors",        "loss",
    "num_negatives", "negative_scope", "share_negatives_per_batch",
    "batch_size",   "learning_rate", "max_epochs",     "patience",
    "validation_user_cap", "seed",   "seeds",          "bpr_reg",
    "filter_seen",  "threads",       "sweep_n"};

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!kConfigKeys.count(key)) throw std::runtime_error("unknown config key: " + key);
    }

    ExperimentConfig c;
    c.dataset = j.value("dataset", std::string());
    c.format = parse_log_format(j.value("format", std::string("preordered-pairs")));
    c.min_per_user = j.value("min_per_user", 5);

    if (!j.contains("model")) throw std::runtime_error("config is missing \"model\"");
    c.model.kind = parse_arch_kind(j.at("model").get<std::string>());
    c.model.hidden_size = j.value("hidden_size", 64);
    c.model.num_blocks = j.value("num_blocks", 2);
    c.model.num_heads = j.value("num_heads", c.model.kind == ArchKind::bert4rec ? 2 : 1);
    c.model.max_len = j.value("max_len", 50);
    c.model.dropout_prob = j.value("dropout", 0.1);
    c.model.mask_prob = j.value("mask_prob", 0.2);
    c.model.factors = j.value("factors", 64);

    if (j.contains("loss")) {
        if (c.model.kind == ArchKind::bprmf)
            throw std::runtime_error("config: bprmf trains with its own pairwise loss; remove \"loss\"");
        c.train.loss.kind = parse_loss_kind(j.at("loss").get<std::string>());
    } else {
        c.train.loss.kind =
            c.model.kind == ArchKind::sasrec ? LossKind::bce : LossKind::full_ce;
    }
    c.train.loss.num_negatives = j.value("num_negatives", 1);
    if (j.contains("negative_scope")) {
        c.train.loss.scope = parse_negative_scope(j.at("negative_scope").get<std::string>());
        c.train.loss.scope_set = true;
    }
    c.train.loss.share_per_batch = j.value("share_negatives_per_batch", false);

    c.train.batch_size = j.value("batch_size", 128);
    c.train.learning_rate = j.value("learning_rate", 1e-3);
    const bool is_bert = c.model.kind == ArchKind::bert4rec;
    c.train.max_epochs = j.value("max_epochs", is_bert ? 200 : 100);
    c.train.patience = j.value("patience", is_bert ? 20 : 10);
    c.train.validation_user_cap = j.value("validation_user_cap", 10000);
    c.train.seed = j.value("seed", std::uint64_t(42));
    c.train.bpr_reg = j.value("bpr_reg", 1e-4);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.filter_seen = j.value("filter_seen", false);
    c.threads = j.value("threads", 0);
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    try {
        return from_json_text(read_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

std::string ExperimentConfig::to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    j["format"] = log_format_name(format);
    j["min_per_user"] = min_per_user;
    j["model"] = arch_kind_name(model.kind);
    j["hidden_size"] = model.hidden_size;
    j["num_blocks"] = model.num_blocks;
    j["num_heads"] = model.num_heads;
    j["max_len"] = model.max_len;
    j["dropout"] = model.dropout_prob;
    j["mask_prob"] = model.mask_prob;
    j["factors"] = model.factors;
    if (model.kind != ArchKind::bprmf) {
        j["loss"] = loss_kind_name(train.loss.kind);
        j["num_negatives"] = train.loss.num_negatives;
        j["negative_scope"] = negative_scope_name(train.loss.resolved().scope);
        j["share_negatives_per_batch"] = train.loss.share_per_batch;
    }
    j["batch_size"] = train.batch_size;
    j["learning_rate"] = train.learning_rate;
    j["max_epochs"] = train.max_epochs;
    j["patience"] = train.patience;
    j["validation_user_cap"] = train.validation_user_cap;
    j["seed"] = train.seed;
    if (!seeds.empty()) j["seeds"] = seeds;
    j["bpr_reg"] = train.bpr_reg;
    j["filter_seen"] = filter_seen;
    j["threads"] = threads;
    return j.dump(2) + "\n";
}

std::vector<std::uint64_t> ExperimentConfig::seed_list() const {
    return seeds.empty() ? std::vector<std::uint64_t>{train.seed} : seeds;
}

std::string display_model_name(const ModelConfig& model, const LossSpec& loss) {
    switch (model.kind) {
        case ArchKind::bprmf: return "BPR-MF";
        case ArchKind::gru4rec:
            return loss.kind == LossKind::full_ce ? "GRU4Rec"
                                                  : "GRU4Rec (" + loss_kind_name(loss.kind) + ")";
        case ArchKind::bert4rec:
            return loss.kind == LossKind::full_ce ? "BERT4Rec"
                                                  : "BERT4Rec (" + loss_kind_name(loss.kind) + ")";
        case ArchKind::sasrec:
            switch (loss.kind) {
                case LossKind::bce: return "SASRec";
                case LossKind::full_ce: return "SASRec+";
                case LossKind::sampled_ce:
                    return "SASRec+ " + std::to_string(loss.num_negatives);
            }
    }
    return "?";
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

void run_prepare(const PrepareArgs& args) {
    if (args.out_dir.empty()) throw std::runtime_error("prepare: missing output directory");
    const auto interactions = load_interactions(args.input, args.format);
    SequenceDataset dataset = build_dataset(interactions, args.min_per_user);
    dataset.source_path = args.input;
    if (args.subsample_users > 0)
        dataset = subsample_users(dataset, args.subsample_users, args.subsample_seed);

    fs::create_directories(args.out_dir);

    std::ostringstream pairs;
    for (int u = 1; u <= dataset.num_users; ++u) {
        for (const int item : dataset.sequences[static_cast<std::size_t>(u)])
            pairs << u << ' ' << item << '\n';
    }
    write_file(args.out_dir + "/dataset.txt", pairs.str());
    write_file(args.out_dir + "/stats.json", dataset_stats_json(dataset));

    nlohmann::ordered_json maps;
    maps["users"] = std::vector<std::string>(dataset.user_raw.begin() + 1, dataset.user_raw.end());
    maps["items"] = std::vector<std::string>(dataset.item_raw.begin() + 1, dataset.item_raw.end());
    write_file(args.out_dir + "/id_maps.json", maps.dump(2) + "\n");

    nlohmann::ordered_json echo;
    echo["input"] = args.input;
    echo["format"] = log_format_name(args.format);
    echo["min_per_user"] = args.min_per_user;
    echo["subsample_users"] = args.subsample_users;
    echo["subsample_seed"] = args.subsample_seed;
    write_file(args.out_dir + "/prepare_config.json", echo.dump(2) + "\n");

    std::cout << dataset_stats_json(dataset);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

SequenceDataset load_prepared(const std::string& path, LogFormat format, int min_per_user) {
    auto dataset = build_dataset(load_interactions(path, format), min_per_user);
    dataset.source_path = path;
    return dataset;
}

std::string train_record_csv(const TrainRecord& record) {
    std::ostringstream csv;
    csv << "epoch,loss,val_ndcg10\n";
    for (const auto& row : record.rows)
        csv << row.epoch << ',' << fmt_real(row.train_loss) << ',' << fmt_real(row.val_metric)
            << '\n';
    return csv.str();
}

std::string timing_csv(const TrainRecord& record) {
    std::ostringstream csv;
    csv << "epoch,elapsed_s\n";
    for (const auto& row : record.rows) csv << row.epoch << ',' << fmt_real(row.elapsed_s) << '\n';
    return csv.str();
}

// One full training run into out_dir; returns the checkpoint.
Checkpoint train_one(const ExperimentConfig& cfg, const SequenceDataset& dataset,
                     const LeaveOneOutSplit& split, std::uint64_t seed, const std::string& out_dir,
                     std::ostream* progress) {
    ExperimentConfig resolved = cfg;
    resolved.model.num_items = split.num_items;
    resolved.model.num_users = split.num_users;
    resolved.train.seed = seed;
    resolved.seeds.clear();

    fs::create_directories(out_dir);
    write_file(out_dir + "/config.json", resolved.to_json());

    Checkpoint ckpt = train(resolved.model, resolved.train, split, progress);
    ckpt.dataset_path = dataset.source_path;
    ckpt.dataset_format = log_format_name(cfg.format);
    ckpt.dataset_min_per_user = cfg.min_per_user;

    save_checkpoint(out_dir + "/checkpoint.bin", ckpt);
    write_file(out_dir + "/train_record.csv", train_record_csv(ckpt.record));
    write_file(out_dir + "/timing.csv", timing_csv(ckpt.record));

    const TimeSummary times = time_epochs(ckpt.record);
    nlohmann::ordered_json meta;
    meta["model"] = display_model_name(resolved.model, resolved.train.loss);
    meta["seed"] = seed;
    meta["epochs_run"] = ckpt.record.rows.size();
    meta["best_epoch"] = ckpt.record.best_epoch;
    meta["best_val_ndcg10"] = ckpt.record.best_metric;
    meta["stopped_reason"] = ckpt.record.stopped_reason;
    meta["total_seconds"] = times.total_seconds;
    meta["seconds_to_best"] = times.seconds_to_best;
    meta["train_only_seconds"] = ckpt.record.train_only_seconds;
    meta["threads"] = num_threads();
    write_file(out_dir + "/metadata.json", meta.dump(2) + "\n");
    return ckpt;
}

}  // namespace

void run_train(const TrainArgs& args) {
    ExperimentConfig cfg = ExperimentConfig::from_file(args.config_path);
    if (args.out_dir.empty()) throw std::runtime_error("train: missing output directory");
    if (cfg.dataset.empty()) throw std::runtime_error("train: config is missing \"dataset\"");
    if (cfg.threads > 0) set_num_threads(cfg.threads);

    const SequenceDataset dataset = load_prepared(cfg.dataset, cfg.format, cfg.min_per_user);
    const LeaveOneOutSplit split = split_leave_one_out(dataset);

    std::vector<std::uint64_t> seeds =
        args.seed_override ? std::vector<std::uint64_t>{*args.seed_override} : cfg.seed_list();
    const bool multi = seeds.size() > 1;
    for (const std::uint64_t seed : seeds) {
        const std::string dir =
            multi ? args.out_dir + "/seed_" + std::to_string(seed) : args.out_dir;
        train_one(cfg, dataset, split, seed, dir, &std::cout);
    }
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> find_checkpoints(const std::string& path) {
    if (fs::is_regular_file(path)) return {path};
    if (fs::is_directory(path)) {
        if (fs::is_regular_file(path + "/checkpoint.bin")) return {path + "/checkpoint.bin"};
        std::vector<std::string> found;
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.is_directory() && entry.path().filename().string().rfind("seed_", 0) == 0 &&
                fs::is_regular_file(entry.path() / "checkpoint.bin"))
                found.push_back((entry.path() / "checkpoint.bin").string());
        }
        std::sort(found.begin(), found.end());
        if (!found.empty()) return found;
    }
    throw std::runtime_error("no checkpoint found at " + path);
}

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const std::string& dataset_override,
                                  EvalPhase phase, bool filter_seen) {
    const std::string data_path =
        dataset_override.empty() ? ckpt.dataset_path : dataset_override;
    if (data_path.empty())
        throw std::runtime_error("evaluate: checkpoint has no dataset path; pass one explicitly");
    const SequenceDataset dataset = load_prepared(data_path, parse_log_format(ckpt.dataset_format),
                                                  ckpt.dataset_min_per_user);
    if (dataset.num_items != ckpt.model_config.num_items ||
        dataset.num_users != ckpt.model_config.num_users) {
        throw std::runtime_error(
            "evaluate: dataset does not match the checkpoint (checkpoint: " +
            std::to_string(ckpt.data_users) + " users / " + std::to_string(ckpt.data_items) +
            " items, dataset: " + std::to_string(dataset.num_users) + " users / " +
            std::to_string(dataset.num_items) + " items)");
    }
    const LeaveOneOutSplit split = split_leave_one_out(dataset);

    MetricsReport report = evaluate(ckpt.best_params, split, phase, filter_seen);
    report.model = display_model_name(ckpt.model_config, ckpt.train_config.loss);
    report.dataset = data_path;
    report.loss = ckpt.model_config.kind == ArchKind::bprmf
                      ? "bpr"
                      : loss_kind_name(ckpt.train_config.loss.kind);
    report.negative_scope = negative_scope_name(ckpt.train_config.loss.resolved().scope);
    report.train_seconds =
        ckpt.record.rows.empty() ? 0.0 : ckpt.record.rows.back().elapsed_s;
    report.best_epoch = ckpt.record.best_epoch;
    report.seed = ckpt.train_config.seed;
    return report;
}

void print_summary(const MetricsReport& r) {
    std::cout << "model=" << r.model << " phase=" << r.phase << " hr10=" << fmt_real(r.hr10)
              << " hr100=" << fmt_real(r.hr100) << " ndcg10=" << fmt_real(r.ndcg10)
              << " ndcg100=" << fmt_real(r.ndcg100) << " best_epoch=" << r.best_epoch
              << " train_seconds=" << fmt_real(r.train_seconds) << "\n";
}

}  // namespace

void run_evaluate(const EvaluateArgs& args) {
    if (args.out_dir.empty()) throw std::runtime_error("evaluate: missing output directory");
    const EvalPhase phase = parse_eval_phase(args.phase);
    const std::vector<std::string> paths = find_checkpoints(args.checkpoint);
    fs::create_directories(args.out_dir);

    std::vector<MetricsReport> reports;
    for (const auto& path : paths) {
        const Checkpoint ckpt = load_checkpoint(path);
        MetricsReport r = evaluate_checkpoint(ckpt, args.dataset_override, phase, args.filter_seen);
        print_summary(r);
        reports.push_back(std::move(r));
    }

    if (reports.size() == 1) {
        write_file(args.out_dir + "/metrics.json", reports[0].to_json());
        return;
    }
    nlohmann::ordered_json mean = nlohmann::ordered_json::parse(reports[0].to_json());
    double hr10 = 0, hr100 = 0, ndcg10 = 0, ndcg100 = 0, secs = 0;
    nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        write_file(args.out_dir + "/metrics_seed_" + std::to_string(r.seed) + ".json", r.to_json());
        per_seed.push_back(nlohmann::ordered_json::parse(r.to_json()));
        hr10 += r.hr10;
        hr100 += r.hr100;
        ndcg10 += r.ndcg10;
        ndcg100 += r.ndcg100;
        secs += r.train_seconds;
    }
    const double n = static_cast<double>(reports.size());
    mean["hr10"] = hr10 / n;
    mean["hr100"] = hr100 / n;
    mean["ndcg10"] = ndcg10 / n;
    mean["ndcg100"] = ndcg100 / n;
    mean["train_seconds"] = secs / n;
    mean["num_seeds"] = reports.size();
    mean["per_seed"] = per_seed;
    mean.erase("seed");
    write_file(args.out_dir + "/metrics_mean.json", mean.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

void run_sweep(const SweepArgs& args) {
    if (args.out_dir.empty()) throw std::runtime_error("sweep: missing output directory");
    const std::string text = read_file(args.config_path);
    const auto j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/true);
    if (!j.contains("sweep_n")) throw std::runtime_error("sweep: config is missing \"sweep_n\"");
    const auto n_values = j.at("sweep_n").get<std::vector<int>>();
    if (n_values.empty()) throw std::runtime_error("sweep: empty sweep_n");
    for (std::size_t i = 1; i < n_values.size(); ++i) {
        if (n_values[i] <= n_values[i - 1])
            throw std::runtime_error("sweep: sweep_n values must be strictly increasing");
    }

    ExperimentConfig base = ExperimentConfig::from_file(args.config_path);
    if (base.dataset.empty()) throw std::runtime_error("sweep: config is missing \"dataset\"");
    base.train.loss.kind = LossKind::sampled_ce;
    if (base.threads > 0) set_num_threads(base.threads);

    const SequenceDataset dataset = load_prepared(base.dataset, base.format, base.min_per_user);
    const LeaveOneOutSplit split = split_leave_one_out(dataset);
    for (const int n : n_values) {
        if (n < 1 || n >= dataset.num_items)
            throw std::runtime_error("sweep: every N must be in [1, catalog)");
    }

    fs::create_directories(args.out_dir);
    const std::string csv_path = args.out_dir + "/sweep.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    csv << "n_negatives,ndcg10,hr10,train_seconds\n";
    csv.flush();

    const std::uint64_t seed = base.train.seed;
    for (const int n : n_values) {
        try {
            ExperimentConfig cfg = base;
            cfg.train.loss.num_negatives = n;
            const std::string dir = args.out_dir + "/n_" + std::to_string(n);
            const Checkpoint ckpt = train_one(cfg, dataset, split, seed, dir, &std::cout);
            MetricsReport r = evaluate_checkpoint(ckpt, cfg.dataset, EvalPhase::test,
                                                  cfg.filter_seen);
            write_file(dir + "/metrics.json", r.to_json());
            csv << n << ',' << fmt_real(r.ndcg10) << ',' << fmt_real(r.hr10) << ','
                << fmt_real(r.train_seconds) << '\n';
            csv.flush();
        } catch (const std::exception& e) {
            throw std::runtime_error("sweep: run with N=" + std::to_string(n) +
                                     " failed (partial sweep.csv retained): " + e.what());
        }
    }
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

void run_report(const ReportArgs& args) {
    if (args.out_dir.empty()) throw std::runtime_error("report: missing output directory");
    if (!fs::is_directory(args.report_dir))
        throw std::runtime_error("report: not a directory: " + args.report_dir);

    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(args.report_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw std::runtime_error("report: no MetricsReport JSON files in " + args.report_dir);

    std::vector<MetricsReport> reports;
    for (const auto& file : files) {
        try {
            reports.push_back(MetricsReport::from_json_text(read_file(file)));
        } catch (const std::exception& e) {
            throw std::runtime_error("report: malformed MetricsReport " + file + ": " + e.what());
        }
    }

    fs::create_directories(args.out_dir);
    const std::string text = comparison_table_text(reports);
    write_file(args.out_dir + "/table.txt", text);
    write_file(args.out_dir + "/table.csv", comparison_table_csv(reports));
    std::cout << text;
}

}  // namespace seqrec
