#include "seqrec/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

#include "seqrec/evaluator.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

namespace {

// Seed stream tags; keep stable so resumed runs redraw identically.
constexpr std::uint64_t kTagValidationUsers = 0x7a11;
constexpr std::uint64_t kTagShuffle = 0x577f;
constexpr std::uint64_t kTagMask = 0x3a5c0;
constexpr std::uint64_t kTagDropout = 0xd409;
constexpr std::uint64_t kTagNegatives = 0x9e90;
constexpr std::uint64_t kTagInit = 0x1247;

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double ndcg_at_cutoff(const std::vector<int>& ranks, int cutoff) {
    double acc = 0;
    for (int r : ranks) acc += metric_at_k(r, cutoff, MetricKind::ndcg);
    return ranks.empty() ? 0.0 : acc / static_cast<double>(ranks.size());
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
    if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
    if (validation_user_cap < 1)
        throw std::invalid_argument("train config: validation_user_cap must be >= 1");
    if (eval_cutoff_for_stopping < 1)
        throw std::invalid_argument("train config: eval_cutoff_for_stopping must be >= 1");
}

TimeSummary time_epochs(const TrainRecord& record) {
    if (record.rows.empty()) throw std::invalid_argument("time_epochs: empty record");
    TimeSummary s;
    s.total_seconds = record.rows.back().elapsed_s;
    s.mean_epoch_seconds = s.total_seconds / static_cast<double>(record.rows.size());
    const int best = record.best_epoch > 0 ? record.best_epoch : static_cast<int>(record.rows.size());
    s.seconds_to_best = record.rows[static_cast<std::size_t>(best - 1)].elapsed_s;
    return s;
}

EarlyStopper::EarlyStopper(int patience, int max_epochs)
    : patience_(patience), max_epochs_(max_epochs),
      best_metric_(-std::numeric_limits<double>::infinity()) {
    if (patience < 1) throw std::invalid_argument("early stopping: patience must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("early stopping: max_epochs must be >= 1");
}

bool EarlyStopper::observe(int epoch, double metric) {
    last_improved_ = metric > best_metric_;
    if (last_improved_) {
        best_metric_ = metric;
        best_epoch_ = epoch;
    }
    if (epoch - best_epoch_ >= patience_) {
        reason_ = "patience";
        return true;
    }
    if (epoch >= max_epochs_) {
        reason_ = "max_epochs";
        return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a64(const char* data, std::size_t n, std::uint64_t h = 14695981039346656037ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

void append_raw(std::string& buf, const void* data, std::size_t n) {
    buf.append(static_cast<const char*>(data), n);
}

template <typename T>
void append_pod(std::string& buf, T v) {
    append_raw(buf, &v, sizeof(T));
}

nlohmann::ordered_json model_config_json(const ModelConfig& c) {
    return {{"kind", arch_kind_name(c.kind)},       {"hidden_size", c.hidden_size},
            {"num_blocks", c.num_blocks},           {"num_heads", c.num_heads},
            {"max_len", c.max_len},                 {"dropout_prob", c.dropout_prob},
            {"mask_prob", c.mask_prob},             {"num_items", c.num_items},
            {"num_users", c.num_users},             {"factors", c.factors}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.kind = parse_arch_kind(j.at("kind").get<std::string>());
    c.hidden_size = j.at("hidden_size").get<int>();
    c.num_blocks = j.at("num_blocks").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.dropout_prob = j.at("dropout_prob").get<double>();
    c.mask_prob = j.at("mask_prob").get<double>();
    c.num_items = j.at("num_items").get<int>();
    c.num_users = j.at("num_users").get<int>();
    c.factors = j.at("factors").get<int>();
    return c;
}

nlohmann::ordered_json train_config_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"loss", loss_kind_name(c.loss.kind)},
            {"num_negatives", c.loss.num_negatives},
            {"negative_scope", negative_scope_name(c.loss.resolved().scope)},
            {"share_negatives_per_batch", c.loss.share_per_batch},
            {"seed", c.seed},
            {"validation_user_cap", c.validation_user_cap},
            {"eval_cutoff_for_stopping", c.eval_cutoff_for_stopping},
            {"bpr_reg", c.bpr_reg}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.loss.kind = parse_loss_kind(j.at("loss").get<std::string>());
    c.loss.num_negatives = j.at("num_negatives").get<int>();
    c.loss.scope = parse_negative_scope(j.at("negative_scope").get<std::string>());
    c.loss.scope_set = true;
    c.loss.share_per_batch = j.at("share_negatives_per_batch").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validation_user_cap = j.at("validation_user_cap").get<int>();
    c.eval_cutoff_for_stopping = j.at("eval_cutoff_for_stopping").get<int>();
    c.bpr_reg = j.value("bpr_reg", 1e-4);
    return c;
}

nlohmann::ordered_json record_json(const TrainRecord& r) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : r.rows)
        rows.push_back({row.epoch, row.train_loss, row.val_metric, row.elapsed_s});
    return {{"rows", rows},
            {"best_epoch", r.best_epoch},
            {"best_metric", r.best_metric},
            {"stopped_reason", r.stopped_reason},
            {"train_only_seconds", r.train_only_seconds}};
}

TrainRecord record_from_json(const nlohmann::json& j) {
    TrainRecord r;
    for (const auto& row : j.at("rows")) {
        r.rows.push_back({row.at(0).get<int>(), row.at(1).get<double>(), row.at(2).get<double>(),
                          row.at(3).get<double>()});
    }
    r.best_epoch = j.at("best_epoch").get<int>();
    r.best_metric = j.at("best_metric").get<double>();
    r.stopped_reason = j.at("stopped_reason").get<std::string>();
    r.train_only_seconds = j.at("train_only_seconds").get<double>();
    return r;
}

constexpr char kMagic[4] = {'S', 'R', 'C', 'K'};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const auto named = ckpt.params.named();
    const auto best_named = ckpt.best_params.named();
    if (named.size() != best_named.size())
        throw std::invalid_argument("save_checkpoint: parameter sets disagree");
    if (!ckpt.adam.empty() && ckpt.adam.size() != named.size())
        throw std::invalid_argument("save_checkpoint: optimizer state misaligned");

    nlohmann::ordered_json header;
    header["model_config"] = model_config_json(ckpt.model_config);
    header["train_config"] = train_config_json(ckpt.train_config);
    header["record"] = record_json(ckpt.record);
    header["next_epoch"] = ckpt.next_epoch;
    header["dataset_path"] = ckpt.dataset_path;
    header["dataset_format"] = ckpt.dataset_format;
    header["dataset_min_per_user"] = ckpt.dataset_min_per_user;
    header["data_users"] = ckpt.data_users;
    header["data_items"] = ckpt.data_items;
    header["real_bytes"] = static_cast<int>(sizeof(real));
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    for (const auto& [name, t] : named) {
        tensors.push_back({{"name", name}, {"shape", t->shape}});
    }
    header["tensors"] = tensors;
    nlohmann::ordered_json adam_meta = nlohmann::ordered_json::array();
    for (const auto& st : ckpt.adam) {
        adam_meta.push_back({{"len", st.first_moment.size()},
                             {"step_count", st.step_count},
                             {"beta1", st.beta1},
                             {"beta2", st.beta2},
                             {"epsilon", st.epsilon}});
    }
    header["adam"] = adam_meta;
    const std::string header_text = header.dump();

    std::string buf;
    append_raw(buf, kMagic, sizeof(kMagic));
    append_pod<std::uint32_t>(buf, kCheckpointVersion);
    append_pod<std::uint64_t>(buf, header_text.size());
    buf += header_text;
    const auto append_tensor = [&](const std::vector<real>& v) {
        append_raw(buf, v.data(), v.size() * sizeof(real));
    };
    for (const auto& [name, t] : named) append_tensor(t->values);
    for (const auto& [name, t] : best_named) append_tensor(t->values);
    for (const auto& st : ckpt.adam) {
        append_tensor(st.first_moment);
        append_tensor(st.second_moment);
    }
    append_pod<std::uint64_t>(buf, fnv1a64(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const std::size_t min_size = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t) * 2;
    if (buf.size() < min_size || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);

    std::uint32_t version = 0;
    std::memcpy(&version, buf.data() + sizeof(kMagic), sizeof(version));
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint version mismatch: expected " +
                                 std::to_string(kCheckpointVersion) + ", found " +
                                 std::to_string(version));
    }

    std::uint64_t stored_hash = 0;
    std::memcpy(&stored_hash, buf.data() + buf.size() - sizeof(stored_hash), sizeof(stored_hash));
    if (fnv1a64(buf.data(), buf.size() - sizeof(stored_hash)) != stored_hash)
        throw std::runtime_error("checkpoint integrity check failed: " + path);

    std::size_t off = sizeof(kMagic) + sizeof(version);
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, buf.data() + off, sizeof(header_len));
    off += sizeof(header_len);
    if (off + header_len > buf.size() - sizeof(stored_hash))
        throw std::runtime_error("checkpoint integrity check failed: " + path);
    const auto header = nlohmann::json::parse(buf.substr(off, header_len));
    off += header_len;

    if (header.at("real_bytes").get<int>() != static_cast<int>(sizeof(real))) {
        throw std::runtime_error("checkpoint precision mismatch: file has " +
                                 std::to_string(header.at("real_bytes").get<int>()) +
                                 "-byte reals, build uses " + std::to_string(sizeof(real)));
    }

    Checkpoint ckpt;
    ckpt.model_config = model_config_from_json(header.at("model_config"));
    ckpt.train_config = train_config_from_json(header.at("train_config"));
    ckpt.record = record_from_json(header.at("record"));
    ckpt.next_epoch = header.at("next_epoch").get<int>();
    ckpt.dataset_path = header.at("dataset_path").get<std::string>();
    ckpt.dataset_format = header.value("dataset_format", std::string("preordered-pairs"));
    ckpt.dataset_min_per_user = header.value("dataset_min_per_user", 5);
    ckpt.data_users = header.at("data_users").get<int>();
    ckpt.data_items = header.at("data_items").get<int>();

    ckpt.params = ModelParams::init(ckpt.model_config, 0);
    ckpt.best_params = ModelParams::init(ckpt.model_config, 0);
    auto named = ckpt.params.named();
    auto best_named = ckpt.best_params.named();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != named.size())
        throw std::runtime_error("checkpoint tensor manifest does not match the model layout");

    const std::size_t payload_end = buf.size() - sizeof(stored_hash);
    const auto read_tensor = [&](std::vector<real>& v) {
        const std::size_t bytes = v.size() * sizeof(real);
        if (off + bytes > payload_end)
            throw std::runtime_error("checkpoint payload truncated: " + path);
        std::memcpy(v.data(), buf.data() + off, bytes);
        off += bytes;
    };
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto shape = tensors[i].at("shape").get<std::vector<int>>();
        if (tensors[i].at("name").get<std::string>() != named[i].first ||
            shape != named[i].second->shape)
            throw std::runtime_error("checkpoint tensor manifest does not match the model layout");
        read_tensor(named[i].second->values);
    }
    for (std::size_t i = 0; i < best_named.size(); ++i) read_tensor(best_named[i].second->values);
    for (const auto& meta : header.at("adam")) {
        AdamState st;
        st.step_count = meta.at("step_count").get<std::int64_t>();
        st.beta1 = meta.at("beta1").get<real>();
        st.beta2 = meta.at("beta2").get<real>();
        st.epsilon = meta.at("epsilon").get<real>();
        const std::size_t len = meta.at("len").get<std::size_t>();
        st.first_moment.resize(len);
        st.second_moment.resize(len);
        read_tensor(st.first_moment);
        read_tensor(st.second_moment);
        ckpt.adam.push_back(std::move(st));
    }
    if (off != payload_end) throw std::runtime_error("checkpoint payload has trailing bytes: " + path);
    return ckpt;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

Checkpoint train(const ModelConfig& model_config, const TrainConfig& train_config,
                 const LeaveOneOutSplit& split, std::ostream* progress, const Checkpoint* resume) {
    model_config.validate();
    train_config.validate();
    train_config.loss.validate(split.num_items);
    if (model_config.num_items != split.num_items)
        throw std::invalid_argument("train: model catalog size does not match the split");
    if (model_config.kind == ArchKind::bprmf && model_config.num_users != split.num_users)
        throw std::invalid_argument("train: bprmf user count does not match the split");

    Checkpoint ckpt;
    ckpt.model_config = model_config;
    ckpt.train_config = train_config;
    ckpt.data_users = split.num_users;
    ckpt.data_items = split.num_items;

    if (resume) {
        ckpt.params = resume->params.clone_values();
        ckpt.best_params = resume->best_params.clone_values();
        ckpt.adam = resume->adam;
        ckpt.record = resume->record;
        ckpt.next_epoch = resume->next_epoch;
        ckpt.dataset_path = resume->dataset_path;
        ckpt.dataset_format = resume->dataset_format;
        ckpt.dataset_min_per_user = resume->dataset_min_per_user;
    } else {
        ckpt.params = ModelParams::init(model_config, mix_seed(train_config.seed, kTagInit));
        ckpt.best_params = ckpt.params.clone_values();
        ckpt.next_epoch = 1;
    }

    const std::vector<int> val_users = sample_validation_users(
        split, train_config.validation_user_cap, mix_seed(train_config.seed, kTagValidationUsers));

    EarlyStopper stopper(train_config.patience, train_config.max_epochs);
    for (const auto& row : ckpt.record.rows) {
        if (stopper.observe(row.epoch, row.val_metric) && row.epoch != ckpt.record.rows.back().epoch)
            throw std::invalid_argument("train: resume record extends past its stopping point");
    }

    const auto params_list = ckpt.params.trainable();
    if (ckpt.adam.empty()) ckpt.adam.assign(params_list.size(), AdamState{});

    const bool is_bprmf = model_config.kind == ArchKind::bprmf;
    const bool masked_regime = model_config.kind == ArchKind::bert4rec;
    const double prior_elapsed = ckpt.record.rows.empty() ? 0.0 : ckpt.record.rows.back().elapsed_s;
    const auto t0 = std::chrono::steady_clock::now();
    bool stop = false;

    for (int epoch = ckpt.next_epoch; epoch <= train_config.max_epochs && !stop; ++epoch) {
        const double epoch_wall_start = seconds_since(t0);
        double epoch_loss_sum = 0;
        std::int64_t epoch_positions = 0;

        if (is_bprmf) {
            bprmf_epoch(ckpt.params, split, train_config.learning_rate, train_config.bpr_reg,
                        mix_seed(train_config.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
        } else {
            const std::uint64_t epoch_u = static_cast<std::uint64_t>(epoch);
            const std::vector<Batch> batches =
                masked_regime
                    ? masked_batches(split, model_config.max_len, model_config.mask_prob,
                                     mix_seed(train_config.seed, kTagMask, epoch_u),
                                     train_config.batch_size)
                    : causal_batches(split, model_config.max_len, train_config.batch_size,
                                     mix_seed(train_config.seed, kTagShuffle, epoch_u));
            for (std::size_t bi = 0; bi < batches.size(); ++bi) {
                const Batch trimmed = trim_batch(batches[bi]);
                Rng dropout_rng(mix_seed(mix_seed(train_config.seed, kTagDropout, epoch_u), bi));
                const std::uint64_t neg_seed =
                    mix_seed(mix_seed(train_config.seed, kTagNegatives, epoch_u), bi);
                ckpt.params.zero_grads();
                TensorPtr loss = batch_loss(ckpt.params, trimmed, train_config.loss, split, neg_seed,
                                            /*train_mode=*/true, &dropout_rng);
                const double loss_value = static_cast<double>(loss->scalar_value());
                if (!std::isfinite(loss_value)) {
                    throw std::runtime_error("training loss is not finite at epoch " +
                                             std::to_string(epoch) + ", batch " +
                                             std::to_string(bi + 1));
                }
                backward(loss);
                for (std::size_t p = 0; p < params_list.size(); ++p)
                    adam_update(*params_list[p], ckpt.adam[p],
                                static_cast<real>(train_config.learning_rate));
                std::int64_t valid = 0;
                for (const auto v : trimmed.valid) valid += v;
                epoch_loss_sum += loss_value * static_cast<double>(valid);
                epoch_positions += valid;
            }
        }
        ckpt.record.train_only_seconds += seconds_since(t0) - epoch_wall_start;

        std::vector<int> val_ranks;
        evaluate(ckpt.params, split, EvalPhase::validation, /*filter_seen=*/false, &val_users,
                 &val_ranks);
        const double val_metric = ndcg_at_cutoff(val_ranks, train_config.eval_cutoff_for_stopping);

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = epoch_positions > 0 ? epoch_loss_sum / static_cast<double>(epoch_positions)
                                             : epoch_loss_sum;
        row.val_metric = val_metric;
        row.elapsed_s = prior_elapsed + seconds_since(t0);
        ckpt.record.rows.push_back(row);

        stop = stopper.observe(epoch, val_metric);
        if (stopper.last_improved()) ckpt.best_params = ckpt.params.clone_values();
        ckpt.next_epoch = epoch + 1;

        if (progress) {
            (*progress) << "epoch=" << epoch << " loss=" << row.train_loss
                        << " val_ndcg10=" << row.val_metric << " elapsed_s=" << row.elapsed_s
                        << "\n";
            progress->flush();
        }
    }

    ckpt.record.best_epoch = stopper.best_epoch();
    ckpt.record.best_metric = stopper.best_metric();
    ckpt.record.stopped_reason = stopper.reason().empty() ? "max_epochs" : stopper.reason();
    return ckpt;
}

}  // namespace seqrec
