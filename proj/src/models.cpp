#include "seqrec/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "seqrec/ops.hpp"

namespace seqrec {

namespace {

void check(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

TensorPtr init_normal(std::vector<int> shape, Rng& rng) {
    auto t = Tensor::create(std::move(shape), true);
    for (auto& v : t->values) v = static_cast<real>(rng.truncated_normal(kInitStd, 2.0));
    return t;
}

TensorPtr init_const(std::vector<int> shape, real value) {
    auto t = Tensor::create(std::move(shape), true);
    std::fill(t->values.begin(), t->values.end(), value);
    return t;
}

std::vector<int> first_real_positions(const Batch& batch) {
    std::vector<int> fr(static_cast<std::size_t>(batch.batch_size), batch.max_len);
    for (int r = 0; r < batch.batch_size; ++r) {
        for (int t = 0; t < batch.max_len; ++t) {
            if (batch.inputs[batch.idx(r, t)] != 0) {
                fr[static_cast<std::size_t>(r)] = t;
                break;
            }
        }
    }
    return fr;
}

std::vector<int> input_ids(const Batch& batch) {
    return {batch.inputs.begin(), batch.inputs.end()};
}

// Right-aligned position ids: column t of a window of length batch.max_len
// maps to row config.max_len - batch.max_len + t of the position table, so
// the most recent item always uses the last row.
std::vector<int> position_ids(const Batch& batch, const ModelConfig& config) {
    const int offset = config.max_len - batch.max_len;
    std::vector<int> ids(static_cast<std::size_t>(batch.batch_size) * batch.max_len);
    for (int r = 0; r < batch.batch_size; ++r)
        for (int t = 0; t < batch.max_len; ++t) ids[batch.idx(r, t)] = offset + t;
    return ids;
}

TensorPtr transformer_forward(const Batch& batch, const ModelParams& params, bool train_mode,
                              Rng* dropout_rng, bool causal) {
    const ModelConfig& cfg = params.config;
    if (batch.max_len > cfg.max_len)
        throw std::invalid_argument("forward: batch length exceeds the configured maximum");
    check(batch.batch_size >= 1, "forward: empty batch");
    if (train_mode && cfg.dropout_prob > 0 && dropout_rng == nullptr)
        throw std::invalid_argument("forward: train mode with dropout needs an rng");

    const int b = batch.batch_size, len = batch.max_len, d = cfg.hidden_size;
    const std::vector<int> fr = first_real_positions(batch);
    const real p = static_cast<real>(cfg.dropout_prob);

    auto x = add(embedding_rows(params.item_emb, input_ids(batch), {b, len, d}),
                 embedding_rows(params.pos_emb, position_ids(batch, cfg), {b, len, d}));
    if (train_mode && p > 0) x = dropout(x, p, *dropout_rng, true);

    for (const auto& blk : params.blocks) {
        auto q = linear(x, blk.wq, blk.bq);
        auto k = linear(x, blk.wk, blk.bk);
        auto v = linear(x, blk.wv, blk.bv);
        auto att = mha_attention(q, k, v, cfg.num_heads, causal, fr);
        att = linear(att, blk.wo, blk.bo);
        if (train_mode && p > 0) att = dropout(att, p, *dropout_rng, true);
        x = layer_norm_rows(add(x, att), blk.ln1_g, blk.ln1_b, kLayerNormEps);

        auto f = linear(relu(linear(x, blk.w1, blk.b1)), blk.w2, blk.b2);
        if (train_mode && p > 0) f = dropout(f, p, *dropout_rng, true);
        x = layer_norm_rows(add(x, f), blk.ln2_g, blk.ln2_b, kLayerNormEps);
    }
    return x;
}

}  // namespace

ArchKind parse_arch_kind(const std::string& name) {
    if (name == "sasrec") return ArchKind::sasrec;
    if (name == "bert4rec") return ArchKind::bert4rec;
    if (name == "gru4rec") return ArchKind::gru4rec;
    if (name == "bprmf") return ArchKind::bprmf;
    throw std::invalid_argument("unknown model kind: " + name);
}

std::string arch_kind_name(ArchKind k) {
    switch (k) {
        case ArchKind::sasrec: return "sasrec";
        case ArchKind::bert4rec: return "bert4rec";
        case ArchKind::gru4rec: return "gru4rec";
        case ArchKind::bprmf: return "bprmf";
    }
    return "?";
}

void ModelConfig::validate() const {
    if (num_items < 1) throw std::invalid_argument("model config: num_items must be >= 1");
    if (kind == ArchKind::bprmf) {
        if (factors < 1) throw std::invalid_argument("model config: factors must be >= 1");
        if (num_users < 1) throw std::invalid_argument("model config: num_users must be >= 1");
        return;
    }
    if (hidden_size < 1) throw std::invalid_argument("model config: hidden_size must be >= 1");
    if (max_len < 2) throw std::invalid_argument("model config: max_len must be >= 2");
    if (!(dropout_prob >= 0.0 && dropout_prob < 1.0))
        throw std::invalid_argument("model config: dropout_prob must be in [0, 1)");
    if (kind != ArchKind::gru4rec) {
        if (num_blocks < 1) throw std::invalid_argument("model config: num_blocks must be >= 1");
        if (num_heads < 1 || hidden_size % num_heads != 0)
            throw std::invalid_argument("model config: hidden_size must be divisible by num_heads");
    }
    if (kind == ArchKind::bert4rec && !(mask_prob > 0.0 && mask_prob < 1.0))
        throw std::invalid_argument("model config: mask_prob must be in (0, 1)");
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams m;
    m.config = config;
    Rng rng(mix_seed(seed, 0x1417));
    const int d = config.hidden_size, v2 = config.num_items + 2;

    if (config.kind == ArchKind::bprmf) {
        m.user_factors = init_normal({config.num_users + 1, config.factors}, rng);
        m.item_factors = init_normal({v2, config.factors}, rng);
        return m;
    }

    m.item_emb = init_normal({v2, d}, rng);
    if (config.kind == ArchKind::gru4rec) {
        m.gru_wz = init_normal({d, d}, rng);
        m.gru_uz = init_normal({d, d}, rng);
        m.gru_bz = init_const({d}, 0);
        m.gru_wr = init_normal({d, d}, rng);
        m.gru_ur = init_normal({d, d}, rng);
        m.gru_br = init_const({d}, 0);
        m.gru_wh = init_normal({d, d}, rng);
        m.gru_uh = init_normal({d, d}, rng);
        m.gru_bh = init_const({d}, 0);
        return m;
    }

    m.pos_emb = init_normal({config.max_len, d}, rng);
    m.blocks.resize(static_cast<std::size_t>(config.num_blocks));
    for (auto& blk : m.blocks) {
        blk.wq = init_normal({d, d}, rng);
        blk.bq = init_const({d}, 0);
        blk.wk = init_normal({d, d}, rng);
        blk.bk = init_const({d}, 0);
        blk.wv = init_normal({d, d}, rng);
        blk.bv = init_const({d}, 0);
        blk.wo = init_normal({d, d}, rng);
        blk.bo = init_const({d}, 0);
        blk.ln1_g = init_const({d}, 1);
        blk.ln1_b = init_const({d}, 0);
        blk.w1 = init_normal({d, d}, rng);
        blk.b1 = init_const({d}, 0);
        blk.w2 = init_normal({d, d}, rng);
        blk.b2 = init_const({d}, 0);
        blk.ln2_g = init_const({d}, 1);
        blk.ln2_b = init_const({d}, 0);
    }
    return m;
}

std::vector<std::pair<std::string, TensorPtr>> ModelParams::named() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    auto push = [&](const std::string& name, const TensorPtr& t) {
        if (t) out.emplace_back(name, t);
    };
    push("item_emb", item_emb);
    push("pos_emb", pos_emb);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& blk = blocks[i];
        const std::string pre = "block" + std::to_string(i) + ".";
        push(pre + "wq", blk.wq);
        push(pre + "bq", blk.bq);
        push(pre + "wk", blk.wk);
        push(pre + "bk", blk.bk);
        push(pre + "wv", blk.wv);
        push(pre + "bv", blk.bv);
        push(pre + "wo", blk.wo);
        push(pre + "bo", blk.bo);
        push(pre + "ln1_g", blk.ln1_g);
        push(pre + "ln1_b", blk.ln1_b);
        push(pre + "w1", blk.w1);
        push(pre + "b1", blk.b1);
        push(pre + "w2", blk.w2);
        push(pre + "b2", blk.b2);
        push(pre + "ln2_g", blk.ln2_g);
        push(pre + "ln2_b", blk.ln2_b);
    }
    push("gru_wz", gru_wz);
    push("gru_uz", gru_uz);
    push("gru_bz", gru_bz);
    push("gru_wr", gru_wr);
    push("gru_ur", gru_ur);
    push("gru_br", gru_br);
    push("gru_wh", gru_wh);
    push("gru_uh", gru_uh);
    push("gru_bh", gru_bh);
    push("user_factors", user_factors);
    push("item_factors", item_factors);
    return out;
}

std::vector<TensorPtr> ModelParams::trainable() const {
    std::vector<TensorPtr> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
}

std::int64_t ModelParams::parameter_count() const {
    std::int64_t n = 0;
    for (auto& [name, t] : named()) n += t->numel();
    return n;
}

ModelParams ModelParams::clone_values() const {
    ModelParams copy = init(config, 0);
    auto src = named();
    auto dst = copy.named();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].second->values = src[i].second->values;
    return copy;
}

void ModelParams::zero_grads() const {
    for (auto& t : trainable()) t->zero_grad();
}

std::int64_t expected_parameter_count(const ModelConfig& config) {
    const std::int64_t d = config.hidden_size;
    const std::int64_t v2 = config.num_items + 2;
    switch (config.kind) {
        case ArchKind::sasrec:
        case ArchKind::bert4rec:
            return (v2 + config.max_len) * d +
                   static_cast<std::int64_t>(config.num_blocks) * (6 * d * d + 10 * d);
        case ArchKind::gru4rec: return v2 * d + 6 * d * d + 3 * d;
        case ArchKind::bprmf:
            return (static_cast<std::int64_t>(config.num_users) + 1 + v2) * config.factors;
    }
    return 0;
}

TensorPtr sasrec_forward(const Batch& batch, const ModelParams& params, bool train_mode,
                         Rng* dropout_rng) {
    check(params.config.kind == ArchKind::sasrec, "sasrec_forward: wrong model kind");
    return transformer_forward(batch, params, train_mode, dropout_rng, /*causal=*/true);
}

TensorPtr bert4rec_forward(const Batch& batch, const ModelParams& params, bool train_mode,
                           Rng* dropout_rng) {
    check(params.config.kind == ArchKind::bert4rec, "bert4rec_forward: wrong model kind");
    return transformer_forward(batch, params, train_mode, dropout_rng, /*causal=*/false);
}

TensorPtr gru4rec_forward(const Batch& batch, const ModelParams& params, bool train_mode,
                          Rng* dropout_rng) {
    check(params.config.kind == ArchKind::gru4rec, "gru4rec_forward: wrong model kind");
    const ModelConfig& cfg = params.config;
    if (batch.max_len > cfg.max_len)
        throw std::invalid_argument("forward: batch length exceeds the configured maximum");
    if (train_mode && cfg.dropout_prob > 0 && dropout_rng == nullptr)
        throw std::invalid_argument("forward: train mode with dropout needs an rng");
    const int b = batch.batch_size, len = batch.max_len, d = cfg.hidden_size;
    const std::vector<int> fr = first_real_positions(batch);

    auto x = embedding_rows(params.item_emb, input_ids(batch), {b, len, d});
    if (train_mode && cfg.dropout_prob > 0)
        x = dropout(x, static_cast<real>(cfg.dropout_prob), *dropout_rng, true);
    return gru_layer(x, fr, params.gru_wz, params.gru_uz, params.gru_bz, params.gru_wr,
                     params.gru_ur, params.gru_br, params.gru_wh, params.gru_uh, params.gru_bh);
}

TensorPtr model_forward(const Batch& batch, const ModelParams& params, bool train_mode,
                        Rng* dropout_rng) {
    switch (params.config.kind) {
        case ArchKind::sasrec: return sasrec_forward(batch, params, train_mode, dropout_rng);
        case ArchKind::bert4rec: return bert4rec_forward(batch, params, train_mode, dropout_rng);
        case ArchKind::gru4rec: return gru4rec_forward(batch, params, train_mode, dropout_rng);
        case ArchKind::bprmf:
            throw std::invalid_argument("model_forward: bprmf has no sequence forward pass");
    }
    throw std::logic_error("model_forward: unreachable");
}

TensorPtr batch_loss(const ModelParams& params, const Batch& batch, const LossSpec& raw_spec,
                     const LeaveOneOutSplit& split, std::uint64_t negative_seed, bool train_mode,
                     Rng* dropout_rng) {
    const LossSpec spec = raw_spec.resolved();
    TensorPtr hidden = model_forward(batch, params, train_mode, dropout_rng);

    std::vector<std::int64_t> valid_rows;
    std::vector<int> targets;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(batch.valid.size()); ++i) {
        if (batch.valid[static_cast<std::size_t>(i)]) {
            valid_rows.push_back(i);
            targets.push_back(batch.targets[static_cast<std::size_t>(i)]);
        }
    }
    if (valid_rows.empty()) throw std::runtime_error("batch_loss: batch has no valid positions");
    TensorPtr h_valid = gather_rows(hidden, valid_rows);

    switch (spec.kind) {
        case LossKind::full_ce: return tied_ce_loss(h_valid, params.item_emb, targets);
        case LossKind::bce: {
            const auto negs =
                sample_negatives(batch, 1, spec.scope, negative_seed, split, spec.share_per_batch);
            const std::vector<int> neg_ids(negs.begin(), negs.end());
            auto pos_scores = gather_dot(h_valid, params.item_emb, targets);
            auto neg_scores = gather_dot(h_valid, params.item_emb, neg_ids);
            return bce_loss(pos_scores, neg_scores);
        }
        case LossKind::sampled_ce: {
            const int n = spec.num_negatives;
            const auto negs =
                sample_negatives(batch, n, spec.scope, negative_seed, split, spec.share_per_batch);
            std::vector<int> ids(targets.size() * static_cast<std::size_t>(n + 1));
            for (std::size_t i = 0; i < targets.size(); ++i) {
                ids[i * (n + 1)] = targets[i];
                for (int j = 0; j < n; ++j)
                    ids[i * (n + 1) + 1 + j] = negs[i * static_cast<std::size_t>(n) + j];
            }
            auto logits = gather_dot_multi(h_valid, params.item_emb, ids, n + 1);
            return sampled_ce_loss(logits, target_collision_mask(targets, negs, n));
        }
    }
    throw std::logic_error("batch_loss: unreachable");
}

std::vector<real> score_catalog(const std::vector<real>& hidden, const ModelParams& params) {
    const TensorPtr& table =
        params.config.kind == ArchKind::bprmf ? params.item_factors : params.item_emb;
    check(table != nullptr, "score_catalog: model has no item table");
    const int d = table->dim(1);
    check(static_cast<int>(hidden.size()) == d, "score_catalog: hidden width mismatch");
    const int catalog = params.config.num_items;
    std::vector<real> scores(static_cast<std::size_t>(catalog));
    const real* td = table->values.data();
    for (int i = 0; i < catalog; ++i) {
        const real* row = td + (static_cast<std::size_t>(i) + 1) * d;
        real acc = 0;
        for (int j = 0; j < d; ++j) acc += hidden[static_cast<std::size_t>(j)] * row[j];
        scores[static_cast<std::size_t>(i)] = acc;
    }
    return scores;
}

namespace {

// Builds one left-padded eval batch over the given context windows.
Batch eval_batch(const std::vector<std::vector<int>>& windows) {
    Batch b;
    b.batch_size = static_cast<int>(windows.size());
    int max_len = 1;
    for (const auto& w : windows) max_len = std::max(max_len, static_cast<int>(w.size()));
    b.max_len = max_len;
    b.inputs.assign(static_cast<std::size_t>(b.batch_size) * max_len, 0);
    b.targets.assign(b.inputs.size(), 0);
    b.valid.assign(b.inputs.size(), 0);
    b.users.assign(static_cast<std::size_t>(b.batch_size), 0);
    for (int r = 0; r < b.batch_size; ++r) {
        const auto& w = windows[static_cast<std::size_t>(r)];
        const int offset = max_len - static_cast<int>(w.size());
        for (std::size_t t = 0; t < w.size(); ++t)
            b.inputs[b.idx(r, offset + static_cast<int>(t))] = w[t];
    }
    return b;
}

// The model's readout window for a context: the last max_len items, or
// for bert4rec the last max_len-1 items plus the mask token.
std::vector<int> readout_window(const ModelParams& params, const std::vector<int>& user_items) {
    const ModelConfig& cfg = params.config;
    if (cfg.kind == ArchKind::bert4rec) {
        const std::size_t keep = static_cast<std::size_t>(cfg.max_len - 1);
        std::vector<int> w(user_items.end() - std::min(user_items.size(), keep), user_items.end());
        w.push_back(cfg.num_items + 1);
        return w;
    }
    const std::size_t keep = static_cast<std::size_t>(cfg.max_len);
    return {user_items.end() - std::min(user_items.size(), keep), user_items.end()};
}

}  // namespace

std::vector<std::vector<real>> score_contexts(const ModelParams& params,
                                              const std::vector<std::vector<int>>& contexts,
                                              const std::vector<int>& user_indices) {
    const ModelConfig& cfg = params.config;
    std::vector<std::vector<real>> out(contexts.size());

    if (cfg.kind == ArchKind::bprmf) {
        check(user_indices.size() == contexts.size(), "score_contexts: user indices required");
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            const int u = user_indices[i];
            if (u < 1 || u > cfg.num_users)
                throw std::invalid_argument("bprmf: unknown user " + std::to_string(u));
            const real* row = params.user_factors->values.data() +
                              static_cast<std::size_t>(u) * cfg.factors;
            out[i] = score_catalog({row, row + cfg.factors}, params);
        }
        return out;
    }

    NoGradGuard ng;
    const int chunk = 256;
    const int d = cfg.hidden_size;
    for (std::size_t start = 0; start < contexts.size(); start += chunk) {
        const std::size_t n = std::min(static_cast<std::size_t>(chunk), contexts.size() - start);
        std::vector<std::vector<int>> windows(n);
        for (std::size_t i = 0; i < n; ++i) {
            check(!contexts[start + i].empty(), "score_contexts: empty context");
            windows[i] = readout_window(params, contexts[start + i]);
        }
        const Batch b = eval_batch(windows);
        TensorPtr hidden = model_forward(b, params, /*train_mode=*/false, nullptr);
        for (std::size_t i = 0; i < n; ++i) {
            const real* last =
                hidden->values.data() + (i * b.max_len + (b.max_len - 1)) * static_cast<std::size_t>(d);
            out[start + i] = score_catalog({last, last + d}, params);
        }
    }
    return out;
}

std::vector<real> predict_scores(const ModelParams& params, const std::vector<int>& user_items,
                                 int user_index) {
    if (params.config.kind != ArchKind::bprmf)
        check(!user_items.empty(), "predict_scores: empty user history");
    return score_contexts(params, {user_items}, {user_index})[0];
}

std::vector<int> predict_next(const ModelParams& params, const std::vector<int>& user_items, int k,
                              int user_index) {
    check(k >= 1, "predict_next: k must be >= 1");
    const std::vector<real> scores = predict_scores(params, user_items, user_index);
    const int catalog = static_cast<int>(scores.size());
    std::vector<int> order(static_cast<std::size_t>(catalog));
    std::iota(order.begin(), order.end(), 0);
    const int take = std::min(k, catalog);
    std::partial_sort(order.begin(), order.begin() + take, order.end(), [&](int a, int b) {
        if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
            return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
        return a < b;
    });
    std::vector<int> items(static_cast<std::size_t>(take));
    for (int i = 0; i < take; ++i) items[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(i)] + 1;
    return items;
}

void bprmf_epoch(ModelParams& params, const LeaveOneOutSplit& split, double lr, double reg,
                 std::uint64_t epoch_seed) {
    check(params.config.kind == ArchKind::bprmf, "bprmf_epoch: wrong model kind");
    const int f = params.config.factors;
    const int catalog = split.num_items;
    Rng rng(mix_seed(epoch_seed, 0xb92f));

    std::vector<std::unordered_set<int>> history(static_cast<std::size_t>(split.num_users) + 1);
    std::int64_t total = 0;
    for (int u = 1; u <= split.num_users; ++u) {
        history[static_cast<std::size_t>(u)] = split.prefix_set(u);
        total += static_cast<std::int64_t>(split.train_prefix[static_cast<std::size_t>(u)].size());
    }

    real* uf = params.user_factors->values.data();
    real* itf = params.item_factors->values.data();
    std::vector<real> pu_old(static_cast<std::size_t>(f));
    for (std::int64_t step = 0; step < total; ++step) {
        const int u = static_cast<int>(1 + rng.below(split.num_users));
        const auto& prefix = split.train_prefix[static_cast<std::size_t>(u)];
        const int pos = prefix[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(prefix.size())))];
        const auto& excl = history[static_cast<std::size_t>(u)];
        if (static_cast<int>(excl.size()) >= catalog)
            throw std::runtime_error("bprmf_epoch: user history covers the catalog");
        int neg;
        do {
            neg = static_cast<int>(1 + rng.below(catalog));
        } while (excl.count(neg));

        real* pu = uf + static_cast<std::size_t>(u) * f;
        real* qi = itf + static_cast<std::size_t>(pos) * f;
        real* qj = itf + static_cast<std::size_t>(neg) * f;
        real diff = 0;
        for (int x = 0; x < f; ++x) diff += pu[x] * (qi[x] - qj[x]);
        const real e = sigmoid(-diff);  // d(-log sigmoid(diff))/d(diff) = -e
        std::copy(pu, pu + f, pu_old.begin());
        const real lr_r = static_cast<real>(lr), reg_r = static_cast<real>(reg);
        for (int x = 0; x < f; ++x) {
            pu[x] += lr_r * (e * (qi[x] - qj[x]) - reg_r * pu[x]);
            qi[x] += lr_r * (e * pu_old[x] - reg_r * qi[x]);
            qj[x] += lr_r * (-e * pu_old[x] - reg_r * qj[x]);
        }
    }
}

ModelParams bprmf_fit(const LeaveOneOutSplit& split, int factors, double lr, double reg,
                      int epochs, std::uint64_t seed) {
    check(factors >= 1, "bprmf_fit: factors must be >= 1");
    check(epochs >= 1, "bprmf_fit: epochs must be >= 1");
    ModelConfig cfg;
    cfg.kind = ArchKind::bprmf;
    cfg.factors = factors;
    cfg.num_items = split.num_items;
    cfg.num_users = split.num_users;
    ModelParams params = ModelParams::init(cfg, seed);
    for (int epoch = 1; epoch <= epochs; ++epoch)
        bprmf_epoch(params, split, lr, reg, mix_seed(seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
    return params;
}

}  // namespace seqrec
