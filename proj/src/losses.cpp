#include "seqrec/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "seqrec/ops.hpp"
#include "seqrec/parallel.hpp"

namespace seqrec {

namespace {

void check(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

real dot(const real* __restrict__ a, const real* __restrict__ b, int n) {
    real acc = 0;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(real alpha, const real* __restrict__ x, real* __restrict__ y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
    if (name == "bce") return LossKind::bce;
    if (name == "full_ce") return LossKind::full_ce;
    if (name == "sampled_ce") return LossKind::sampled_ce;
    throw std::invalid_argument("unknown loss kind: " + name);
}

std::string loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::bce: return "bce";
        case LossKind::full_ce: return "full_ce";
        case LossKind::sampled_ce: return "sampled_ce";
    }
    return "?";
}

NegativeScope parse_negative_scope(const std::string& name) {
    if (name == "exclude_target") return NegativeScope::exclude_target;
    if (name == "exclude_user_history") return NegativeScope::exclude_user_history;
    throw std::invalid_argument("unknown negative scope: " + name);
}

std::string negative_scope_name(NegativeScope s) {
    return s == NegativeScope::exclude_target ? "exclude_target" : "exclude_user_history";
}

LossSpec LossSpec::resolved() const {
    LossSpec r = *this;
    if (!r.scope_set) {
        r.scope = r.kind == LossKind::sampled_ce ? NegativeScope::exclude_target
                                                 : NegativeScope::exclude_user_history;
        r.scope_set = true;
    }
    return r;
}

void LossSpec::validate(int num_items) const {
    if (kind == LossKind::sampled_ce || kind == LossKind::bce) {
        if (num_negatives < 1) throw std::invalid_argument("loss: num_negatives must be >= 1");
        if (num_negatives >= num_items)
            throw std::invalid_argument("loss: num_negatives must be smaller than the catalog");
    }
}

TensorPtr bce_loss(const TensorPtr& pos_scores, const TensorPtr& neg_scores) {
    check(pos_scores && neg_scores, "bce_loss: null input");
    check(pos_scores->shape == neg_scores->shape, "bce_loss: shape mismatch");
    const std::size_t n = pos_scores->values.size();
    if (n == 0) throw std::invalid_argument("bce_loss: no valid positions");

    real total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        // -log sigmoid(p) = softplus(-p);  -log(1 - sigmoid(q)) = softplus(q)
        total += stable_softplus(-pos_scores->values[i]) + stable_softplus(neg_scores->values[i]);
    }
    auto out = Tensor::scalar(total / static_cast<real>(n));

    if (grad_enabled() && (pos_scores->requires_grad || neg_scores->requires_grad)) {
        out->requires_grad = true;
        out->parents = {pos_scores, neg_scores};
        Tensor* o = out.get();
        const TensorPtr p = pos_scores, q = neg_scores;
        out->backward_fn = [p, q, o, n] {
            const real g = o->grad[0] / static_cast<real>(n);
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) p->grad[i] += g * (sigmoid(p->values[i]) - real(1));
            }
            if (q->requires_grad) {
                q->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) q->grad[i] += g * sigmoid(q->values[i]);
            }
        };
    }
    return out;
}

TensorPtr full_ce_loss(const TensorPtr& logits, const std::vector<int>& targets) {
    check(logits != nullptr, "full_ce_loss: null input");
    check(logits->rank() == 2, "full_ce_loss: logits must be (rows, catalog)");
    const int rows = logits->dim(0), catalog = logits->dim(1);
    check(rows >= 1, "full_ce_loss: no valid positions");
    check(targets.size() == static_cast<std::size_t>(rows), "full_ce_loss: target count mismatch");
    for (int t : targets) {
        if (t < 1 || t > catalog) throw std::invalid_argument("full_ce_loss: target out of range");
    }

    auto lse = std::make_shared<std::vector<real>>(static_cast<std::size_t>(rows));
    real total = 0;
    for (int i = 0; i < rows; ++i) {
        const real* row = logits->values.data() + static_cast<std::size_t>(i) * catalog;
        real m = row[0];
        for (int j = 1; j < catalog; ++j) m = std::max(m, row[j]);
        real sum = 0;
        for (int j = 0; j < catalog; ++j) sum += std::exp(row[j] - m);
        const real l = m + std::log(sum);
        (*lse)[static_cast<std::size_t>(i)] = l;
        total += l - row[targets[static_cast<std::size_t>(i)] - 1];
    }
    auto out = Tensor::scalar(total / static_cast<real>(rows));

    if (grad_enabled() && logits->requires_grad) {
        out->requires_grad = true;
        out->parents = {logits};
        Tensor* o = out.get();
        auto tgt = std::make_shared<std::vector<int>>(targets);
        out->backward_fn = [logits, o, tgt, lse, rows, catalog] {
            logits->ensure_grad();
            const real g = o->grad[0] / static_cast<real>(rows);
            for (int i = 0; i < rows; ++i) {
                const real* row = logits->values.data() + static_cast<std::size_t>(i) * catalog;
                real* grow = logits->grad.data() + static_cast<std::size_t>(i) * catalog;
                const real l = (*lse)[static_cast<std::size_t>(i)];
                for (int j = 0; j < catalog; ++j) grow[j] += g * std::exp(row[j] - l);
                grow[(*tgt)[static_cast<std::size_t>(i)] - 1] -= g;
            }
        };
    }
    return out;
}

TensorPtr sampled_ce_loss(const TensorPtr& logits, const std::vector<std::uint8_t>& excluded) {
    check(logits != nullptr, "sampled_ce_loss: null input");
    check(logits->rank() == 2 && logits->dim(1) >= 2,
          "sampled_ce_loss: logits must be (rows, 1+negatives)");
    const int rows = logits->dim(0), cols = logits->dim(1);
    check(rows >= 1, "sampled_ce_loss: no valid positions");
    const int n_neg = cols - 1;
    check(excluded.size() == static_cast<std::size_t>(rows) * n_neg,
          "sampled_ce_loss: exclusion mask shape mismatch");

    auto lse = std::make_shared<std::vector<real>>(static_cast<std::size_t>(rows));
    real total = 0;
    std::int64_t degenerate = 0;
    for (int i = 0; i < rows; ++i) {
        const real* row = logits->values.data() + static_cast<std::size_t>(i) * cols;
        const std::uint8_t* ex = excluded.data() + static_cast<std::size_t>(i) * n_neg;
        real m = row[0];
        int live = 0;
        for (int j = 1; j < cols; ++j) {
            if (ex[j - 1]) continue;
            m = std::max(m, row[j]);
            ++live;
        }
        real sum = std::exp(row[0] - m);
        for (int j = 1; j < cols; ++j) {
            if (ex[j - 1]) continue;
            sum += std::exp(row[j] - m);
        }
        const real l = m + std::log(sum);
        (*lse)[static_cast<std::size_t>(i)] = l;
        total += l - row[0];
        if (live == 0) ++degenerate;  // loss is exactly 0 for such rows
    }
    if (degenerate > 0) {
        std::cerr << "sampled_ce_loss: " << degenerate
                  << " position(s) had every negative excluded; counted with loss 0\n";
    }
    auto out = Tensor::scalar(total / static_cast<real>(rows));

    if (grad_enabled() && logits->requires_grad) {
        out->requires_grad = true;
        out->parents = {logits};
        Tensor* o = out.get();
        auto ex_copy = std::make_shared<std::vector<std::uint8_t>>(excluded);
        out->backward_fn = [logits, o, ex_copy, lse, rows, cols, n_neg] {
            logits->ensure_grad();
            const real g = o->grad[0] / static_cast<real>(rows);
            for (int i = 0; i < rows; ++i) {
                const real* row = logits->values.data() + static_cast<std::size_t>(i) * cols;
                real* grow = logits->grad.data() + static_cast<std::size_t>(i) * cols;
                const std::uint8_t* ex = ex_copy->data() + static_cast<std::size_t>(i) * n_neg;
                const real l = (*lse)[static_cast<std::size_t>(i)];
                grow[0] += g * (std::exp(row[0] - l) - real(1));
                for (int j = 1; j < cols; ++j) {
                    if (ex[j - 1]) continue;
                    grow[j] += g * std::exp(row[j] - l);
                }
            }
        };
    }
    return out;
}

TensorPtr tied_ce_loss(const TensorPtr& hidden, const TensorPtr& embeddings,
                       const std::vector<int>& targets) {
    check(hidden && embeddings, "tied_ce_loss: null input");
    check(hidden->rank() == 2 && embeddings->rank() == 2, "tied_ce_loss: inputs must be rank 2");
    const int rows = hidden->dim(0), d = hidden->dim(1);
    check(rows >= 1, "tied_ce_loss: no valid positions");
    check(embeddings->dim(1) == d, "tied_ce_loss: width mismatch");
    const int catalog = embeddings->dim(0) - 2;  // rows 0 and V+1 are padding / mask
    check(catalog >= 1, "tied_ce_loss: embedding table too small");
    check(targets.size() == static_cast<std::size_t>(rows), "tied_ce_loss: target count mismatch");
    for (int t : targets) {
        if (t < 1 || t > catalog) throw std::invalid_argument("tied_ce_loss: target out of range");
    }

    const real* hd = hidden->values.data();
    const real* ed = embeddings->values.data();
    auto lse = std::make_shared<std::vector<real>>(static_cast<std::size_t>(rows));
    std::vector<real> row_loss(static_cast<std::size_t>(rows));
    parallel_for(static_cast<std::size_t>(rows), [&](int, std::size_t r0, std::size_t r1) {
        std::vector<real> logits(static_cast<std::size_t>(catalog));
        for (std::size_t i = r0; i < r1; ++i) {
            const real* hrow = hd + i * d;
            for (int j = 0; j < catalog; ++j)
                logits[static_cast<std::size_t>(j)] = dot(hrow, ed + (static_cast<std::size_t>(j) + 1) * d, d);
            real m = logits[0];
            for (int j = 1; j < catalog; ++j) m = std::max(m, logits[static_cast<std::size_t>(j)]);
            real sum = 0;
            for (int j = 0; j < catalog; ++j) sum += std::exp(logits[static_cast<std::size_t>(j)] - m);
            const real l = m + std::log(sum);
            (*lse)[i] = l;
            row_loss[i] = l - logits[static_cast<std::size_t>(targets[i]) - 1];
        }
    });
    real total = 0;
    for (real v : row_loss) total += v;
    auto out = Tensor::scalar(total / static_cast<real>(rows));

    if (grad_enabled() && (hidden->requires_grad || embeddings->requires_grad)) {
        out->requires_grad = true;
        out->parents = {hidden, embeddings};
        Tensor* o = out.get();
        auto tgt = std::make_shared<std::vector<int>>(targets);
        out->backward_fn = [hidden, embeddings, o, tgt, lse, rows, d, catalog] {
            const real g = o->grad[0] / static_cast<real>(rows);
            const real* hd2 = hidden->values.data();
            const real* ed2 = embeddings->values.data();
            if (hidden->requires_grad) hidden->ensure_grad();
            real* hg = hidden->requires_grad ? hidden->grad.data() : nullptr;
            const bool want_e = embeddings->requires_grad;
            // Recompute logits row by row (the full matrix is too large to
            // keep); chunk-local embedding-grad buffers, reduced in order.
            std::vector<std::vector<real>> ebufs;
            if (want_e) {
                embeddings->ensure_grad();
                ebufs.assign(kParallelChunks, std::vector<real>(embeddings->values.size(), real(0)));
            }
            parallel_for(static_cast<std::size_t>(rows), [&](int c, std::size_t r0, std::size_t r1) {
                real* ebuf = want_e ? ebufs[static_cast<std::size_t>(c)].data() : nullptr;
                for (std::size_t i = r0; i < r1; ++i) {
                    const real* hrow = hd2 + i * d;
                    real* hgrow = hg ? hg + i * d : nullptr;
                    const real l = (*lse)[i];
                    const int t = (*tgt)[i] - 1;
                    for (int j = 0; j < catalog; ++j) {
                        const real* erow = ed2 + (static_cast<std::size_t>(j) + 1) * d;
                        const real q = std::exp(dot(hrow, erow, d) - l);
                        const real coeff = g * (q - (j == t ? real(1) : real(0)));
                        if (hgrow) axpy(coeff, erow, hgrow, d);
                        if (ebuf) axpy(coeff, hrow, ebuf + (static_cast<std::size_t>(j) + 1) * d, d);
                    }
                }
            });
            if (want_e) {
                real* eg = embeddings->grad.data();
                const std::size_t n = embeddings->values.size();
                for (const auto& buf : ebufs) {
                    for (std::size_t i = 0; i < n; ++i) eg[i] += buf[i];
                }
            }
        };
    }
    return out;
}

std::vector<std::int32_t> sample_negatives(const Batch& batch, int num_negatives,
                                           NegativeScope scope, std::uint64_t seed,
                                           const LeaveOneOutSplit& split, bool share_per_batch) {
    check(num_negatives >= 1, "sample_negatives: num_negatives must be >= 1");
    const int catalog = split.num_items;
    check(catalog >= 1, "sample_negatives: empty catalog");

    std::vector<std::int64_t> valid_pos;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(batch.valid.size()); ++i)
        if (batch.valid[static_cast<std::size_t>(i)]) valid_pos.push_back(i);

    Rng rng(mix_seed(seed, 0x9e6a));
    std::vector<std::int32_t> out;
    out.reserve(valid_pos.size() * static_cast<std::size_t>(num_negatives));

    if (share_per_batch) {
        std::vector<std::int32_t> shared(static_cast<std::size_t>(num_negatives));
        for (auto& n : shared) n = static_cast<std::int32_t>(1 + rng.below(catalog));
        for (std::size_t k = 0; k < valid_pos.size(); ++k)
            out.insert(out.end(), shared.begin(), shared.end());
        return out;
    }

    if (scope == NegativeScope::exclude_target) {
        if (catalog < 2)
            throw std::runtime_error("sample_negatives: exclusion set covers the catalog");
        for (auto pos : valid_pos) {
            const std::int32_t target = batch.targets[static_cast<std::size_t>(pos)];
            for (int n = 0; n < num_negatives; ++n) {
                std::int32_t item;
                do {
                    item = static_cast<std::int32_t>(1 + rng.below(catalog));
                } while (item == target);
                out.push_back(item);
            }
        }
        return out;
    }

    // exclude_user_history: one exclusion set per batch row.
    std::unordered_map<int, std::unordered_set<int>> history;
    for (int r = 0; r < batch.batch_size; ++r) {
        const int u = batch.users[static_cast<std::size_t>(r)];
        if (!history.count(u)) {
            auto set = split.prefix_set(u);
            if (static_cast<int>(set.size()) >= catalog)
                throw std::runtime_error("sample_negatives: exclusion set covers the catalog");
            history.emplace(u, std::move(set));
        }
    }
    for (auto pos : valid_pos) {
        const int r = static_cast<int>(pos / batch.max_len);
        const auto& excl = history.at(batch.users[static_cast<std::size_t>(r)]);
        for (int n = 0; n < num_negatives; ++n) {
            std::int32_t item;
            do {
                item = static_cast<std::int32_t>(1 + rng.below(catalog));
            } while (excl.count(item));
            out.push_back(item);
        }
    }
    return out;
}

std::vector<std::uint8_t> target_collision_mask(const std::vector<int>& targets,
                                                const std::vector<std::int32_t>& negatives,
                                                int num_negatives) {
    check(num_negatives >= 1, "target_collision_mask: num_negatives must be >= 1");
    check(negatives.size() == targets.size() * static_cast<std::size_t>(num_negatives),
          "target_collision_mask: size mismatch");
    std::vector<std::uint8_t> mask(negatives.size(), 0);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        for (int n = 0; n < num_negatives; ++n) {
            const std::size_t k = i * static_cast<std::size_t>(num_negatives) + n;
            if (negatives[k] == targets[i]) mask[k] = 1;
        }
    }
    return mask;
}

}  // namespace seqrec
