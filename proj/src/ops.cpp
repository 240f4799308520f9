#include "seqrec/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

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

// Stable softmax of row[0..n) in place; returns nothing. Assumes n >= 1.
void softmax_inplace(real* row, int n) {
    real m = row[0];
    for (int i = 1; i < n; ++i) m = std::max(m, row[i]);
    real sum = 0;
    for (int i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - m);
        sum += row[i];
    }
    const real inv = real(1) / sum;
    for (int i = 0; i < n; ++i) row[i] *= inv;
}

bool any_requires_grad(const std::initializer_list<TensorPtr>& ts) {
    for (const auto& t : ts)
        if (t && t->requires_grad) return true;
    return false;
}

// Fixed-chunk accumulation buffers for gradients that many rows write to
// concurrently. Each parallel chunk owns one buffer; reduction happens in
// chunk order so results do not depend on the worker count.
struct ChunkAccum {
    std::vector<std::vector<real>> bufs;
    explicit ChunkAccum(std::size_t size) : bufs(kParallelChunks) {
        for (auto& b : bufs) b.assign(size, real(0));
    }
    void reduce_into(real* out) const {
        const std::size_t n = bufs[0].size();
        for (const auto& b : bufs) {
            for (std::size_t i = 0; i < n; ++i) out[i] += b[i];
        }
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Plain helpers
// ---------------------------------------------------------------------------

std::vector<real> softmax(const std::vector<real>& v) {
    check(!v.empty(), "softmax: empty input");
    for (real x : v) {
        if (!std::isfinite(x)) throw std::invalid_argument("softmax: non-finite input");
    }
    std::vector<real> out = v;
    softmax_inplace(out.data(), static_cast<int>(out.size()));
    return out;
}

std::vector<real> layer_norm(const std::vector<real>& x, const std::vector<real>& gain,
                             const std::vector<real>& shift, real eps) {
    check(x.size() == gain.size() && x.size() == shift.size(), "layer_norm: shape mismatch");
    check(!x.empty(), "layer_norm: empty input");
    check(eps >= 0, "layer_norm: negative eps");
    const int n = static_cast<int>(x.size());
    real mean = 0;
    for (real v : x) mean += v;
    mean /= n;
    real var = 0;
    for (real v : x) var += (v - mean) * (v - mean);
    var /= n;
    const real inv_std = real(1) / std::sqrt(var + eps);
    std::vector<real> out(x.size());
    for (int i = 0; i < n; ++i) out[i] = gain[i] * (x[i] - mean) * inv_std + shift[i];
    return out;
}

std::vector<real> gru_step(const std::vector<real>& x, const std::vector<real>& h_prev,
                           const GruStepParams& p) {
    const int in = static_cast<int>(x.size());
    const int hid = static_cast<int>(h_prev.size());
    check(in > 0 && hid > 0, "gru_step: empty input");
    check(p.wz.size() == static_cast<std::size_t>(in) * hid && p.uz.size() == static_cast<std::size_t>(hid) * hid &&
              p.bz.size() == static_cast<std::size_t>(hid),
          "gru_step: z gate shape mismatch");
    check(p.wr.size() == p.wz.size() && p.ur.size() == p.uz.size() && p.br.size() == p.bz.size(),
          "gru_step: r gate shape mismatch");
    check(p.wh.size() == p.wz.size() && p.uh.size() == p.uz.size() && p.bh.size() == p.bz.size(),
          "gru_step: candidate gate shape mismatch");

    auto gate = [&](const std::vector<real>& w, const std::vector<real>& u, const std::vector<real>& b,
                    const std::vector<real>& hin) {
        std::vector<real> a(b);
        for (int i = 0; i < in; ++i) axpy(x[i], w.data() + static_cast<std::size_t>(i) * hid, a.data(), hid);
        for (int i = 0; i < hid; ++i) axpy(hin[i], u.data() + static_cast<std::size_t>(i) * hid, a.data(), hid);
        return a;
    };
    std::vector<real> z = gate(p.wz, p.uz, p.bz, h_prev);
    std::vector<real> r = gate(p.wr, p.ur, p.br, h_prev);
    for (int i = 0; i < hid; ++i) {
        z[i] = sigmoid(z[i]);
        r[i] = sigmoid(r[i]);
    }
    std::vector<real> rh(hid);
    for (int i = 0; i < hid; ++i) rh[i] = r[i] * h_prev[i];
    std::vector<real> hc = gate(p.wh, p.uh, p.bh, rh);
    std::vector<real> h(hid);
    for (int i = 0; i < hid; ++i) {
        hc[i] = std::tanh(hc[i]);
        h[i] = (real(1) - z[i]) * h_prev[i] + z[i] * hc[i];
    }
    return h;
}

real stable_softplus(real x) {
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    return std::max(x, real(0)) + std::log1p(std::exp(-std::abs(x)));
}

real sigmoid(real x) {
    if (x >= 0) {
        const real e = std::exp(-x);
        return real(1) / (real(1) + e);
    }
    const real e = std::exp(x);
    return e / (real(1) + e);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check(a && b, "add: null input");
    check(a->shape == b->shape, "add: shape mismatch");
    auto out = Tensor::create(a->shape);
    const std::size_t n = a->values.size();
    for (std::size_t i = 0; i < n; ++i) out->values[i] = a->values[i] + b->values[i];
    if (grad_enabled() && any_requires_grad({a, b})) {
        out->requires_grad = true;
        out->parents = {a, b};
        Tensor* o = out.get();
        out->backward_fn = [a, b, o] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) b->grad[i] += o->grad[i];
            }
        };
    }
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check(a && b, "mul: null input");
    check(a->shape == b->shape, "mul: shape mismatch");
    auto out = Tensor::create(a->shape);
    const std::size_t n = a->values.size();
    for (std::size_t i = 0; i < n; ++i) out->values[i] = a->values[i] * b->values[i];
    if (grad_enabled() && any_requires_grad({a, b})) {
        out->requires_grad = true;
        out->parents = {a, b};
        Tensor* o = out.get();
        out->backward_fn = [a, b, o] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i] * b->values[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) b->grad[i] += o->grad[i] * a->values[i];
            }
        };
    }
    return out;
}

TensorPtr scale(const TensorPtr& a, real c) {
    check(a != nullptr, "scale: null input");
    auto out = Tensor::create(a->shape);
    for (std::size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] * c;
    if (grad_enabled() && a->requires_grad) {
        out->requires_grad = true;
        out->parents = {a};
        Tensor* o = out.get();
        out->backward_fn = [a, c, o] {
            a->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i] * c;
        };
    }
    return out;
}

TensorPtr relu(const TensorPtr& x) {
    check(x != nullptr, "relu: null input");
    auto out = Tensor::create(x->shape);
    for (std::size_t i = 0; i < x->values.size(); ++i)
        out->values[i] = x->values[i] > 0 ? x->values[i] : real(0);
    if (grad_enabled() && x->requires_grad) {
        out->requires_grad = true;
        out->parents = {x};
        Tensor* o = out.get();
        out->backward_fn = [x, o] {
            x->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i)
                if (x->values[i] > 0) x->grad[i] += o->grad[i];
        };
    }
    return out;
}

TensorPtr sum_all(const TensorPtr& x) {
    check(x != nullptr, "sum_all: null input");
    real s = 0;
    for (real v : x->values) s += v;
    auto out = Tensor::scalar(s);
    if (grad_enabled() && x->requires_grad) {
        out->requires_grad = true;
        out->parents = {x};
        Tensor* o = out.get();
        out->backward_fn = [x, o] {
            x->ensure_grad();
            const real g = o->grad[0];
            for (auto& gi : x->grad) gi += g;
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias) {
    check(x && w, "linear: null input");
    check(w->rank() == 2, "linear: weight must be rank 2");
    const int in = w->dim(0), out_dim = w->dim(1);
    check(x->rank() >= 1 && x->shape.back() == in, "linear: input width mismatch");
    if (bias) check(bias->numel() == out_dim, "linear: bias width mismatch");
    const std::size_t rows = x->values.size() / static_cast<std::size_t>(in);

    std::vector<int> out_shape = x->shape;
    out_shape.back() = out_dim;
    auto out = Tensor::create(std::move(out_shape));

    const real* xd = x->values.data();
    const real* wd = w->values.data();
    real* od = out->values.data();
    parallel_for(rows, [&](int, std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            real* y = od + r * out_dim;
            if (bias) std::memcpy(y, bias->values.data(), sizeof(real) * out_dim);
            const real* xr = xd + r * in;
            for (int i = 0; i < in; ++i) axpy(xr[i], wd + static_cast<std::size_t>(i) * out_dim, y, out_dim);
        }
    });

    if (grad_enabled() && any_requires_grad({x, w, bias})) {
        out->requires_grad = true;
        out->parents = bias ? std::vector<TensorPtr>{x, w, bias} : std::vector<TensorPtr>{x, w};
        Tensor* o = out.get();
        const TensorPtr b = bias;
        out->backward_fn = [x, w, b, o, in, out_dim, rows] {
            const real* gd = o->grad.data();
            const real* wd2 = w->values.data();
            if (x->requires_grad) {
                x->ensure_grad();
                real* xg = x->grad.data();
                parallel_for(rows, [&](int, std::size_t r0, std::size_t r1) {
                    for (std::size_t r = r0; r < r1; ++r) {
                        const real* gr = gd + r * out_dim;
                        real* xgr = xg + r * in;
                        for (int i = 0; i < in; ++i)
                            xgr[i] += dot(gr, wd2 + static_cast<std::size_t>(i) * out_dim, out_dim);
                    }
                });
            }
            if (w->requires_grad || (b && b->requires_grad)) {
                ChunkAccum wacc(w->requires_grad ? w->values.size() : 0);
                ChunkAccum bacc(b && b->requires_grad ? static_cast<std::size_t>(out_dim) : 0);
                const real* xd2 = x->values.data();
                parallel_for(rows, [&](int c, std::size_t r0, std::size_t r1) {
                    real* wbuf = w->requires_grad ? wacc.bufs[c].data() : nullptr;
                    real* bbuf = (b && b->requires_grad) ? bacc.bufs[c].data() : nullptr;
                    for (std::size_t r = r0; r < r1; ++r) {
                        const real* gr = gd + r * out_dim;
                        const real* xr = xd2 + r * in;
                        if (wbuf) {
                            for (int i = 0; i < in; ++i)
                                axpy(xr[i], gr, wbuf + static_cast<std::size_t>(i) * out_dim, out_dim);
                        }
                        if (bbuf) axpy(real(1), gr, bbuf, out_dim);
                    }
                });
                if (w->requires_grad) {
                    w->ensure_grad();
                    wacc.reduce_into(w->grad.data());
                }
                if (b && b->requires_grad) {
                    b->ensure_grad();
                    bacc.reduce_into(b->grad.data());
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm_rows
// ---------------------------------------------------------------------------

TensorPtr layer_norm_rows(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& shift, real eps) {
    check(x && gain && shift, "layer_norm_rows: null input");
    check(x->rank() >= 1, "layer_norm_rows: rank");
    const int d = x->shape.back();
    check(gain->numel() == d && shift->numel() == d, "layer_norm_rows: gain/shift width mismatch");
    check(eps >= 0, "layer_norm_rows: negative eps");
    const std::size_t rows = x->values.size() / static_cast<std::size_t>(d);

    auto out = Tensor::create(x->shape);
    auto inv_std = std::make_shared<std::vector<real>>(rows);
    auto means = std::make_shared<std::vector<real>>(rows);

    const real* xd = x->values.data();
    const real* gd = gain->values.data();
    const real* sd = shift->values.data();
    real* od = out->values.data();
    parallel_for(rows, [&](int, std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            const real* xr = xd + r * d;
            real mean = 0;
            for (int i = 0; i < d; ++i) mean += xr[i];
            mean /= d;
            real var = 0;
            for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
            var /= d;
            const real is = real(1) / std::sqrt(var + eps);
            (*means)[r] = mean;
            (*inv_std)[r] = is;
            real* orow = od + r * d;
            for (int i = 0; i < d; ++i) orow[i] = gd[i] * (xr[i] - mean) * is + sd[i];
        }
    });

    if (grad_enabled() && any_requires_grad({x, gain, shift})) {
        out->requires_grad = true;
        out->parents = {x, gain, shift};
        Tensor* o = out.get();
        out->backward_fn = [x, gain, shift, o, d, rows, inv_std, means] {
            const real* gd2 = o->grad.data();
            const real* xd2 = x->values.data();
            const real* gn = gain->values.data();
            ChunkAccum gacc(gain->requires_grad ? static_cast<std::size_t>(d) : 0);
            ChunkAccum sacc(shift->requires_grad ? static_cast<std::size_t>(d) : 0);
            if (x->requires_grad) x->ensure_grad();
            real* xg = x->requires_grad ? x->grad.data() : nullptr;
            parallel_for(rows, [&](int c, std::size_t r0, std::size_t r1) {
                std::vector<real> xhat(d), gy(d);
                for (std::size_t r = r0; r < r1; ++r) {
                    const real* xr = xd2 + r * d;
                    const real* gr = gd2 + r * d;
                    const real mean = (*means)[r];
                    const real is = (*inv_std)[r];
                    for (int i = 0; i < d; ++i) xhat[i] = (xr[i] - mean) * is;
                    if (gain->requires_grad) {
                        real* gb = gacc.bufs[c].data();
                        for (int i = 0; i < d; ++i) gb[i] += gr[i] * xhat[i];
                    }
                    if (shift->requires_grad) {
                        real* sb = sacc.bufs[c].data();
                        for (int i = 0; i < d; ++i) sb[i] += gr[i];
                    }
                    if (xg) {
                        real m1 = 0, m2 = 0;
                        for (int i = 0; i < d; ++i) {
                            gy[i] = gr[i] * gn[i];
                            m1 += gy[i];
                            m2 += gy[i] * xhat[i];
                        }
                        m1 /= d;
                        m2 /= d;
                        real* xgr = xg + r * d;
                        for (int i = 0; i < d; ++i) xgr[i] += (gy[i] - m1 - xhat[i] * m2) * is;
                    }
                }
            });
            if (gain->requires_grad) {
                gain->ensure_grad();
                gacc.reduce_into(gain->grad.data());
            }
            if (shift->requires_grad) {
                shift->ensure_grad();
                sacc.reduce_into(shift->grad.data());
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// embedding_rows
// ---------------------------------------------------------------------------

TensorPtr embedding_rows(const TensorPtr& table, const std::vector<int>& ids, std::vector<int> out_shape) {
    check(table != nullptr, "embedding_rows: null table");
    check(table->rank() == 2, "embedding_rows: table must be rank 2");
    const int num_rows = table->dim(0), d = table->dim(1);
    check(!out_shape.empty() && out_shape.back() == d, "embedding_rows: out shape width mismatch");
    check(shape_numel(out_shape) == static_cast<std::int64_t>(ids.size()) * d,
          "embedding_rows: out shape does not match id count");
    for (int id : ids) check(id >= 0 && id < num_rows, "embedding_rows: id out of range");

    auto out = Tensor::create(std::move(out_shape));
    const real* td = table->values.data();
    real* od = out->values.data();
    for (std::size_t k = 0; k < ids.size(); ++k) {
        std::memcpy(od + k * d, td + static_cast<std::size_t>(ids[k]) * d, sizeof(real) * d);
    }

    if (grad_enabled() && table->requires_grad) {
        out->requires_grad = true;
        out->parents = {table};
        Tensor* o = out.get();
        auto ids_copy = std::make_shared<std::vector<int>>(ids);
        out->backward_fn = [table, o, ids_copy, d] {
            table->ensure_grad();
            real* tg = table->grad.data();
            const real* gd = o->grad.data();
            for (std::size_t k = 0; k < ids_copy->size(); ++k) {
                axpy(real(1), gd + k * d, tg + static_cast<std::size_t>((*ids_copy)[k]) * d, d);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

TensorPtr dropout(const TensorPtr& x, real p, Rng& rng, bool train) {
    check(x != nullptr, "dropout: null input");
    check(p >= 0 && p < 1, "dropout: p must be in [0, 1)");
    if (!train || p == 0) return x;

    const real keep_scale = real(1) / (real(1) - p);
    auto mask = std::make_shared<std::vector<std::uint8_t>>(x->values.size());
    auto out = Tensor::create(x->shape);
    for (std::size_t i = 0; i < x->values.size(); ++i) {
        const bool keep = rng.next_double() >= p;
        (*mask)[i] = keep;
        out->values[i] = keep ? x->values[i] * keep_scale : real(0);
    }
    if (grad_enabled() && x->requires_grad) {
        out->requires_grad = true;
        out->parents = {x};
        Tensor* o = out.get();
        out->backward_fn = [x, o, mask, keep_scale] {
            x->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i)
                if ((*mask)[i]) x->grad[i] += o->grad[i] * keep_scale;
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// attention (single head, explicit mask)
// ---------------------------------------------------------------------------

TensorPtr attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                    const std::vector<std::uint8_t>& mask) {
    check(q && k && v, "attention: null input");
    check(q->rank() == 2 && k->rank() == 2 && v->rank() == 2, "attention: inputs must be rank 2");
    const int lq = q->dim(0), dk = q->dim(1);
    const int lk = k->dim(0), dv = v->dim(1);
    check(k->dim(1) == dk, "attention: query/key width mismatch");
    check(v->dim(0) == lk, "attention: key/value length mismatch");
    check(mask.size() == static_cast<std::size_t>(lq) * lk, "attention: mask shape mismatch");

    const real scl = real(1) / std::sqrt(static_cast<real>(dk));
    auto weights = std::make_shared<std::vector<real>>(static_cast<std::size_t>(lq) * lk, real(0));
    auto out = Tensor::create({lq, dv});

    for (int t = 0; t < lq; ++t) {
        const std::uint8_t* mrow = mask.data() + static_cast<std::size_t>(t) * lk;
        real m = 0;
        bool any = false;
        for (int j = 0; j < lk; ++j) {
            if (!mrow[j]) continue;
            const real s = dot(q->values.data() + static_cast<std::size_t>(t) * dk,
                               k->values.data() + static_cast<std::size_t>(j) * dk, dk) * scl;
            (*weights)[static_cast<std::size_t>(t) * lk + j] = s;
            m = any ? std::max(m, s) : s;
            any = true;
        }
        if (!any) throw std::invalid_argument("attention: fully masked row");
        real sum = 0;
        real* wrow = weights->data() + static_cast<std::size_t>(t) * lk;
        for (int j = 0; j < lk; ++j) {
            if (!mrow[j]) continue;
            wrow[j] = std::exp(wrow[j] - m);
            sum += wrow[j];
        }
        const real inv = real(1) / sum;
        real* orow = out->values.data() + static_cast<std::size_t>(t) * dv;
        for (int j = 0; j < lk; ++j) {
            if (!mrow[j]) continue;
            wrow[j] *= inv;
            axpy(wrow[j], v->values.data() + static_cast<std::size_t>(j) * dv, orow, dv);
        }
    }

    if (grad_enabled() && any_requires_grad({q, k, v})) {
        out->requires_grad = true;
        out->parents = {q, k, v};
        Tensor* o = out.get();
        auto mask_copy = std::make_shared<std::vector<std::uint8_t>>(mask);
        out->backward_fn = [q, k, v, o, weights, mask_copy, lq, lk, dk, dv, scl] {
            if (q->requires_grad) q->ensure_grad();
            if (k->requires_grad) k->ensure_grad();
            if (v->requires_grad) v->ensure_grad();
            std::vector<real> dlogit(lk);
            for (int t = 0; t < lq; ++t) {
                const real* gr = o->grad.data() + static_cast<std::size_t>(t) * dv;
                const real* wrow = weights->data() + static_cast<std::size_t>(t) * lk;
                const std::uint8_t* mrow = mask_copy->data() + static_cast<std::size_t>(t) * lk;
                real dot_ws = 0;
                for (int j = 0; j < lk; ++j) {
                    if (!mrow[j]) continue;
                    const real ds = dot(gr, v->values.data() + static_cast<std::size_t>(j) * dv, dv);
                    dlogit[j] = ds;
                    dot_ws += wrow[j] * ds;
                }
                for (int j = 0; j < lk; ++j) {
                    if (!mrow[j]) continue;
                    const real dl = wrow[j] * (dlogit[j] - dot_ws);
                    if (v->requires_grad)
                        axpy(wrow[j], gr, v->grad.data() + static_cast<std::size_t>(j) * dv, dv);
                    if (q->requires_grad)
                        axpy(dl * scl, k->values.data() + static_cast<std::size_t>(j) * dk,
                             q->grad.data() + static_cast<std::size_t>(t) * dk, dk);
                    if (k->requires_grad)
                        axpy(dl * scl, q->values.data() + static_cast<std::size_t>(t) * dk,
                             k->grad.data() + static_cast<std::size_t>(j) * dk, dk);
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// mha_attention
// ---------------------------------------------------------------------------

TensorPtr mha_attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v, int num_heads,
                        bool causal, const std::vector<int>& first_real) {
    check(q && k && v, "mha_attention: null input");
    check(q->rank() == 3, "mha_attention: inputs must be (batch, len, dim)");
    check(q->shape == k->shape && q->shape == v->shape, "mha_attention: shape mismatch");
    const int batch = q->dim(0), len = q->dim(1), d = q->dim(2);
    check(num_heads >= 1 && d % num_heads == 0, "mha_attention: dim not divisible by heads");
    check(first_real.size() == static_cast<std::size_t>(batch), "mha_attention: first_real size mismatch");
    for (int fr : first_real) check(fr >= 0 && fr <= len, "mha_attention: first_real out of range");

    const int dh = d / num_heads;
    const real scl = real(1) / std::sqrt(static_cast<real>(dh));
    const bool recording = grad_enabled() && any_requires_grad({q, k, v});
    auto out = Tensor::create(q->shape);

    // weights[(b*H + h)*len*len + t*len + j]
    std::shared_ptr<std::vector<real>> weights;
    if (recording)
        weights = std::make_shared<std::vector<real>>(
            static_cast<std::size_t>(batch) * num_heads * len * len, real(0));

    const real* qd = q->values.data();
    const real* kd = k->values.data();
    const real* vd = v->values.data();
    real* od = out->values.data();
    const std::size_t items = static_cast<std::size_t>(batch) * num_heads;

    parallel_for(items, [&](int, std::size_t i0, std::size_t i1) {
        std::vector<real> wrow_local(len);
        for (std::size_t it = i0; it < i1; ++it) {
            const int b = static_cast<int>(it) / num_heads;
            const int h = static_cast<int>(it) % num_heads;
            const int fr = first_real[b];
            const std::size_t base = (static_cast<std::size_t>(b) * len) * d + static_cast<std::size_t>(h) * dh;
            for (int t = fr; t < len; ++t) {
                const int j_end = causal ? t + 1 : len;
                const real* qrow = qd + base + static_cast<std::size_t>(t) * d;
                real m = 0;
                for (int j = fr; j < j_end; ++j) {
                    const real s = dot(qrow, kd + base + static_cast<std::size_t>(j) * d, dh) * scl;
                    wrow_local[j] = s;
                    m = (j == fr) ? s : std::max(m, s);
                }
                real sum = 0;
                for (int j = fr; j < j_end; ++j) {
                    wrow_local[j] = std::exp(wrow_local[j] - m);
                    sum += wrow_local[j];
                }
                const real inv = real(1) / sum;
                real* orow = od + base + static_cast<std::size_t>(t) * d;
                for (int j = fr; j < j_end; ++j) {
                    const real w = wrow_local[j] * inv;
                    wrow_local[j] = w;
                    axpy(w, vd + base + static_cast<std::size_t>(j) * d, orow, dh);
                }
                if (recording) {
                    real* wsave = weights->data() + (it * len + t) * len;
                    for (int j = fr; j < j_end; ++j) wsave[j] = wrow_local[j];
                }
            }
        }
    });

    if (recording) {
        out->requires_grad = true;
        out->parents = {q, k, v};
        Tensor* o = out.get();
        auto fr_copy = std::make_shared<std::vector<int>>(first_real);
        out->backward_fn = [q, k, v, o, weights, fr_copy, batch, len, d, num_heads, dh, scl, causal] {
            if (q->requires_grad) q->ensure_grad();
            if (k->requires_grad) k->ensure_grad();
            if (v->requires_grad) v->ensure_grad();
            const real* qd2 = q->values.data();
            const real* kd2 = k->values.data();
            const real* vd2 = v->values.data();
            real* qg = q->requires_grad ? q->grad.data() : nullptr;
            real* kg = k->requires_grad ? k->grad.data() : nullptr;
            real* vg = v->requires_grad ? v->grad.data() : nullptr;
            const real* gd = o->grad.data();
            const std::size_t items2 = static_cast<std::size_t>(batch) * num_heads;
            parallel_for(items2, [&](int, std::size_t i0, std::size_t i1) {
                std::vector<real> ds(len);
                for (std::size_t it = i0; it < i1; ++it) {
                    const int b = static_cast<int>(it) / num_heads;
                    const int h = static_cast<int>(it) % num_heads;
                    const int fr = (*fr_copy)[b];
                    const std::size_t base =
                        (static_cast<std::size_t>(b) * len) * d + static_cast<std::size_t>(h) * dh;
                    for (int t = fr; t < len; ++t) {
                        const int j_end = causal ? t + 1 : len;
                        const real* gr = gd + base + static_cast<std::size_t>(t) * d;
                        const real* wrow = weights->data() + (it * len + t) * len;
                        real dot_ws = 0;
                        for (int j = fr; j < j_end; ++j) {
                            ds[j] = dot(gr, vd2 + base + static_cast<std::size_t>(j) * d, dh);
                            dot_ws += wrow[j] * ds[j];
                        }
                        for (int j = fr; j < j_end; ++j) {
                            const real dl = wrow[j] * (ds[j] - dot_ws);
                            if (vg) axpy(wrow[j], gr, vg + base + static_cast<std::size_t>(j) * d, dh);
                            if (qg)
                                axpy(dl * scl, kd2 + base + static_cast<std::size_t>(j) * d,
                                     qg + base + static_cast<std::size_t>(t) * d, dh);
                            if (kg)
                                axpy(dl * scl, qd2 + base + static_cast<std::size_t>(t) * d,
                                     kg + base + static_cast<std::size_t>(j) * d, dh);
                        }
                    }
                }
            });
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// gru_layer
// ---------------------------------------------------------------------------

namespace {
// y[0..hid) += x[0..in) * W  with W row-major (in, hid)
void matvec_accum(const real* __restrict__ x, const real* __restrict__ w, real* __restrict__ y,
                  int in, int hid) {
    for (int i = 0; i < in; ++i) axpy(x[i], w + static_cast<std::size_t>(i) * hid, y, hid);
}
// y[0..in) += g[0..hid) * W^T
void matvec_t_accum(const real* __restrict__ g, const real* __restrict__ w, real* __restrict__ y,
                    int in, int hid) {
    for (int i = 0; i < in; ++i) y[i] += dot(g, w + static_cast<std::size_t>(i) * hid, hid);
}
}  // namespace

TensorPtr gru_layer(const TensorPtr& x, const std::vector<int>& first_real, const TensorPtr& wz,
                    const TensorPtr& uz, const TensorPtr& bz, const TensorPtr& wr,
                    const TensorPtr& ur, const TensorPtr& br, const TensorPtr& wh,
                    const TensorPtr& uh, const TensorPtr& bh) {
    check(x != nullptr, "gru_layer: null input");
    check(x->rank() == 3, "gru_layer: input must be (batch, len, dim)");
    const int batch = x->dim(0), len = x->dim(1), d = x->dim(2);
    check(first_real.size() == static_cast<std::size_t>(batch), "gru_layer: first_real size mismatch");
    for (const auto& t : {wz, uz, wr, ur, wh, uh})
        check(t && t->rank() == 2 && t->dim(0) == d && t->dim(1) == d, "gru_layer: weight shape mismatch");
    for (const auto& t : {bz, br, bh}) check(t && t->numel() == d, "gru_layer: bias shape mismatch");

    const bool recording =
        grad_enabled() && any_requires_grad({x, wz, uz, bz, wr, ur, br, wh, uh, bh});
    auto out = Tensor::create(x->shape);
    const std::size_t bl = static_cast<std::size_t>(batch) * len * d;
    auto saved_z = std::make_shared<std::vector<real>>(recording ? bl : 0);
    auto saved_r = std::make_shared<std::vector<real>>(recording ? bl : 0);
    auto saved_hc = std::make_shared<std::vector<real>>(recording ? bl : 0);

    const real* xd = x->values.data();
    real* od = out->values.data();
    parallel_for(static_cast<std::size_t>(batch), [&](int, std::size_t b0, std::size_t b1) {
        std::vector<real> h(d, real(0)), az(d), ar(d), ah(d), rh(d);
        for (std::size_t b = b0; b < b1; ++b) {
            std::fill(h.begin(), h.end(), real(0));
            for (int t = first_real[b]; t < len; ++t) {
                const std::size_t off = (b * len + t) * d;
                const real* xt = xd + off;
                std::memcpy(az.data(), bz->values.data(), sizeof(real) * d);
                matvec_accum(xt, wz->values.data(), az.data(), d, d);
                matvec_accum(h.data(), uz->values.data(), az.data(), d, d);
                std::memcpy(ar.data(), br->values.data(), sizeof(real) * d);
                matvec_accum(xt, wr->values.data(), ar.data(), d, d);
                matvec_accum(h.data(), ur->values.data(), ar.data(), d, d);
                for (int i = 0; i < d; ++i) {
                    az[i] = sigmoid(az[i]);
                    ar[i] = sigmoid(ar[i]);
                    rh[i] = ar[i] * h[i];
                }
                std::memcpy(ah.data(), bh->values.data(), sizeof(real) * d);
                matvec_accum(xt, wh->values.data(), ah.data(), d, d);
                matvec_accum(rh.data(), uh->values.data(), ah.data(), d, d);
                for (int i = 0; i < d; ++i) {
                    ah[i] = std::tanh(ah[i]);
                    h[i] = (real(1) - az[i]) * h[i] + az[i] * ah[i];
                }
                std::memcpy(od + off, h.data(), sizeof(real) * d);
                if (recording) {
                    std::memcpy(saved_z->data() + off, az.data(), sizeof(real) * d);
                    std::memcpy(saved_r->data() + off, ar.data(), sizeof(real) * d);
                    std::memcpy(saved_hc->data() + off, ah.data(), sizeof(real) * d);
                }
            }
        }
    });

    if (recording) {
        out->requires_grad = true;
        out->parents = {x, wz, uz, bz, wr, ur, br, wh, uh, bh};
        Tensor* o = out.get();
        auto fr_copy = std::make_shared<std::vector<int>>(first_real);
        out->backward_fn = [x, wz, uz, bz, wr, ur, br, wh, uh, bh, o, fr_copy, saved_z, saved_r,
                            saved_hc, batch, len, d] {
            for (const auto& t : {x, wz, uz, bz, wr, ur, br, wh, uh, bh})
                if (t->requires_grad) t->ensure_grad();
            const std::size_t msize = static_cast<std::size_t>(d) * d;
            // Chunk-local buffers for the shared weight grads; per-batch
            // dx rows are exclusive.
            ChunkAccum awz(msize), auz(msize), abz(static_cast<std::size_t>(d));
            ChunkAccum awr(msize), aur(msize), abr(static_cast<std::size_t>(d));
            ChunkAccum awh(msize), auh(msize), abh(static_cast<std::size_t>(d));
            const real* xd2 = x->values.data();
            const real* od2 = o->values.data();
            const real* gd = o->grad.data();
            real* xg = x->requires_grad ? x->grad.data() : nullptr;
            parallel_for(static_cast<std::size_t>(batch), [&](int c, std::size_t b0, std::size_t b1) {
                std::vector<real> dh(d), dhp(d), dz(d), dhc(d), dah(d), drh(d), dar(d), daz(d), rh(d);
                for (std::size_t b = b0; b < b1; ++b) {
                    const int fr = (*fr_copy)[b];
                    std::fill(dh.begin(), dh.end(), real(0));
                    for (int t = len - 1; t >= fr; --t) {
                        const std::size_t off = (b * len + t) * d;
                        const real* z = saved_z->data() + off;
                        const real* r = saved_r->data() + off;
                        const real* hc = saved_hc->data() + off;
                        const real* h_prev = (t - 1 >= fr) ? od2 + off - d : nullptr;
                        for (int i = 0; i < d; ++i) dh[i] += gd[off + i];
                        for (int i = 0; i < d; ++i) {
                            const real hp = h_prev ? h_prev[i] : real(0);
                            dz[i] = (hc[i] - hp) * dh[i];
                            dhc[i] = z[i] * dh[i];
                            dhp[i] = (real(1) - z[i]) * dh[i];
                            dah[i] = dhc[i] * (real(1) - hc[i] * hc[i]);
                            rh[i] = r[i] * hp;
                        }
                        // candidate gate
                        std::fill(drh.begin(), drh.end(), real(0));
                        matvec_t_accum(dah.data(), uh->values.data(), drh.data(), d, d);
                        for (int i = 0; i < d; ++i) {
                            const real hp = h_prev ? h_prev[i] : real(0);
                            dar[i] = drh[i] * hp * r[i] * (real(1) - r[i]);
                            dhp[i] += drh[i] * r[i];
                            daz[i] = dz[i] * z[i] * (real(1) - z[i]);
                        }
                        const real* xt = xd2 + off;
                        for (int i = 0; i < d; ++i) {
                            axpy(xt[i], dah.data(), awh.bufs[c].data() + static_cast<std::size_t>(i) * d, d);
                            axpy(rh[i], dah.data(), auh.bufs[c].data() + static_cast<std::size_t>(i) * d, d);
                            axpy(xt[i], dar.data(), awr.bufs[c].data() + static_cast<std::size_t>(i) * d, d);
                            axpy(xt[i], daz.data(), awz.bufs[c].data() + static_cast<std::size_t>(i) * d, d);
                            if (h_prev) {
                                axpy(h_prev[i], dar.data(), aur.bufs[c].data() + static_cast<std::size_t>(i) * d, d);
                                axpy(h_prev[i], daz.data(), auz.bufs[c].data() + static_cast<std::size_t>(i) * d, d);
                            }
                        }
                        axpy(real(1), dah.data(), abh.bufs[c].data(), d);
                        axpy(real(1), dar.data(), abr.bufs[c].data(), d);
                        axpy(real(1), daz.data(), abz.bufs[c].data(), d);
                        if (xg) {
                            real* xgr = xg + off;
                            matvec_t_accum(dah.data(), wh->values.data(), xgr, d, d);
                            matvec_t_accum(dar.data(), wr->values.data(), xgr, d, d);
                            matvec_t_accum(daz.data(), wz->values.data(), xgr, d, d);
                        }
                        // carry into h_{t-1}
                        matvec_t_accum(dar.data(), ur->values.data(), dhp.data(), d, d);
                        matvec_t_accum(daz.data(), uz->values.data(), dhp.data(), d, d);
                        std::swap(dh, dhp);
                    }
                }
            });
            if (wz->requires_grad) awz.reduce_into(wz->grad.data());
            if (uz->requires_grad) auz.reduce_into(uz->grad.data());
            if (bz->requires_grad) abz.reduce_into(bz->grad.data());
            if (wr->requires_grad) awr.reduce_into(wr->grad.data());
            if (ur->requires_grad) aur.reduce_into(ur->grad.data());
            if (br->requires_grad) abr.reduce_into(br->grad.data());
            if (wh->requires_grad) awh.reduce_into(wh->grad.data());
            if (uh->requires_grad) auh.reduce_into(uh->grad.data());
            if (bh->requires_grad) abh.reduce_into(bh->grad.data());
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// gather_rows / gather_dot / gather_dot_multi
// ---------------------------------------------------------------------------

TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::int64_t>& rows) {
    check(x != nullptr, "gather_rows: null input");
    check(x->rank() >= 2, "gather_rows: input must have rank >= 2");
    const int d = x->shape.back();
    const std::int64_t n_rows = x->numel() / d;
    for (auto r : rows) check(r >= 0 && r < n_rows, "gather_rows: row out of range");

    auto out = Tensor::create({static_cast<int>(rows.size()), d});
    const real* xd = x->values.data();
    real* od = out->values.data();
    for (std::size_t k = 0; k < rows.size(); ++k)
        std::memcpy(od + k * d, xd + static_cast<std::size_t>(rows[k]) * d, sizeof(real) * d);

    if (grad_enabled() && x->requires_grad) {
        out->requires_grad = true;
        out->parents = {x};
        Tensor* o = out.get();
        auto rows_copy = std::make_shared<std::vector<std::int64_t>>(rows);
        out->backward_fn = [x, o, rows_copy, d] {
            x->ensure_grad();
            real* xg = x->grad.data();
            const real* gd = o->grad.data();
            for (std::size_t k = 0; k < rows_copy->size(); ++k)
                axpy(real(1), gd + k * d, xg + static_cast<std::size_t>((*rows_copy)[k]) * d, d);
        };
    }
    return out;
}

TensorPtr gather_dot(const TensorPtr& h, const TensorPtr& table, const std::vector<int>& ids) {
    check(h && table, "gather_dot: null input");
    check(h->rank() == 2 && table->rank() == 2, "gather_dot: inputs must be rank 2");
    const int p = h->dim(0), d = h->dim(1);
    check(table->dim(1) == d, "gather_dot: width mismatch");
    check(ids.size() == static_cast<std::size_t>(p), "gather_dot: id count mismatch");
    const int t_rows = table->dim(0);
    for (int id : ids) check(id >= 0 && id < t_rows, "gather_dot: id out of range");

    auto out = Tensor::create({p});
    const real* hd = h->values.data();
    const real* td = table->values.data();
    for (int i = 0; i < p; ++i)
        out->values[i] = dot(hd + static_cast<std::size_t>(i) * d,
                             td + static_cast<std::size_t>(ids[i]) * d, d);

    if (grad_enabled() && any_requires_grad({h, table})) {
        out->requires_grad = true;
        out->parents = {h, table};
        Tensor* o = out.get();
        auto ids_copy = std::make_shared<std::vector<int>>(ids);
        out->backward_fn = [h, table, o, ids_copy, p, d] {
            const real* gd = o->grad.data();
            const real* hd2 = h->values.data();
            const real* td2 = table->values.data();
            if (h->requires_grad) {
                h->ensure_grad();
                for (int i = 0; i < p; ++i)
                    axpy(gd[i], td2 + static_cast<std::size_t>((*ids_copy)[i]) * d,
                         h->grad.data() + static_cast<std::size_t>(i) * d, d);
            }
            if (table->requires_grad) {
                table->ensure_grad();
                for (int i = 0; i < p; ++i)
                    axpy(gd[i], hd2 + static_cast<std::size_t>(i) * d,
                         table->grad.data() + static_cast<std::size_t>((*ids_copy)[i]) * d, d);
            }
        };
    }
    return out;
}

TensorPtr gather_dot_multi(const TensorPtr& h, const TensorPtr& table, const std::vector<int>& ids,
                           int m_cols) {
    check(h && table, "gather_dot_multi: null input");
    check(h->rank() == 2 && table->rank() == 2, "gather_dot_multi: inputs must be rank 2");
    check(m_cols >= 1, "gather_dot_multi: m_cols must be positive");
    const int p = h->dim(0), d = h->dim(1);
    check(table->dim(1) == d, "gather_dot_multi: width mismatch");
    check(ids.size() == static_cast<std::size_t>(p) * m_cols, "gather_dot_multi: id count mismatch");
    const int t_rows = table->dim(0);
    for (int id : ids) check(id >= 0 && id < t_rows, "gather_dot_multi: id out of range");

    auto out = Tensor::create({p, m_cols});
    const real* hd = h->values.data();
    const real* td = table->values.data();
    real* od = out->values.data();
    parallel_for(static_cast<std::size_t>(p), [&](int, std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            const real* hrow = hd + i * d;
            for (int m = 0; m < m_cols; ++m) {
                const int id = ids[i * m_cols + m];
                od[i * m_cols + m] = dot(hrow, td + static_cast<std::size_t>(id) * d, d);
            }
        }
    });

    if (grad_enabled() && any_requires_grad({h, table})) {
        out->requires_grad = true;
        out->parents = {h, table};
        Tensor* o = out.get();
        auto ids_copy = std::make_shared<std::vector<int>>(ids);
        out->backward_fn = [h, table, o, ids_copy, p, d, m_cols] {
            const real* gd = o->grad.data();
            const real* hd2 = h->values.data();
            const real* td2 = table->values.data();
            if (h->requires_grad) {
                h->ensure_grad();
                real* hg = h->grad.data();
                parallel_for(static_cast<std::size_t>(p), [&](int, std::size_t r0, std::size_t r1) {
                    for (std::size_t i = r0; i < r1; ++i) {
                        real* hgr = hg + i * d;
                        for (int m = 0; m < m_cols; ++m) {
                            const int id = (*ids_copy)[i * m_cols + m];
                            axpy(gd[i * m_cols + m], td2 + static_cast<std::size_t>(id) * d, hgr, d);
                        }
                    }
                });
            }
            if (table->requires_grad) {
                table->ensure_grad();
                ChunkAccum tacc(table->values.size());
                parallel_for(static_cast<std::size_t>(p), [&](int c, std::size_t r0, std::size_t r1) {
                    real* buf = tacc.bufs[c].data();
                    for (std::size_t i = r0; i < r1; ++i) {
                        const real* hrow = hd2 + i * d;
                        for (int m = 0; m < m_cols; ++m) {
                            const int id = (*ids_copy)[i * m_cols + m];
                            axpy(gd[i * m_cols + m], hrow, buf + static_cast<std::size_t>(id) * d, d);
                        }
                    }
                });
                tacc.reduce_into(table->grad.data());
            }
        };
    }
    return out;
}

}  // namespace seqrec
