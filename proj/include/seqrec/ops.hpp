#pragma once

#include <cstdint>
#include <vector>

#include "seqrec/common.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

// ---------------------------------------------------------------------------
// Plain numeric helpers (no tape). These are the reference surface for the
// corresponding differentiable ops below; both share the same kernels.
// ---------------------------------------------------------------------------

/// Numerically stable softmax (max subtraction). Throws on empty or
/// non-finite input.
std::vector<real> softmax(const std::vector<real>& v);

/// gain * (x - mean) / sqrt(var + eps) + shift, variance over the full
/// vector (population form). Throws on shape mismatch or eps < 0.
std::vector<real> layer_norm(const std::vector<real>& x, const std::vector<real>& gain,
                             const std::vector<real>& shift, real eps);

/// Parameters of one GRU cell. Matrices are row-major (input_dim x
/// hidden_dim) for w_*, (hidden_dim x hidden_dim) for u_*.
struct GruStepParams {
    std::vector<real> wz, uz, bz;
    std::vector<real> wr, ur, br;
    std::vector<real> wh, uh, bh;
};

/// One GRU recurrence step. Gate convention (fixed, documented):
///   z = sigmoid(x*wz + h_prev*uz + bz)
///   r = sigmoid(x*wr + h_prev*ur + br)
///   h_cand = tanh(x*wh + (r .* h_prev)*uh + bh)
///   h = (1 - z) .* h_prev + z .* h_cand
std::vector<real> gru_step(const std::vector<real>& x, const std::vector<real>& h_prev,
                           const GruStepParams& params);

real stable_softplus(real x);  // log(1 + exp(x)) without overflow
real sigmoid(real x);

// ---------------------------------------------------------------------------
// Differentiable ops. Each returns a fresh tensor; a backward closure is
// recorded when grad mode is on and some input requires grad.
// ---------------------------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, real c);
TensorPtr relu(const TensorPtr& x);
TensorPtr sum_all(const TensorPtr& x);

/// y = x @ w (+ bias). x is (..., in), w is (in, out) row-major,
/// bias is (out) or null.
TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias);

/// Layer norm over the last dimension of x, one (gain, shift) pair of that
/// width shared across rows.
TensorPtr layer_norm_rows(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& shift,
                          real eps);

/// Row gather from an embedding table: out row k = table row ids[k].
/// out_shape must end in the table width and match ids.size() rows.
TensorPtr embedding_rows(const TensorPtr& table, const std::vector<int>& ids,
                         std::vector<int> out_shape);

/// Inverted dropout: at train time keeps each element with probability
/// 1-p and scales by 1/(1-p); at eval time returns x unchanged.
TensorPtr dropout(const TensorPtr& x, real p, Rng& rng, bool train);

/// Single-head scaled dot-product attention with an explicit boolean mask
/// (Lq x Lk, nonzero = may attend); scale is 1/sqrt(dim). A row with no
/// permitted position is an error.
TensorPtr attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                    const std::vector<std::uint8_t>& mask);

/// Batched multi-head attention over (B, L, d) streams. Row t of batch b
/// attends keys in [first_real[b], t] when causal, [first_real[b], L)
/// otherwise; rows before first_real[b] (left padding) produce zeros and
/// are excluded as keys, so the padding embedding never reaches a real
/// position.
TensorPtr mha_attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v, int num_heads,
                        bool causal, const std::vector<int>& first_real);

/// Single GRU layer over (B, L, d) embedded inputs. State starts at zero;
/// positions before first_real[b] are skipped (state stays zero there).
TensorPtr gru_layer(const TensorPtr& x, const std::vector<int>& first_real, const TensorPtr& wz,
                    const TensorPtr& uz, const TensorPtr& bz, const TensorPtr& wr,
                    const TensorPtr& ur, const TensorPtr& br, const TensorPtr& wh,
                    const TensorPtr& uh, const TensorPtr& bh);

/// Selects rows of x viewed as (N, d): out row k = x row rows[k].
TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::int64_t>& rows);

/// out[k] = dot(h row k, table row ids[k]); h is (P, d).
TensorPtr gather_dot(const TensorPtr& h, const TensorPtr& table, const std::vector<int>& ids);

/// out[k][m] = dot(h row k, table row ids[k*m_cols + m]); out is (P, m_cols).
TensorPtr gather_dot_multi(const TensorPtr& h, const TensorPtr& table, const std::vector<int>& ids,
                           int m_cols);

}  // namespace seqrec
