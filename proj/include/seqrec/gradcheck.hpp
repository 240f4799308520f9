#pragma once

#include <functional>
#include <vector>

#include "seqrec/tensor.hpp"

namespace seqrec {

/// Compares reverse-mode gradients against central finite differences.
///
/// loss_fn must rebuild its computation from the current parameter values
/// and return the scalar loss tensor; it is invoked once for the analytic
/// pass (with the tape on) and twice per probed coordinate (tape off).
/// The function must be deterministic in the parameter values.
///
/// Returns the maximum over probed coordinates of
///   |analytic - central| / max(|analytic|, |central|, 1e-8).
/// If max_coords_per_param > 0, at most that many coordinates per
/// parameter are probed (chosen deterministically from seed); otherwise
/// every coordinate is probed. Throws if the loss is non-finite.
double finite_diff_check(const std::function<TensorPtr()>& loss_fn,
                         const std::vector<TensorPtr>& params, double h,
                         int max_coords_per_param = 0, std::uint64_t seed = 0x9d5fc0de);

}  // namespace seqrec
