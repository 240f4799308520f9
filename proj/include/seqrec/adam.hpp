#pragma once

#include <cstdint>
#include <vector>

#include "seqrec/tensor.hpp"

namespace seqrec {

/// Per-parameter Adam accumulator state.
struct AdamState {
    std::vector<real> first_moment;
    std::vector<real> second_moment;
    std::int64_t step_count = 0;
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real epsilon = real(1e-8);
};

/// One bias-corrected Adam step on param using param.grad. Moment arrays
/// are sized on first use. Throws if the gradient is missing or
/// shape-incongruent. Does not clear the gradient.
void adam_update(Tensor& param, AdamState& state, real lr);

/// Convenience wrapper driving one AdamState per parameter tensor.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<TensorPtr> params, real lr, real beta1 = real(0.9),
                  real beta2 = real(0.999), real epsilon = real(1e-8));

    void step();
    void zero_grad();

    const std::vector<AdamState>& states() const { return states_; }
    std::vector<AdamState>& states() { return states_; }
    real learning_rate() const { return lr_; }

private:
    std::vector<TensorPtr> params_;
    std::vector<AdamState> states_;
    real lr_;
};

}  // namespace seqrec
