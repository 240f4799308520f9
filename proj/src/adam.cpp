#include "seqrec/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace seqrec {

void adam_update(Tensor& param, AdamState& state, real lr) {
    if (!param.has_grad()) throw std::invalid_argument("adam_update: parameter has no gradient");
    if (param.grad.size() != param.values.size())
        throw std::invalid_argument("adam_update: gradient shape mismatch");
    if (state.first_moment.empty()) {
        state.first_moment.assign(param.values.size(), real(0));
        state.second_moment.assign(param.values.size(), real(0));
    }
    if (state.first_moment.size() != param.values.size())
        throw std::invalid_argument("adam_update: moment shape mismatch");

    state.step_count += 1;
    const real b1 = state.beta1, b2 = state.beta2;
    const real bc1 = real(1) - std::pow(b1, static_cast<real>(state.step_count));
    const real bc2 = real(1) - std::pow(b2, static_cast<real>(state.step_count));
    real* m = state.first_moment.data();
    real* v = state.second_moment.data();
    real* p = param.values.data();
    const real* g = param.grad.data();
    const std::size_t n = param.values.size();
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (real(1) - b1) * g[i];
        v[i] = b2 * v[i] + (real(1) - b2) * g[i] * g[i];
        const real m_hat = m[i] / bc1;
        const real v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
}

AdamOptimizer::AdamOptimizer(std::vector<TensorPtr> params, real lr, real beta1, real beta2,
                             real epsilon)
    : params_(std::move(params)), states_(params_.size()), lr_(lr) {
    for (auto& s : states_) {
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.epsilon = epsilon;
    }
}

void AdamOptimizer::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) adam_update(*params_[i], states_[i], lr_);
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

}  // namespace seqrec
