#include "seqrec/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace seqrec {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor shape has negative dimension");
        n *= d;
    }
    return n;
}

TensorPtr Tensor::from_values(std::vector<int> shape, std::vector<real> vals, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(vals.size())) {
        throw std::invalid_argument("tensor values do not match shape");
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values = std::move(vals);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::scalar(real v, bool requires_grad) {
    return from_values({}, {v}, requires_grad);
}

real Tensor::scalar_value() const {
    if (!is_scalar()) throw std::logic_error("scalar_value on non-scalar tensor");
    return values[0];
}

void Tensor::ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), real(0));
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), real(0));
}

namespace {
thread_local int g_no_grad_depth = 0;
}

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

void backward(const TensorPtr& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (!root->is_scalar()) throw std::invalid_argument("backward: root must be a scalar");

    // Iterative post-order DFS over parents.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn && (*it)->has_grad()) (*it)->backward_fn();
    }
}

}  // namespace seqrec
