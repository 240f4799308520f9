#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "seqrec/common.hpp"

namespace seqrec {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

std::int64_t shape_numel(const std::vector<int>& shape);

/// Dense row-major array with an additively accumulated gradient and
/// reverse-mode tape links. Gradients are not cleared automatically;
/// callers zero them between optimizer steps.
///
/// A tensor produced by an op keeps shared ownership of its inputs and a
/// closure that scatters its own grad into theirs. backward() walks that
/// tape from a scalar root. A graph instance belongs to one logical
/// thread; parameter tensors may be shared read-only across graphs.
class Tensor {
public:
    std::vector<int> shape;
    std::vector<real> values;
    std::vector<real> grad;  // empty until needed; same length as values once allocated
    bool requires_grad = false;

    // Tape links; empty for leaves.
    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;

    Tensor() = default;
    Tensor(std::vector<int> s, bool rg)
        : shape(std::move(s)), values(static_cast<std::size_t>(shape_numel(shape)), real(0)), requires_grad(rg) {}

    static TensorPtr create(std::vector<int> shape, bool requires_grad = false) {
        return std::make_shared<Tensor>(std::move(shape), requires_grad);
    }
    static TensorPtr from_values(std::vector<int> shape, std::vector<real> vals, bool requires_grad = false);
    static TensorPtr scalar(real v, bool requires_grad = false);

    std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return values.size() == 1; }
    real scalar_value() const;

    /// Allocates (zero-filled) the gradient buffer if absent.
    void ensure_grad();
    void zero_grad();
    bool has_grad() const { return !grad.empty(); }
};

/// Whether ops on the calling thread record tape links. Off inside
/// NoGradGuard scopes (evaluation paths).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Reverse pass from a scalar root: seeds d(root)/d(root) = 1 and runs
/// each recorded closure once in reverse topological order, accumulating
/// into the grad of every reachable tensor with requires_grad set.
void backward(const TensorPtr& root);

}  // namespace seqrec
