#include "seqrec/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "seqrec/common.hpp"

namespace seqrec {

double finite_diff_check(const std::function<TensorPtr()>& loss_fn,
                         const std::vector<TensorPtr>& params, double h, int max_coords_per_param,
                         std::uint64_t seed) {
    if (h <= 0) throw std::invalid_argument("finite_diff_check: h must be positive");

    // Analytic pass.
    for (auto& p : params) p->zero_grad();
    TensorPtr loss = loss_fn();
    if (!loss || !loss->is_scalar()) throw std::invalid_argument("finite_diff_check: loss must be scalar");
    if (!std::isfinite(static_cast<double>(loss->scalar_value())))
        throw std::runtime_error("finite_diff_check: non-finite loss");
    backward(loss);

    std::vector<std::vector<real>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }

    const auto eval = [&]() -> double {
        NoGradGuard ng;
        const double v = static_cast<double>(loss_fn()->scalar_value());
        if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: non-finite loss");
        return v;
    };

    Rng rng(seed);
    double max_rel = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        const std::size_t n = p.values.size();
        std::vector<std::size_t> coords;
        if (max_coords_per_param > 0 && n > static_cast<std::size_t>(max_coords_per_param)) {
            // Deterministic sample without replacement.
            std::vector<std::size_t> all(n);
            for (std::size_t i = 0; i < n; ++i) all[i] = i;
            rng.shuffle(all);
            coords.assign(all.begin(), all.begin() + max_coords_per_param);
        } else {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        }
        for (std::size_t ci : coords) {
            const real orig = p.values[ci];
            p.values[ci] = orig + static_cast<real>(h);
            const double up = eval();
            p.values[ci] = orig - static_cast<real>(h);
            const double down = eval();
            p.values[ci] = orig;
            const double central = (up - down) / (2.0 * h);
            const double a = static_cast<double>(analytic[pi][ci]);
            const double denom = std::max({std::abs(a), std::abs(central), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - central) / denom);
        }
    }
    return max_rel;
}

}  // namespace seqrec
