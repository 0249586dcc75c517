#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dmm/nn/autograd.hpp"
#include "dmm/random.hpp"

namespace dmm::nn {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Compares reverse-mode gradients of scalar `f()` against central differences
/// for every coordinate of `params`, or for `per_tensor` coordinates drawn
/// from `rng` in each tensor when that is nonzero. The relative error of one
/// coordinate is |a - n| / max(|a|, |n|, floor).
template <class F>
GradCheckResult grad_check(F&& f, std::vector<Tensor<double>>& params, double step = 1e-5, double floor = 1e-4,
                           std::size_t per_tensor = 0, Rng* rng = nullptr)
{
    const Tensor<double> y = f();
    const auto analytic = gradients(y, params);
    GradCheckResult r;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p].mutable_values();
        const auto a = analytic[p].values();
        std::vector<std::size_t> coords(w.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (per_tensor > 0 && rng && per_tensor < coords.size()) {
            for (std::size_t k = 0; k < per_tensor; ++k) {
                std::swap(coords[k], coords[k + rng->below(coords.size() - k)]);
            }
            coords.resize(per_tensor);
        }
        for (const std::size_t i : coords) {
            const double orig = w[i];
            w[i] = orig + step;
            const double plus = f().item();
            w[i] = orig - step;
            const double minus = f().item();
            w[i] = orig;
            const double numeric = (plus - minus) / (2.0 * step);
            const double err = std::abs(a[i] - numeric) / std::max({std::abs(a[i]), std::abs(numeric), floor});
            if (err > r.max_relative_error) {
                r = {err, p, i, a[i], numeric};
            }
        }
    }
    return r;
}

} // namespace dmm::nn
