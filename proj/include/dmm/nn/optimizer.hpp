#pragma once

// Adaptive moment estimation with bias correction and global-norm clipping.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmm/nn/parameters.hpp"

namespace dmm::nn {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

template <class T>
struct OptimizerState {
    AdamConfig config;
    std::map<std::string, std::vector<T>> first_moment;
    std::map<std::string, std::vector<T>> second_moment;
    std::map<std::string, std::uint64_t> updates;  // per-parameter bias-correction counters
    std::uint64_t step = 0;
    double last_grad_norm = 0.0;
};

/// Applies one update from the store's gradient slots and clears them.
///
/// A parameter whose gradient is entirely zero is left untouched, moments
/// included, so a step with no signal is an exact no-op.
template <class T>
void optimizer_step(ParameterStore<T>& store, OptimizerState<T>& state)
{
    double sq = 0.0;
    for (const auto& [name, e] : store.entries()) {
        if (!e.has_grad) {
            throw ConfigError("missing gradient for parameter " + name);
        }
        for (const T g : e.grad) {
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    const double norm = std::sqrt(sq);
    state.last_grad_norm = norm;
    if (!std::isfinite(norm)) {
        throw NumericError("non-finite gradient norm");
    }
    const auto& c = state.config;
    const double clip = c.clip_norm > 0.0 && norm > c.clip_norm ? c.clip_norm / norm : 1.0;

    for (auto& [name, e] : store.entries()) {
        const bool any = std::any_of(e.grad.begin(), e.grad.end(), [](T g) { return g != T(0); });
        if (!any) {
            continue;
        }
        auto& m = state.first_moment[name];
        auto& v = state.second_moment[name];
        if (m.empty()) {
            m.assign(e.grad.size(), T(0));
            v.assign(e.grad.size(), T(0));
        }
        const auto t = static_cast<double>(++state.updates[name]);
        const double bc1 = 1.0 - std::pow(c.beta1, t);
        const double bc2 = 1.0 - std::pow(c.beta2, t);
        auto& w = e.value.mutable_values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double g = static_cast<double>(e.grad[i]) * clip;
            const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * g;
            const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = c.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + c.epsilon);
            w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
        }
    }
    ++state.step;
    store.clear_grad();
}

} // namespace dmm::nn
