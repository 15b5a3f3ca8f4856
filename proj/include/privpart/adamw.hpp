#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "privpart/nn.hpp"

namespace privpart {

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double learning_rate = 1e-3;
    double epsilon = 1e-8;
    int batch_size = 10;

    bool valid() const {
        return beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 &&
               weight_decay >= 0.0 && learning_rate > 0.0 && epsilon > 0.0 && batch_size >= 1;
    }
};

struct OptimizerState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::int64_t step_count = 0;
};

inline OptimizerState make_optimizer_state(std::size_t n) {
    OptimizerState s;
    s.first_moment.assign(n, 0.0);
    s.second_moment.assign(n, 0.0);
    return s;
}

// One AdamW update with decoupled weight decay:
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// with bias-corrected moments. The decay never enters the moments.
inline std::pair<ParamVector, OptimizerState> adamw_step(const ParamVector& params,
                                                         const std::vector<double>& grads,
                                                         OptimizerState state,
                                                         const OptimizerConfig& cfg) {
    if (!cfg.valid()) throw std::invalid_argument("adamw_step: invalid optimizer config");
    const std::size_t n = params.values.size();
    if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n)
        throw std::invalid_argument("adamw_step: shape mismatch");

    ParamVector out = params;
    const std::int64_t t = state.step_count + 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grads[i];
        const double m = cfg.beta1 * state.first_moment[i] + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * state.second_moment[i] + (1.0 - cfg.beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        out.values[i] -= cfg.learning_rate *
                         (m_hat / (std::sqrt(v_hat) + cfg.epsilon) + cfg.weight_decay * out.values[i]);
    }
    state.step_count = t;
    return {std::move(out), std::move(state)};
}

}  // namespace privpart
