#include "seednorm/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace seednorm {

bool DecayPolicy::decays(TensorRole role) const noexcept {
    switch (role) {
        case TensorRole::matrix: return matrix;
        case TensorRole::embedding: return embedding;
        case TensorRole::gamma: return gamma;
        case TensorRole::alpha: return alpha;
        case TensorRole::beta: return beta;
        case TensorRole::shift: return shift;
        case TensorRole::dyt_alpha: return dyt_alpha;
    }
    return false;
}

OptimizerState make_optimizer_state(const std::vector<TensorInfo>& layout,
                                    const DecayPolicy& policy) {
    OptimizerState s;
    for (const auto& t : layout) {
        s.m.emplace_back(t.size(), 0.0);
        s.v.emplace_back(t.size(), 0.0);
        s.decay.push_back(policy.decays(t.role));
    }
    return s;
}

void adamw_step(OptimizerState& state, std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads, const AdamWConfig& hyper) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw DimensionError("adamw: tensor count mismatch");
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params[t].size() != grads[t].size() || params[t].size() != state.m[t].size()) {
            throw DimensionError("adamw: size mismatch in tensor " + std::to_string(t));
        }
        for (double g : grads[t]) {
            if (!std::isfinite(g)) {
                throw std::invalid_argument("adamw: non-finite gradient in tensor " +
                                            std::to_string(t));
            }
        }
    }

    const std::uint64_t step = state.step + 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
    const double shrink = 1.0 - hyper.lr * hyper.weight_decay;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto w = params[t];
        const auto g = grads[t];
        Vector& m = state.m[t];
        Vector& v = state.v[t];
        const bool decay = state.decay[t];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            if (decay) w[i] *= shrink;
            w[i] -= hyper.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + hyper.eps);
        }
    }
    state.step = step;
    state.last_lr = hyper.lr;
}

double global_norm(std::span<const std::span<const double>> grads) {
    double sq = 0.0;
    for (auto g : grads) {
        for (double x : g) sq += x * x;
    }
    return std::sqrt(sq);
}

double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm) {
    std::vector<std::span<const double>> view(grads.begin(), grads.end());
    const double norm = global_norm(view);
    if (max_norm > 0.0 && norm > max_norm) {
        const double k = max_norm / norm;
        for (auto g : grads) {
            for (double& x : g) x *= k;
        }
    }
    return norm;
}

}  // namespace seednorm
