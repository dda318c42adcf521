#include "maskdm/optim.hpp"

#include <cmath>

#include "maskdm/errors.hpp"

namespace maskdm {

using compute::GradientMap;
using compute::ParamSet;
using compute::Tensor;

template <typename T>
void ema_update(ParamSet<T>& ema, const ParamSet<T>& params, double decay) {
    if (ema.size() != params.size()) {
        throw ShapeError("ema and parameters differ in length");
    }
    const T keep = static_cast<T>(decay);
    const T take = static_cast<T>(1.0 - decay);
    for (std::size_t id = 0; id < params.size(); ++id) {
        auto dst = ema.tensor(id).data();
        const auto src = params.tensor(id).data();
        if (ema.tensor(id).shape() != params.tensor(id).shape()) {
            throw ShapeError("ema shape differs for " + params.name(id));
        }
        if (!params.trainable(id)) {
            std::copy(src.begin(), src.end(), dst.begin());
            continue;
        }
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = keep * dst[i] + take * src[i];
        }
    }
}

template <typename T>
double clip_gradients(GradientMap<T>& grads, double max_norm) {
    if (!(max_norm > 0.0)) {
        throw ContractError("clip_gradients: max_norm must be positive");
    }
    const double norm = grads.global_norm();
    if (norm > max_norm) {
        grads.scale(static_cast<T>(max_norm / norm));
    }
    return norm;
}

double warmup_lr(std::int64_t step, double base_lr, std::int64_t warmup_steps) {
    if (step < 1) {
        throw ContractError("warmup_lr: step must be >= 1");
    }
    if (warmup_steps <= 0 || step >= warmup_steps) {
        return base_lr;
    }
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

template <typename T>
AdamState<T> AdamState<T>::zeros(const ParamSet<T>& params) {
    AdamState state;
    for (std::size_t id = 0; id < params.size(); ++id) {
        state.m.emplace_back(params.tensor(id).shape());
        state.v.emplace_back(params.tensor(id).shape());
    }
    return state;
}

template <typename T>
void optimizer_step(ParamSet<T>& params, const GradientMap<T>& grads, AdamState<T>& state, double lr,
                    const AdamConfig& config) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("optimizer_step: parameter, gradient and moment counts differ");
    }
    state.step += 1;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
    const T step_size = static_cast<T>(lr / c1);
    const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
    const T eps = static_cast<T>(config.eps);
    const T decay = static_cast<T>(1.0 - lr * config.weight_decay);
    for (std::size_t id = 0; id < params.size(); ++id) {
        if (!params.trainable(id)) {
            continue;
        }
        auto p = params.tensor(id).data();
        const auto g = grads[id].data();
        auto m = state.m[id].data();
        auto v = state.v[id].data();
        if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
            throw ShapeError("optimizer_step: size mismatch for " + params.name(id));
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T denom = std::sqrt(v[i]) * inv_sqrt_c2 + eps;
            p[i] = decay * p[i] - step_size * m[i] / denom;
        }
    }
}

template void ema_update(ParamSet<float>&, const ParamSet<float>&, double);
template void ema_update(ParamSet<double>&, const ParamSet<double>&, double);
template double clip_gradients(GradientMap<float>&, double);
template double clip_gradients(GradientMap<double>&, double);
template struct AdamState<float>;
template struct AdamState<double>;
template void optimizer_step(ParamSet<float>&, const GradientMap<float>&, AdamState<float>&, double,
                             const AdamConfig&);
template void optimizer_step(ParamSet<double>&, const GradientMap<double>&, AdamState<double>&, double,
                             const AdamConfig&);

}  // namespace maskdm
