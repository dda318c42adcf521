#pragma once

#include <cstdint>
#include <vector>

#include "maskdm/compute/graph.hpp"

namespace maskdm {

// ema <- decay * ema + (1 - decay) * params for trainable entries; frozen
// entries are copied.
template <typename T>
void ema_update(compute::ParamSet<T>& ema, const compute::ParamSet<T>& params, double decay);

// Rescales every gradient by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm before clipping.
template <typename T>
double clip_gradients(compute::GradientMap<T>& grads, double max_norm);

// base_lr * min(1, step / warmup_steps); warmup_steps = 0 means constant.
double warmup_lr(std::int64_t step, double base_lr, std::int64_t warmup_steps);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled
};

// First and second moments per parameter plus the update counter.
template <typename T>
struct AdamState {
    std::vector<compute::Tensor<T>> m;
    std::vector<compute::Tensor<T>> v;
    std::int64_t step = 0;

    static AdamState zeros(const compute::ParamSet<T>& params);

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam update of every trainable parameter.
template <typename T>
void optimizer_step(compute::ParamSet<T>& params, const compute::GradientMap<T>& grads, AdamState<T>& state,
                    double lr, const AdamConfig& config = {});

}  // namespace maskdm
