#pragma once

#include <optional>
#include <vector>

#include "maskdm/compute/graph.hpp"
#include "maskdm/masking.hpp"
#include "maskdm/model.hpp"
#include "maskdm/rng.hpp"
#include "maskdm/schedule.hpp"

namespace maskdm {

// Draws for one loss evaluation: clean images, per-sample steps and noise,
// and optionally one mask per sample.
template <typename T>
struct LossBatch {
    compute::Tensor<T> images;  // [B, C, H, W]
    std::vector<int> t;         // B steps in [1, T]
    compute::Tensor<T> eps;     // [B, C, H, W]
    std::vector<Mask> masks;    // empty, or one per sample
};

// t ~ U{1..T} for every sample, then eps ~ N(0, I), then (if requested) one
// mask per sample, all from `rng` in that order.
template <typename T>
LossBatch<T> draw_loss_batch(compute::Tensor<T> images, const NoiseSchedule& sched, Rng& rng,
                             const std::optional<MaskSpec>& mask, const TokenGrid& grid);

// Mean over all elements of (eps - eps_theta(x_t, t))^2. `params`, when given,
// replaces the model's own parameters (same layout).
template <typename T>
compute::Var dsm_loss(compute::Graph<T>& g, const UViT<T>& model, const LossBatch<T>& batch,
                      const NoiseSchedule& sched, const compute::ParamSet<T>* params = nullptr);

// Same regression restricted to each sample's visible tokens: the whole image
// is diffused, then only rows tau enter the model and the loss.
template <typename T>
compute::Var mdsm_loss(compute::Graph<T>& g, const UViT<T>& model, const LossBatch<T>& batch,
                       const NoiseSchedule& sched, const compute::ParamSet<T>* params = nullptr);

}  // namespace maskdm
