#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "maskdm/compute/tensor.hpp"
#include "maskdm/masking.hpp"
#include "maskdm/model.hpp"
#include "maskdm/schedule.hpp"

namespace maskdm {

enum class SamplerKind { ddpm, ddim, em_sde };

std::string_view to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(std::string_view text);

// Image layout the sampler produces: [C, H, W] cut into patch x patch tokens.
struct SampleGeometry {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t patch = 1;

    TokenGrid grid() const { return TokenGrid::for_image(height, width, patch); }
    std::size_t token_dim() const { return patch * patch * channels; }
    static SampleGeometry of(const UViTConfig& config);
};

// eps_theta over visible tokens. tokens: [B, S, token_dim] at the shared
// grid indices tau; returns a tensor of the same shape.
template <typename T>
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual compute::Tensor<T> predict(const compute::Tensor<T>& tokens, std::span<const std::size_t> tau,
                                       int t) const = 0;
};

template <typename T>
class ModelPredictor final : public NoisePredictor<T> {
public:
    explicit ModelPredictor(const UViT<T>& model) : model_(model) {}
    compute::Tensor<T> predict(const compute::Tensor<T>& tokens, std::span<const std::size_t> tau,
                               int t) const override;

private:
    const UViT<T>& model_;
};

// Exact noise prediction when every element of x0 is independent
// N(mean, variance): x_t ~ N(sqrt(ab) mean, ab variance + 1 - ab), so
// eps = sqrt(1 - ab) (x_t - sqrt(ab) mean) / (ab variance + 1 - ab).
template <typename T>
class GaussianOracle final : public NoisePredictor<T> {
public:
    GaussianOracle(double mean, double variance, const NoiseSchedule& sched)
        : mean_(mean), variance_(variance), sched_(sched) {}
    compute::Tensor<T> predict(const compute::Tensor<T>& tokens, std::span<const std::size_t> tau,
                               int t) const override;

private:
    double mean_;
    double variance_;
    const NoiseSchedule& sched_;
};

struct SampleRequest {
    std::size_t n = 1;
    SamplerKind sampler = SamplerKind::ddpm;
    int steps = 0;  // ddim / em_sde step count; 0 means T
    std::optional<Mask> mask;
    std::uint64_t seed = 0;
    bool clip = true;          // clamp to [-1, 1] at emission
    double fill = 0.0;         // value of hidden patches in the output
    std::size_t batch = 64;    // samples per network call
    double ddpm_sigma_scale = 1.0;
};

// Draws request.n images [n, C, H, W]. Sample i owns the stream Rng(seed, i):
// it first draws the full-size x_T and then one full-size noise image per
// stochastic step; only visible tokens are kept, so hidden content never
// reaches the predictor. `initial` ([n, C, H, W]) replaces the drawn x_T.
template <typename T>
compute::Tensor<T> sample(const NoisePredictor<T>& predictor, const NoiseSchedule& sched,
                          const SampleGeometry& geometry, const SampleRequest& request,
                          const compute::Tensor<T>* initial = nullptr);

// Ancestral sampling: x_{t-1} = mu(x_t, t) + sigma_t z, no noise at t = 1.
template <typename T>
compute::Tensor<T> ddpm_sample(const NoisePredictor<T>& predictor, const NoiseSchedule& sched,
                               const SampleGeometry& geometry, SampleRequest request,
                               const compute::Tensor<T>* initial = nullptr);

// Deterministic DDIM on the timesteps returned by ddim_timesteps.
template <typename T>
compute::Tensor<T> ddim_sample(const NoisePredictor<T>& predictor, const NoiseSchedule& sched, int steps,
                               const SampleGeometry& geometry, SampleRequest request,
                               const compute::Tensor<T>* initial = nullptr);

// Euler-Maruyama on the reverse VP-SDE, s from 1 to 0 in `steps` equal steps;
// beta(s) interpolates T * beta_t linearly; the last step adds no noise.
template <typename T>
compute::Tensor<T> em_sde_sample(const NoisePredictor<T>& predictor, const NoiseSchedule& sched, int steps,
                                 const SampleGeometry& geometry, SampleRequest request,
                                 const compute::Tensor<T>* initial = nullptr);

// Reverse process restricted to the visible tokens of `mask`; hidden patches
// of the output equal request.fill.
template <typename T>
compute::Tensor<T> marginal_sample(const NoisePredictor<T>& predictor, const NoiseSchedule& sched,
                                   const Mask& mask, const SampleGeometry& geometry, SampleRequest request,
                                   const compute::Tensor<T>* initial = nullptr);

// 1, 1 + stride, ... with stride = T / steps; `steps` entries, ascending.
std::vector<int> ddim_timesteps(int total, int steps);

// Continuous-time beta(s) for s in [0, 1]: T times the linear interpolation
// of beta_t placed at s = t / T (clamped to beta_1 below s = 1 / T).
double continuous_beta(const NoiseSchedule& sched, double s);

}  // namespace maskdm
