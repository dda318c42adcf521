#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskdm/compute/graph.hpp"
#include "maskdm/masking.hpp"
#include "maskdm/rng.hpp"

namespace maskdm {

enum class PositionalKind { learned, sinusoidal_frozen };

std::string_view to_string(PositionalKind kind);
PositionalKind parse_positional_kind(std::string_view text);

struct UViTConfig {
    std::size_t depth = 4;
    std::size_t dim = 64;
    std::size_t mlp_dim = 128;
    std::size_t heads = 4;
    std::size_t patch = 2;
    std::size_t channels = 3;
    std::size_t image_h = 16;
    std::size_t image_w = 16;
    PositionalKind positional = PositionalKind::learned;

    // `tiny`, `maskdm-s` or `maskdm-b`.
    static UViTConfig preset(std::string_view name);

    TokenGrid grid() const { return TokenGrid::for_image(image_h, image_w, patch); }
    std::size_t n_tokens() const { return grid().n_tokens(); }
    std::size_t token_dim() const { return patch * patch * channels; }
    // Throws ConfigError when the fields are inconsistent.
    void validate() const;

    friend bool operator==(const UViTConfig&, const UViTConfig&) = default;
};

// Sinusoidal timestep features [cos(t f_0..f_{h-1}), sin(t f_0..f_{h-1})],
// f_j = 10000^(-j/h), h = dim/2; an odd trailing slot is zero.
template <typename T>
std::vector<T> time_embedding(int t, std::size_t dim);

// Noise-prediction network over visible tokens plus one time token, with
// long skips pairing block k with block depth-1-k. The positional table
// holds n_tokens + 1 rows; the last row belongs to the time token.
template <typename T>
class UViT {
public:
    UViT(UViTConfig config, compute::ParamSet<T> params);

    // Truncated-normal(0.02) weights, zero biases, unit norms, zero output head.
    static UViT init(const UViTConfig& config, Rng& rng);

    const UViTConfig& config() const noexcept { return config_; }
    const compute::ParamSet<T>& params() const noexcept { return params_; }
    compute::ParamSet<T>& params() noexcept { return params_; }

    // tokens: [B*S, token_dim]; tau: B*S grid indices (sample-major);
    // t: B timesteps. Returns [B*S, token_dim] predictions aligned with tau.
    compute::Var forward(compute::Graph<T>& g, compute::Var tokens, std::span<const std::size_t> tau,
                         std::span<const int> t) const;

    // Same graph built against an external parameter set of identical layout
    // (used by gradient checks that perturb parameters in place).
    compute::Var forward_with(compute::Graph<T>& g, const compute::ParamSet<T>& params,
                              compute::Var tokens, std::span<const std::size_t> tau,
                              std::span<const int> t) const;

    std::size_t skip_partner(std::size_t block) const;  // npos when the block has no skip input

private:
    struct BlockIds {
        std::size_t norm1_w, norm1_b, q_w, q_b, k_w, v_w, v_b, proj_w, proj_b;
        std::size_t norm2_w, norm2_b, fc1_w, fc1_b, fc2_w, fc2_b;
        std::size_t skip_w = compute::npos, skip_b = compute::npos;
    };

    void bind_ids();

    UViTConfig config_;
    compute::ParamSet<T> params_;
    std::size_t embed_w_ = 0, embed_b_ = 0, pos_ = 0;
    std::size_t time1_w_ = 0, time1_b_ = 0, time2_w_ = 0, time2_b_ = 0;
    std::size_t norm_w_ = 0, norm_b_ = 0, head_w_ = 0, head_b_ = 0;
    std::vector<BlockIds> blocks_;
};

// Expected parameter names and shapes for a configuration, in storage order.
std::vector<std::pair<std::string, compute::Shape>> uvit_layout(const UViTConfig& config);

// Inference helper. tokens: [B, S, token_dim]; tau: S shared indices or
// B*S per-sample indices; t: one timestep for all samples or one per sample.
template <typename T>
compute::Tensor<T> predict_noise(const UViT<T>& model, const compute::Tensor<T>& tokens,
                                 std::span<const std::size_t> tau, std::span<const int> t);

// Image [C, H, W] -> tokens [n_tokens, patch*patch*C], row-major token order,
// each token flattened as (py, px, c).
template <typename T>
compute::Tensor<T> patchify(const compute::Tensor<T>& image, std::size_t patch);

// Inverse of patchify. When `mask` is given, `tokens` holds only the visible
// rows (in tau order) and hidden patches are set to `fill`.
template <typename T>
compute::Tensor<T> unpatchify(const compute::Tensor<T>& tokens, std::size_t channels, std::size_t height,
                              std::size_t width, std::size_t patch, T fill = T(0),
                              const Mask* mask = nullptr);

extern template class UViT<float>;
extern template class UViT<double>;

}  // namespace maskdm
