#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskdm/compute/tensor.hpp"
#include "maskdm/rng.hpp"

namespace maskdm {

// Token layout of an image cut into patch x patch squares, row-major.
struct TokenGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t n_tokens() const noexcept { return rows * cols; }

    static TokenGrid for_image(std::size_t height, std::size_t width, std::size_t patch);

    friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

enum class MaskStrategy { patch, block, crop };

// Parsed form of `patch:0.5`, `block2:0.5`, `crop:0.9`.
struct MaskSpec {
    MaskStrategy strategy = MaskStrategy::patch;
    std::size_t block = 1;
    double rate = 0.0;

    static MaskSpec parse(std::string_view text);
    std::string to_string() const;
    // Throws ConfigError if the spec cannot be applied to `grid`.
    void validate(const TokenGrid& grid) const;

    friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

// Binary visibility vector M (1 = visible) with its visible index sequence tau.
class Mask {
public:
    Mask(TokenGrid grid, std::vector<std::uint8_t> bits, MaskSpec spec);

    // Every token visible.
    static Mask full(TokenGrid grid);

    const TokenGrid& grid() const noexcept { return grid_; }
    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
    const std::vector<std::size_t>& tau() const noexcept { return tau_; }
    std::size_t visible() const noexcept { return tau_.size(); }
    const MaskSpec& spec() const noexcept { return spec_; }
    double requested_rate() const noexcept { return spec_.rate; }
    double achieved_rate() const noexcept;
    bool is_visible(std::size_t token) const { return bits_.at(token) != 0; }

    friend bool operator==(const Mask& a, const Mask& b) {
        return a.grid_ == b.grid_ && a.bits_ == b.bits_ && a.spec_ == b.spec_;
    }

private:
    TokenGrid grid_;
    std::vector<std::uint8_t> bits_;
    std::vector<std::size_t> tau_;
    MaskSpec spec_;
};

// Masked count round(m * n) with halves rounded up.
std::size_t masked_count(double rate, std::size_t n);

Mask sample_patch_mask(const TokenGrid& grid, double rate, Rng& rng);
Mask sample_block_mask(const TokenGrid& grid, std::size_t block, double rate, Rng& rng);
Mask sample_crop_mask(const TokenGrid& grid, double rate, Rng& rng);
Mask sample_mask(const TokenGrid& grid, const MaskSpec& spec, Rng& rng);

// Rows of `tokens` ([n_tokens, ...]) at tau, in order.
template <typename T>
compute::Tensor<T> apply_mask(const compute::Tensor<T>& tokens, const Mask& mask);

// Writes `visible` ([S, ...]) back into rows tau of `tokens`.
template <typename T>
void scatter_visible(const compute::Tensor<T>& visible, const Mask& mask, compute::Tensor<T>& tokens);

// Frozen 2-D sine/cosine table with n_tokens + 1 rows (last row: time token).
template <typename T>
compute::Tensor<T> sinusoidal_position_table(const TokenGrid& grid, std::size_t dim);

}  // namespace maskdm
