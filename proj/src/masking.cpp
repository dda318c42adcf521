#include "maskdm/masking.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "maskdm/errors.hpp"

namespace maskdm {

using compute::Tensor;

TokenGrid TokenGrid::for_image(std::size_t height, std::size_t width, std::size_t patch) {
    if (patch == 0 || height % patch != 0 || width % patch != 0) {
        throw ConfigError("patch " + std::to_string(patch) + " does not divide image " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    return TokenGrid{height / patch, width / patch};
}

MaskSpec MaskSpec::parse(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos) {
        throw ConfigError("mask spec '" + std::string(text) + "' must be strategy:rate");
    }
    const std::string_view head = text.substr(0, colon);
    const std::string_view tail = text.substr(colon + 1);
    MaskSpec spec;
    if (head == "patch") {
        spec.strategy = MaskStrategy::patch;
    } else if (head == "crop") {
        spec.strategy = MaskStrategy::crop;
    } else if (head.starts_with("block")) {
        spec.strategy = MaskStrategy::block;
        const std::string_view digits = head.substr(5);
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), spec.block);
        if (digits.empty() || ec != std::errc{} || ptr != digits.data() + digits.size() || spec.block == 0) {
            throw ConfigError("bad block size in mask spec '" + std::string(text) + "'");
        }
    } else {
        throw ConfigError("unknown mask strategy '" + std::string(head) + "'");
    }
    auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), spec.rate);
    if (tail.empty() || ec != std::errc{} || ptr != tail.data() + tail.size()) {
        throw ConfigError("bad mask rate in '" + std::string(text) + "'");
    }
    if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
        throw ConfigError("mask rate must lie in [0, 1), got " + std::string(tail));
    }
    return spec;
}

std::string MaskSpec::to_string() const {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), rate);
    const std::string rate_text(buf, end);
    switch (strategy) {
        case MaskStrategy::patch: return "patch:" + rate_text;
        case MaskStrategy::block: return "block" + std::to_string(block) + ":" + rate_text;
        case MaskStrategy::crop: return "crop:" + rate_text;
    }
    return {};
}

void MaskSpec::validate(const TokenGrid& grid) const {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("mask rate must lie in [0, 1)");
    }
    if (strategy == MaskStrategy::block && (grid.rows % block != 0 || grid.cols % block != 0)) {
        throw ConfigError("block size " + std::to_string(block) + " does not divide the " +
                          std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " token grid");
    }
}

Mask::Mask(TokenGrid grid, std::vector<std::uint8_t> bits, MaskSpec spec)
    : grid_(grid), bits_(std::move(bits)), spec_(spec) {
    if (bits_.size() != grid_.n_tokens()) {
        throw ContractError("mask has " + std::to_string(bits_.size()) + " bits for " +
                            std::to_string(grid_.n_tokens()) + " tokens");
    }
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        if (bits_[i] != 0) {
            tau_.push_back(i);
        }
    }
    if (tau_.empty()) {
        throw FullMaskError("mask hides every token");
    }
}

Mask Mask::full(TokenGrid grid) {
    return Mask(grid, std::vector<std::uint8_t>(grid.n_tokens(), 1), MaskSpec{});
}

double Mask::achieved_rate() const noexcept {
    return 1.0 - static_cast<double>(tau_.size()) / static_cast<double>(grid_.n_tokens());
}

std::size_t masked_count(double rate, std::size_t n) {
    return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 0.5));
}

namespace {

void check_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("mask rate must lie in [0, 1)");
    }
}

// Uniformly chosen k-subset of [0, n), in increasing order.
std::vector<std::size_t> choose_subset(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> picked;
    picked.reserve(k);
    std::sample(all.begin(), all.end(), std::back_inserter(picked), k, rng.engine());
    return picked;
}

}  // namespace

Mask sample_patch_mask(const TokenGrid& grid, double rate, Rng& rng) {
    return sample_block_mask(grid, 1, rate, rng);
}

Mask sample_block_mask(const TokenGrid& grid, std::size_t block, double rate, Rng& rng) {
    MaskSpec spec{block == 1 ? MaskStrategy::patch : MaskStrategy::block, block, rate};
    check_rate(rate);
    spec.validate(grid);
    const std::size_t tile_rows = grid.rows / block;
    const std::size_t tile_cols = grid.cols / block;
    const std::size_t tiles = tile_rows * tile_cols;
    const std::size_t hidden = masked_count(rate, tiles);
    if (hidden >= tiles) {
        throw FullMaskError("mask rate " + std::to_string(rate) + " hides all " +
                            std::to_string(tiles) + " tiles");
    }
    std::vector<std::uint8_t> bits(grid.n_tokens(), 1);
    for (std::size_t tile : choose_subset(tiles, hidden, rng)) {
        const std::size_t r0 = (tile / tile_cols) * block;
        const std::size_t c0 = (tile % tile_cols) * block;
        for (std::size_t r = r0; r < r0 + block; ++r) {
            for (std::size_t c = c0; c < c0 + block; ++c) {
                bits[r * grid.cols + c] = 0;
            }
        }
    }
    return Mask(grid, std::move(bits), spec);
}

Mask sample_crop_mask(const TokenGrid& grid, double rate, Rng& rng) {
    check_rate(rate);
    const double area = (1.0 - rate) * static_cast<double>(grid.n_tokens());
    std::size_t side = static_cast<std::size_t>(std::floor(std::sqrt(area) + 0.5));
    side = std::clamp<std::size_t>(side, 1, std::min(grid.rows, grid.cols));
    const auto top = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(grid.rows - side)));
    const auto left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(grid.cols - side)));
    std::vector<std::uint8_t> bits(grid.n_tokens(), 0);
    for (std::size_t r = top; r < top + side; ++r) {
        for (std::size_t c = left; c < left + side; ++c) {
            bits[r * grid.cols + c] = 1;
        }
    }
    return Mask(grid, std::move(bits), MaskSpec{MaskStrategy::crop, 1, rate});
}

Mask sample_mask(const TokenGrid& grid, const MaskSpec& spec, Rng& rng) {
    switch (spec.strategy) {
        case MaskStrategy::patch: return sample_patch_mask(grid, spec.rate, rng);
        case MaskStrategy::block: return sample_block_mask(grid, spec.block, spec.rate, rng);
        case MaskStrategy::crop: return sample_crop_mask(grid, spec.rate, rng);
    }
    throw ConfigError("unknown mask strategy");
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& tokens, const Mask& mask) {
    if (tokens.rank() == 0 || tokens.dim(0) != mask.grid().n_tokens()) {
        throw ContractError("apply_mask: token sequence " + compute::shape_string(tokens.shape()) +
                            " for " + std::to_string(mask.grid().n_tokens()) + " tokens");
    }
    const std::size_t width = tokens.size() / tokens.dim(0);
    compute::Shape shape = tokens.shape();
    shape[0] = mask.visible();
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < mask.visible(); ++i) {
        std::copy_n(tokens.data().data() + mask.tau()[i] * width, width, out.data().data() + i * width);
    }
    return out;
}

template <typename T>
void scatter_visible(const Tensor<T>& visible, const Mask& mask, Tensor<T>& tokens) {
    if (tokens.rank() == 0 || tokens.dim(0) != mask.grid().n_tokens() || visible.rank() == 0 ||
        visible.dim(0) != mask.visible() ||
        visible.size() / visible.dim(0) != tokens.size() / tokens.dim(0)) {
        throw ContractError("scatter_visible: shape mismatch");
    }
    const std::size_t width = tokens.size() / tokens.dim(0);
    for (std::size_t i = 0; i < mask.visible(); ++i) {
        std::copy_n(visible.data().data() + i * width, width, tokens.data().data() + mask.tau()[i] * width);
    }
}

template <typename T>
Tensor<T> sinusoidal_position_table(const TokenGrid& grid, std::size_t dim) {
    // Half the width encodes the row, half the column; the time row stays zero.
    Tensor<T> table({grid.n_tokens() + 1, dim});
    const std::size_t half = dim / 2;
    const std::size_t quarter = std::max<std::size_t>(half / 2, 1);
    for (std::size_t tok = 0; tok < grid.n_tokens(); ++tok) {
        const double coords[2] = {static_cast<double>(tok / grid.cols), static_cast<double>(tok % grid.cols)};
        for (std::size_t axis = 0; axis < 2; ++axis) {
            for (std::size_t j = 0; j < quarter && axis * half + 2 * j + 1 < dim; ++j) {
                const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(quarter));
                table[tok * dim + axis * half + 2 * j] = static_cast<T>(std::sin(coords[axis] * freq));
                table[tok * dim + axis * half + 2 * j + 1] = static_cast<T>(std::cos(coords[axis] * freq));
            }
        }
    }
    return table;
}

template Tensor<float> apply_mask(const Tensor<float>&, const Mask&);
template Tensor<double> apply_mask(const Tensor<double>&, const Mask&);
template void scatter_visible(const Tensor<float>&, const Mask&, Tensor<float>&);
template void scatter_visible(const Tensor<double>&, const Mask&, Tensor<double>&);
template Tensor<float> sinusoidal_position_table(const TokenGrid&, std::size_t);
template Tensor<double> sinusoidal_position_table(const TokenGrid&, std::size_t);

}  // namespace maskdm
