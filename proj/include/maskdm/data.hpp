#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskdm/compute/tensor.hpp"
#include "maskdm/rng.hpp"

namespace maskdm {

using Image = compute::Tensor<float>;  // [C, H, W], values in [-1, 1]

enum class DatasetKind { image_dir, raw_tensor_file, swissroll, textures };

std::string_view to_string(DatasetKind kind);

// In-memory dataset of equally shaped items, stored as [N, C, H, W].
struct Dataset {
    DatasetKind kind = DatasetKind::raw_tensor_file;
    compute::Tensor<float> items{compute::Shape{0, 1, 1, 1}};

    std::size_t size() const { return items.dim(0); }
    std::size_t channels() const { return items.dim(1); }
    std::size_t height() const { return items.dim(2); }
    std::size_t width() const { return items.dim(3); }

    // Rows `indices` stacked into [len, C, H, W].
    compute::Tensor<float> gather(std::span<const std::size_t> indices) const;
    Image item(std::size_t index) const;
};

// Wraps an [N, C, H, W] tensor, or an [N, 2] point set as N 1x1x2 images.
Dataset make_dataset(compute::Tensor<float> items, DatasetKind kind);
// A directory of .ppm files (sorted by name) or a raw tensor file.
Dataset load_dataset(const std::filesystem::path& path);

// Points on the 2-D Swiss roll scaled into [-1, 1]^2; returns [n, 2].
compute::Tensor<float> swiss_roll(std::size_t n, double noise_std, Rng& rng);
// Noise-free roll point for the curve parameter u in [0, 1].
std::pair<double, double> swiss_roll_point(double u);
inline constexpr double kSwissRollScale = 15.707963267948966;  // 5 pi

// Procedural oriented gratings in [-1, 1], one channel: class c has
// orientation pi*c/classes and base frequency 2 + 1.5c cycles per image;
// phase is uniform and frequency jitters by +-10% per image. Returns
// [n, 1, side, side]; `labels` (optional) receives the class of each image.
compute::Tensor<float> textures(std::size_t n, std::size_t side, std::size_t classes, Rng& rng,
                                std::vector<int>* labels = nullptr);

// Binary P6 with maxval 255. Loading maps bytes to [-1, 1] and always yields
// three channels; writing accepts one (replicated) or three channels.
Image load_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);
Image decode_ppm(std::string_view bytes);
std::string encode_ppm(const Image& image);

// Raw tensor file: "MDTN", u8 version 1, u8 dtype 0 (f32), u8 ndim, u8 pad,
// ndim little-endian u32 dims, little-endian row-major f32 payload.
compute::Tensor<float> load_raw_tensor(const std::filesystem::path& path);
void write_raw_tensor(const std::filesystem::path& path, const compute::Tensor<float>& tensor);
compute::Tensor<float> decode_raw_tensor(std::string_view bytes);
std::string encode_raw_tensor(const compute::Tensor<float>& tensor);

// Mirrors each [C, H, W] item of `batch` left-right with probability p, in place.
// Returns the number of flipped items.
std::size_t hflip(compute::Tensor<float>& batch, double p, Rng& rng);

// Separable bilinear resampling with half-pixel centers to out_side x out_side.
Image resize_bilinear(const Image& image, std::size_t out_side);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace maskdm
