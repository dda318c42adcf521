#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "maskdm/compute/graph.hpp"
#include "maskdm/model.hpp"
#include "maskdm/optim.hpp"
#include "maskdm/schedule.hpp"

namespace maskdm {

// Everything needed to resume training or to sample: the model and schedule
// echo, weights, EMA weights, Adam moments, rng state and stage cursor.
struct Checkpoint {
    UViTConfig model;
    ScheduleConfig schedule;
    std::uint64_t seed = 0;
    std::size_t stage = 0;
    std::int64_t step = 0;
    std::string rng_state;
    compute::ParamSet<float> params;
    compute::ParamSet<float> ema;
    AdamState<float> adam;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// "MDMC", u32 version 1, u32 header length, `key = value` header lines, then
// per tensor [u32 name length, name, u8 dtype 0, u32 ndim, u32 dims, f32
// payload], then a u64 tensor count. All integers little-endian. Tensors are
// stored as the parameters, then `ema/<name>`, `adam.m/<name>`, `adam.v/<name>`.
std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on any malformed, truncated or config-inconsistent input.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace maskdm
