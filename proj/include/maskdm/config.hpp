#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "maskdm/trainer.hpp"

namespace maskdm {

// A training run: the plan plus where data comes from and results go.
struct RunConfig {
    std::string model_preset = "tiny";
    TrainPlan plan;
    std::string dataset;
    std::string output = "out";
    std::int64_t checkpoint_every = 0;  // steps; 0 saves only at stage ends
    int threads = 1;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Line-oriented `key = value` text with `#` comments. Top-level keys set run,
// model and schedule options and act as defaults for every stage; `[stage n]`
// sections (n ascending) override stage keys. Without sections the top level
// describes a single stage. Unknown keys and invalid values throw ConfigError
// carrying the offending line number.
RunConfig parse_config_text(std::string_view text);
RunConfig parse_config(const std::filesystem::path& path);

// Fully resolved configuration in the same format; parses back to `config`.
std::string echo_config(const RunConfig& config);

}  // namespace maskdm
