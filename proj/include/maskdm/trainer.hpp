#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "maskdm/checkpoint.hpp"
#include "maskdm/data.hpp"
#include "maskdm/masking.hpp"
#include "maskdm/model.hpp"
#include "maskdm/optim.hpp"
#include "maskdm/rng.hpp"
#include "maskdm/schedule.hpp"

namespace maskdm {

// One stage of a plan. A stage with a mask is masked pre-training (MDSM);
// without one it is denoising fine-tuning (DSM).
struct TrainStage {
    std::string name;
    std::optional<MaskSpec> mask;
    std::int64_t steps = 1000;
    std::size_t batch_size = 64;
    double lr = 1e-4;
    std::int64_t warmup_steps = 0;
    std::optional<double> grad_clip;
    ScheduleKind schedule = ScheduleKind::linear;
    double ema_decay = 0.999;
    double hflip_prob = 0.0;

    // Throws ConfigError.
    void validate() const;

    friend bool operator==(const TrainStage&, const TrainStage&) = default;
};

struct TrainPlan {
    std::vector<TrainStage> stages;
    UViTConfig model;
    // Shared schedule settings; each stage picks its own kind.
    ScheduleConfig schedule;
    std::uint64_t seed = 0;
    bool carry_optimizer = false;

    // Throws ConfigError unless there is at least one stage, every stage is
    // valid for the model's token grid, and a mask-free stage, if any, is the
    // only one and comes last.
    void validate() const;
    ScheduleConfig schedule_for(std::size_t stage) const;

    friend bool operator==(const TrainPlan&, const TrainPlan&) = default;
};

struct TrainState {
    UViT<float> model;
    compute::ParamSet<float> ema;
    AdamState<float> adam;
    Rng rng;
    std::size_t stage = 0;
    std::int64_t step = 0;  // completed iterations of the current stage
};

struct StepMetrics {
    std::int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
};

// Model initialised from Rng(plan.seed); the same rng then drives training.
TrainState init_train_state(const TrainPlan& plan);

// Runs iterations of the current stage until `until` (or the stage's step
// budget when negative) is reached. Each iteration draws a batch with
// replacement, flips, draws t / eps / masks, evaluates MDSM or DSM, clips,
// takes an Adam step at the warmed-up lr and updates the EMA. A non-finite
// loss or gradient throws NumericsError naming the step. When `csv` is given
// every step is appended as `step,loss,lr,grad_norm`.
std::vector<StepMetrics> run_stage(const TrainPlan& plan, TrainState& state, const Dataset& data,
                                   std::int64_t until = -1, std::ostream* csv = nullptr);

bool stage_complete(const TrainPlan& plan, const TrainState& state);
// Moves to the next stage; Adam moments reset unless plan.carry_optimizer.
void advance_stage(const TrainPlan& plan, TrainState& state);

void write_metrics_header(std::ostream& out);

Checkpoint make_checkpoint(const TrainPlan& plan, const TrainState& state);
TrainState restore_state(const Checkpoint& ckpt);

}  // namespace maskdm
