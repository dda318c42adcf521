#include "maskdm/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "maskdm/errors.hpp"
#include "maskdm/objective.hpp"

namespace maskdm {

using compute::Graph;
using compute::Tensor;

void TrainStage::validate() const {
    const std::string where = "stage '" + name + "': ";
    if (steps < 1) {
        throw ConfigError(where + "steps must be >= 1");
    }
    if (batch_size < 1) {
        throw ConfigError(where + "batch_size must be >= 1");
    }
    if (!(lr > 0.0)) {
        throw ConfigError(where + "lr must be positive");
    }
    if (warmup_steps < 0) {
        throw ConfigError(where + "warmup_steps must be >= 0");
    }
    if (grad_clip && !(*grad_clip > 0.0)) {
        throw ConfigError(where + "grad_clip must be positive");
    }
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) {
        throw ConfigError(where + "ema_decay must lie in [0, 1)");
    }
    if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) {
        throw ConfigError(where + "hflip must lie in [0, 1]");
    }
}

void TrainPlan::validate() const {
    if (stages.empty()) {
        throw ConfigError("a plan needs at least one stage");
    }
    model.validate();
    const TokenGrid grid = model.grid();
    for (std::size_t i = 0; i < stages.size(); ++i) {
        stages[i].validate();
        if (stages[i].mask) {
            stages[i].mask->validate(grid);
        } else if (i + 1 != stages.size()) {
            throw ConfigError("the mask-free stage must be the last stage");
        }
    }
    make_schedule(schedule_for(0));
}

ScheduleConfig TrainPlan::schedule_for(std::size_t stage) const {
    ScheduleConfig out = schedule;
    out.kind = stages.at(stage).schedule;
    return out;
}

TrainState init_train_state(const TrainPlan& plan) {
    plan.validate();
    Rng rng(plan.seed);
    UViT<float> model = UViT<float>::init(plan.model, rng);
    compute::ParamSet<float> ema = model.params();
    AdamState<float> adam = AdamState<float>::zeros(model.params());
    return TrainState{std::move(model), std::move(ema), std::move(adam), std::move(rng), 0, 0};
}

namespace {

StepMetrics train_step(const TrainStage& stage, const NoiseSchedule& sched, TrainState& state,
                       const Dataset& data) {
    const std::int64_t step = state.step + 1;
    Rng& rng = state.rng;
    std::vector<std::size_t> indices(stage.batch_size);
    for (auto& idx : indices) {
        idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
    }
    Tensor<float> images = data.gather(indices);
    if (stage.hflip_prob > 0.0) {
        hflip(images, stage.hflip_prob, rng);
    }
    const UViTConfig& cfg = state.model.config();
    const LossBatch<float> batch = draw_loss_batch(std::move(images), sched, rng, stage.mask, cfg.grid());

    Graph<float> g;
    const compute::Var loss =
        stage.mask ? mdsm_loss(g, state.model, batch, sched) : dsm_loss(g, state.model, batch, sched);
    const double loss_value = g.value(loss).item();
    if (!std::isfinite(loss_value)) {
        throw NumericsError("step " + std::to_string(step) + " of stage '" + stage.name + "': non-finite loss");
    }
    compute::GradientMap<float> grads = g.backward(loss, state.model.params());
    const double norm = stage.grad_clip ? clip_gradients(grads, *stage.grad_clip) : grads.global_norm();
    if (!std::isfinite(norm)) {
        throw NumericsError("step " + std::to_string(step) + " of stage '" + stage.name +
                            "': non-finite gradient");
    }
    const double lr = warmup_lr(step, stage.lr, stage.warmup_steps);
    optimizer_step(state.model.params(), grads, state.adam, lr);
    ema_update(state.ema, state.model.params(), stage.ema_decay);
    state.step = step;
    return StepMetrics{step, loss_value, lr, norm};
}

void append_metrics(std::ostream& out, const StepMetrics& m) {
    char buf[128];
    const int len = std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g\n", static_cast<long long>(m.step),
                                  m.loss, m.lr, m.grad_norm);
    out.write(buf, len);
}

}  // namespace

std::vector<StepMetrics> run_stage(const TrainPlan& plan, TrainState& state, const Dataset& data,
                                   std::int64_t until, std::ostream* csv) {
    if (state.stage >= plan.stages.size()) {
        throw ContractError("run_stage: the plan has no stage " + std::to_string(state.stage));
    }
    if (data.size() == 0) {
        throw ContractError("run_stage: empty dataset");
    }
    const UViTConfig& cfg = state.model.config();
    if (data.channels() != cfg.channels || data.height() != cfg.image_h || data.width() != cfg.image_w) {
        throw ContractError("run_stage: dataset items " + compute::shape_string(data.items.shape()) +
                            " do not fit the model");
    }
    const TrainStage& stage = plan.stages[state.stage];
    const NoiseSchedule sched = make_schedule(plan.schedule_for(state.stage));
    const std::int64_t stop = until < 0 ? stage.steps : std::min(until, stage.steps);
    std::vector<StepMetrics> log;
    while (state.step < stop) {
        log.push_back(train_step(stage, sched, state, data));
        if (csv != nullptr) {
            append_metrics(*csv, log.back());
        }
    }
    if (csv != nullptr) {
        csv->flush();
    }
    return log;
}

bool stage_complete(const TrainPlan& plan, const TrainState& state) {
    return state.stage < plan.stages.size() && state.step >= plan.stages[state.stage].steps;
}

void advance_stage(const TrainPlan& plan, TrainState& state) {
    if (state.stage + 1 >= plan.stages.size()) {
        throw ContractError("advance_stage: already at the last stage");
    }
    state.stage += 1;
    state.step = 0;
    if (!plan.carry_optimizer) {
        state.adam = AdamState<float>::zeros(state.model.params());
    }
}

void write_metrics_header(std::ostream& out) { out << "step,loss,lr,grad_norm\n"; }

Checkpoint make_checkpoint(const TrainPlan& plan, const TrainState& state) {
    Checkpoint c;
    c.model = state.model.config();
    c.schedule = plan.schedule_for(std::min(state.stage, plan.stages.size() - 1));
    c.seed = plan.seed;
    c.stage = state.stage;
    c.step = state.step;
    c.rng_state = state.rng.state();
    c.params = state.model.params();
    c.ema = state.ema;
    c.adam = state.adam;
    return c;
}

TrainState restore_state(const Checkpoint& ckpt) {
    Rng rng;
    rng.set_state(ckpt.rng_state);
    return TrainState{UViT<float>(ckpt.model, ckpt.params), ckpt.ema, ckpt.adam, std::move(rng), ckpt.stage,
                      ckpt.step};
}

}  // namespace maskdm
