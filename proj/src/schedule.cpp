#include "maskdm/schedule.hpp"

#include <cmath>
#include <numbers>

#include "maskdm/errors.hpp"

namespace maskdm {

using compute::Tensor;

std::string_view to_string(ScheduleKind kind) {
    return kind == ScheduleKind::linear ? "linear" : "cosine";
}

std::string_view to_string(SigmaKind kind) { return kind == SigmaKind::beta ? "beta" : "tilde_beta"; }

ScheduleKind parse_schedule_kind(std::string_view text) {
    if (text == "linear") {
        return ScheduleKind::linear;
    }
    if (text == "cosine") {
        return ScheduleKind::cosine;
    }
    throw ConfigError("unknown noise schedule '" + std::string(text) + "'");
}

SigmaKind parse_sigma_kind(std::string_view text) {
    if (text == "beta") {
        return SigmaKind::beta;
    }
    if (text == "tilde_beta") {
        return SigmaKind::tilde_beta;
    }
    throw ConfigError("unknown sigma kind '" + std::string(text) + "'");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::vector<double> beta, SigmaKind sigma)
    : kind_(kind), sigma_kind_(sigma), beta_(std::move(beta)) {
    if (beta_.empty()) {
        throw ConfigError("noise schedule needs at least one step");
    }
    alpha_.reserve(beta_.size());
    alpha_bar_.reserve(beta_.size());
    sigma_.reserve(beta_.size());
    double running = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
        const double b = beta_[i];
        if (!(b > 0.0 && b < 1.0)) {
            throw ConfigError("beta_" + std::to_string(i + 1) + " = " + std::to_string(b) +
                              " outside (0, 1)");
        }
        alpha_.push_back(1.0 - b);
        running *= 1.0 - b;
        alpha_bar_.push_back(running);
    }
    for (std::size_t i = 0; i < beta_.size(); ++i) {
        if (sigma_kind_ == SigmaKind::beta) {
            sigma_.push_back(std::sqrt(beta_[i]));
        } else {
            const double prev = i == 0 ? 1.0 : alpha_bar_[i - 1];
            sigma_.push_back(std::sqrt((1.0 - prev) / (1.0 - alpha_bar_[i]) * beta_[i]));
        }
    }
}

std::size_t NoiseSchedule::index(int t) const {
    if (t < 1 || t > steps()) {
        throw ContractError("timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
    }
    return static_cast<std::size_t>(t - 1);
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end, SigmaKind sigma) {
    if (steps < 1) {
        throw ConfigError("schedule steps must be >= 1");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("linear schedule needs 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> beta(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        beta[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
    }
    return NoiseSchedule(ScheduleKind::linear, std::move(beta), sigma);
}

NoiseSchedule make_cosine_schedule(int steps, double offset, SigmaKind sigma) {
    if (steps < 1) {
        throw ConfigError("schedule steps must be >= 1");
    }
    if (!(offset > 0.0)) {
        throw ConfigError("cosine schedule offset must be positive");
    }
    auto f = [&](int t) {
        const double c = std::cos((static_cast<double>(t) / steps + offset) / (1.0 + offset) *
                                  std::numbers::pi / 2.0);
        return c * c;
    };
    const double f0 = f(0);
    std::vector<double> beta(static_cast<std::size_t>(steps));
    double prev = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double cur = f(t) / f0;
        beta[static_cast<std::size_t>(t - 1)] = std::min(1.0 - cur / prev, 0.999);
        prev = cur;
    }
    return NoiseSchedule(ScheduleKind::cosine, std::move(beta), sigma);
}

NoiseSchedule make_schedule(const ScheduleConfig& config) {
    if (config.kind == ScheduleKind::linear) {
        return make_linear_schedule(config.steps, config.beta_start, config.beta_end, config.sigma);
    }
    return make_cosine_schedule(config.steps, config.cosine_offset, config.sigma);
}

template <typename T>
Tensor<T> forward_sample(const Tensor<T>& x0, const Tensor<T>& eps, int t, const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape()) {
        throw ShapeError("forward_sample: x0 " + compute::shape_string(x0.shape()) + " vs eps " +
                         compute::shape_string(eps.shape()));
    }
    const double ab = sched.alpha_bar(t);
    const T a = static_cast<T>(std::sqrt(ab));
    const T b = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * x0[i] + b * eps[i];
    }
    return out;
}

template <typename T>
Tensor<T> forward_step(const Tensor<T>& x_prev, const Tensor<T>& noise, int t, const NoiseSchedule& sched) {
    if (x_prev.shape() != noise.shape()) {
        throw ShapeError("forward_step: shape mismatch");
    }
    const T a = static_cast<T>(std::sqrt(sched.alpha(t)));
    const T b = static_cast<T>(std::sqrt(sched.beta(t)));
    Tensor<T> out(x_prev.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * x_prev[i] + b * noise[i];
    }
    return out;
}

template <typename T>
StepParams<T> posterior_step_params(const Tensor<T>& xt, const Tensor<T>& eps_pred, int t,
                                    const NoiseSchedule& sched) {
    if (xt.shape() != eps_pred.shape()) {
        throw ShapeError("posterior_step_params: shape mismatch");
    }
    const T coef = static_cast<T>(sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t)));
    const T inv_sqrt_alpha = static_cast<T>(1.0 / std::sqrt(sched.alpha(t)));
    StepParams<T> out{Tensor<T>(xt.shape()), sched.sigma(t)};
    for (std::size_t i = 0; i < xt.size(); ++i) {
        out.mean[i] = inv_sqrt_alpha * (xt[i] - coef * eps_pred[i]);
    }
    return out;
}

template Tensor<float> forward_sample(const Tensor<float>&, const Tensor<float>&, int, const NoiseSchedule&);
template Tensor<double> forward_sample(const Tensor<double>&, const Tensor<double>&, int, const NoiseSchedule&);
template Tensor<float> forward_step(const Tensor<float>&, const Tensor<float>&, int, const NoiseSchedule&);
template Tensor<double> forward_step(const Tensor<double>&, const Tensor<double>&, int, const NoiseSchedule&);
template StepParams<float> posterior_step_params(const Tensor<float>&, const Tensor<float>&, int,
                                                 const NoiseSchedule&);
template StepParams<double> posterior_step_params(const Tensor<double>&, const Tensor<double>&, int,
                                                  const NoiseSchedule&);

}  // namespace maskdm
