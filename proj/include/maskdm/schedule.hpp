#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "maskdm/compute/tensor.hpp"

namespace maskdm {

enum class ScheduleKind { linear, cosine };
// Reverse-step standard deviation: sqrt(beta_t) or the posterior sqrt(tilde beta_t).
enum class SigmaKind { beta, tilde_beta };

std::string_view to_string(ScheduleKind kind);
std::string_view to_string(SigmaKind kind);
ScheduleKind parse_schedule_kind(std::string_view text);
SigmaKind parse_sigma_kind(std::string_view text);

struct ScheduleConfig {
    ScheduleKind kind = ScheduleKind::linear;
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double cosine_offset = 0.008;
    SigmaKind sigma = SigmaKind::beta;

    friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

// Discrete diffusion coefficients for t = 1..T. Accessors take the 1-based
// step index; alpha_bar(0) is defined as 1.
class NoiseSchedule {
public:
    NoiseSchedule(ScheduleKind kind, std::vector<double> beta, SigmaKind sigma = SigmaKind::beta);

    int steps() const noexcept { return static_cast<int>(beta_.size()); }
    ScheduleKind kind() const noexcept { return kind_; }
    SigmaKind sigma_kind() const noexcept { return sigma_kind_; }

    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return alpha_.at(index(t)); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(index(t)); }
    double sigma(int t) const { return sigma_.at(index(t)); }

    const std::vector<double>& betas() const noexcept { return beta_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

private:
    std::size_t index(int t) const;

    ScheduleKind kind_;
    SigmaKind sigma_kind_;
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
    std::vector<double> sigma_;
};

NoiseSchedule make_linear_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02,
                                   SigmaKind sigma = SigmaKind::beta);
NoiseSchedule make_cosine_schedule(int steps, double offset = 0.008, SigmaKind sigma = SigmaKind::beta);
NoiseSchedule make_schedule(const ScheduleConfig& config);

// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
template <typename T>
compute::Tensor<T> forward_sample(const compute::Tensor<T>& x0, const compute::Tensor<T>& eps, int t,
                                  const NoiseSchedule& sched);

// One draw of x_t given x_{t-1}: sqrt(alpha_t) * x_prev + sqrt(beta_t) * noise.
template <typename T>
compute::Tensor<T> forward_step(const compute::Tensor<T>& x_prev, const compute::Tensor<T>& noise,
                                int t, const NoiseSchedule& sched);

template <typename T>
struct StepParams {
    compute::Tensor<T> mean;
    double sigma;
};

// Reverse-step mean from the epsilon parameterization
// (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t), and sigma_t.
template <typename T>
StepParams<T> posterior_step_params(const compute::Tensor<T>& xt, const compute::Tensor<T>& eps_pred,
                                    int t, const NoiseSchedule& sched);

}  // namespace maskdm
