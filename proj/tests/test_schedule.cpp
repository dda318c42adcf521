#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "maskdm/rng.hpp"
#include "maskdm/schedule.hpp"

using namespace maskdm;
using compute::Tensor;

TEST(LinearSchedule, HandCumulativeProduct) {
    const NoiseSchedule s = make_linear_schedule(4, 0.1, 0.4);
    const double expected[] = {0.9, 0.72, 0.504, 0.3024};
    for (int t = 1; t <= 4; ++t) {
        EXPECT_NEAR(s.beta(t), 0.1 * t, 1e-15);
        EXPECT_NEAR(s.alpha_bar(t), expected[t - 1], 1e-15);
    }
}

TEST(LinearSchedule, SingleStep) {
    const NoiseSchedule s = make_linear_schedule(1, 0.3, 0.3);
    EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.7);
}

TEST(LinearSchedule, DefaultEndpointMatchesProductOracle) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    double prod = 1.0;
    for (int i = 0; i < 1000; ++i) {
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 999.0);
    }
    EXPECT_NEAR(s.alpha_bar(1000), prod, 1e-12);
    EXPECT_NEAR(s.alpha_bar(1000), 4.04e-5, 0.01e-5);
    EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
    EXPECT_DOUBLE_EQ(s.beta(1000), 0.02);
}

TEST(LinearSchedule, RejectsBadRanges) {
    EXPECT_THROW(make_linear_schedule(10, 0.0, 0.02), ConfigError);
    EXPECT_THROW(make_linear_schedule(10, 0.03, 0.02), ConfigError);
    EXPECT_THROW(make_linear_schedule(10, 1e-4, 1.0), ConfigError);
    EXPECT_THROW(make_linear_schedule(0, 1e-4, 0.02), ConfigError);
}

TEST(CosineSchedule, ClosedFormAtMidpoint) {
    const NoiseSchedule s = make_cosine_schedule(1000, 0.008);
    auto f = [](double t) { return std::pow(std::cos((t / 1000.0 + 0.008) / 1.008 * std::numbers::pi / 2), 2); };
    EXPECT_NEAR(s.alpha_bar(500), f(500) / f(0), 1e-12);
    EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
}

TEST(CosineSchedule, RejectsNonPositiveOffset) { EXPECT_THROW(make_cosine_schedule(10, 0.0), ConfigError); }

TEST(ScheduleProperties, StrictlyDecreasingWithBoundedBeta) {
    for (int steps : {2, 10, 100, 1000}) {
        for (const NoiseSchedule& s : {make_linear_schedule(steps), make_cosine_schedule(steps)}) {
            for (int t = 1; t <= steps; ++t) {
                EXPECT_GT(s.beta(t), 0.0);
                EXPECT_LE(s.beta(t), 0.999);
                EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
            }
            EXPECT_LT(s.alpha_bar(1), 1.0);
        }
    }
}

TEST(ScheduleProperties, AlphaBarIsRunningProduct) {
    const NoiseSchedule s = make_cosine_schedule(200);
    double prod = 1.0;
    for (int t = 1; t <= 200; ++t) {
        prod *= s.alpha(t);
        EXPECT_EQ(s.alpha_bar(t), prod);
    }
}

TEST(ScheduleProperties, CosineDestroysInformationMoreSlowly) {
    EXPECT_GT(make_cosine_schedule(1000).alpha_bar(900), make_linear_schedule(1000).alpha_bar(900));
}

TEST(ScheduleProperties, SigmaKinds) {
    const NoiseSchedule big = make_linear_schedule(50);
    const NoiseSchedule small = make_linear_schedule(50, 1e-4, 0.02, SigmaKind::tilde_beta);
    for (int t = 2; t <= 50; ++t) {
        EXPECT_DOUBLE_EQ(big.sigma(t), std::sqrt(big.beta(t)));
        const double tilde = (1 - small.alpha_bar(t - 1)) / (1 - small.alpha_bar(t)) * small.beta(t);
        EXPECT_NEAR(small.sigma(t), std::sqrt(tilde), 1e-15);
    }
    EXPECT_EQ(parse_sigma_kind("tilde_beta"), SigmaKind::tilde_beta);
    EXPECT_THROW(parse_schedule_kind("quadratic"), ConfigError);
}

TEST(ForwardSample, ZeroNoiseScalesData) {
    const NoiseSchedule s = make_linear_schedule(100);
    const Tensor<double> x0({3}, std::vector<double>{0.5, -1, 2});
    const Tensor<double> xt = forward_sample(x0, Tensor<double>({3}), 40, s);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(xt[i], std::sqrt(s.alpha_bar(40)) * x0[i]);
    }
}

TEST(ForwardSample, PseudoIndexZeroIsIdentity) {
    const NoiseSchedule s = make_linear_schedule(100);
    const Tensor<double> x0({2}, std::vector<double>{0.25, -0.75});
    EXPECT_EQ(forward_sample(x0, Tensor<double>({2}, 1.0), 0, s), x0);
}

TEST(ForwardSample, RejectsOutOfRangeStep) {
    const NoiseSchedule s = make_linear_schedule(10);
    const Tensor<float> x({1});
    EXPECT_THROW(forward_sample(x, x, 11, s), ContractError);
    EXPECT_THROW(forward_sample(x, x, -1, s), ContractError);
    EXPECT_THROW(forward_sample(x, Tensor<float>({2}), 1, s), ShapeError);
}

TEST(ForwardSample, MatchesFormulaElementwise) {
    const NoiseSchedule s = make_cosine_schedule(100);
    Rng rng(3);
    Tensor<float> x0({64}), eps({64});
    for (std::size_t i = 0; i < 64; ++i) {
        x0[i] = static_cast<float>(rng.uniform() * 2 - 1);
        eps[i] = static_cast<float>(rng.normal());
    }
    const Tensor<float> xt = forward_sample(x0, eps, 37, s);
    const double a = std::sqrt(s.alpha_bar(37)), b = std::sqrt(1 - s.alpha_bar(37));
    for (std::size_t i = 0; i < 64; ++i) {
        const double expected = a * x0[i] + b * eps[i];
        EXPECT_NEAR(xt[i], expected, 2 * std::numeric_limits<float>::epsilon() * std::max(1.0, std::abs(expected)));
    }
}

// Var[x_t | x0] over 10^4 noise draws equals 1 - alpha_bar_t within 3 standard errors.
TEST(ForwardSample, ConditionalVarianceOverGrid) {
    const NoiseSchedule s = make_linear_schedule(1000);
    const int n = 10000;
    for (int t : {1, 10, 100, 500, 1000}) {
        Rng rng(100 + t);
        Tensor<double> x0({static_cast<std::size_t>(n)}, 0.3), eps({static_cast<std::size_t>(n)});
        for (double& v : eps.data()) {
            v = rng.normal();
        }
        const Tensor<double> xt = forward_sample(x0, eps, t, s);
        double mean = 0, sq = 0;
        for (double v : xt.data()) {
            mean += v;
        }
        mean /= n;
        for (double v : xt.data()) {
            sq += (v - mean) * (v - mean);
        }
        const double var = sq / (n - 1);
        const double target = 1 - s.alpha_bar(t);
        EXPECT_LT(std::abs(var - target), 3 * target * std::sqrt(2.0 / (n - 1))) << "t=" << t;
    }
}

TEST(PosteriorStep, ZeroPredictionDividesBySqrtAlpha) {
    const NoiseSchedule s = make_linear_schedule(10);
    const Tensor<double> xt({2}, std::vector<double>{1.0, -2.0});
    const StepParams<double> p = posterior_step_params(xt, Tensor<double>({2}), 4, s);
    EXPECT_DOUBLE_EQ(p.mean[0], 1.0 / std::sqrt(s.alpha(4)));
    EXPECT_DOUBLE_EQ(p.mean[1], -2.0 / std::sqrt(s.alpha(4)));
    EXPECT_DOUBLE_EQ(p.sigma, s.sigma(4));
}

TEST(PosteriorStep, MatchesDoublePrecisionFormula) {
    const NoiseSchedule s = make_cosine_schedule(1000);
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const int t = static_cast<int>(rng.uniform_int(1, 1000));
        Tensor<float> xt({8}), eps({8});
        for (std::size_t i = 0; i < 8; ++i) {
            xt[i] = static_cast<float>(rng.normal());
            eps[i] = static_cast<float>(rng.normal());
        }
        const StepParams<float> p = posterior_step_params(xt, eps, t, s);
        for (std::size_t i = 0; i < 8; ++i) {
            const double expected =
                (xt[i] - s.beta(t) / std::sqrt(1 - s.alpha_bar(t)) * eps[i]) / std::sqrt(s.alpha(t));
            EXPECT_NEAR(p.mean[i], expected, 1e-5 * std::max(1.0, std::abs(expected)));
        }
    }
}
