#include "maskdm/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "maskdm/errors.hpp"
#include "maskdm/rng.hpp"

namespace maskdm {

using compute::Shape;
using compute::Tensor;

std::string_view to_string(SamplerKind kind) {
    switch (kind) {
        case SamplerKind::ddpm: return "ddpm";
        case SamplerKind::ddim: return "ddim";
        case SamplerKind::em_sde: return "em_sde";
    }
    return "unknown";
}

SamplerKind parse_sampler_kind(std::string_view text) {
    if (text == "ddpm") return SamplerKind::ddpm;
    if (text == "ddim") return SamplerKind::ddim;
    if (text == "em_sde" || text == "em-sde" || text == "em") return SamplerKind::em_sde;
    throw ConfigError("unknown sampler '" + std::string(text) + "' (expected ddpm, ddim or em_sde)");
}

SampleGeometry SampleGeometry::of(const UViTConfig& config) {
    return SampleGeometry{config.channels, config.image_h, config.image_w, config.patch};
}

template <typename T>
Tensor<T> ModelPredictor<T>::predict(const Tensor<T>& tokens, std::span<const std::size_t> tau, int t) const {
    const int steps[1] = {t};
    return predict_noise(model_, tokens, tau, steps);
}

template <typename T>
Tensor<T> GaussianOracle<T>::predict(const Tensor<T>& tokens, std::span<const std::size_t>, int t) const {
    const double ab = sched_.alpha_bar(t);
    const double shift = std::sqrt(ab) * mean_;
    const double gain = std::sqrt(1.0 - ab) / (ab * variance_ + 1.0 - ab);
    Tensor<T> out(tokens.shape());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        out[i] = static_cast<T>(gain * (static_cast<double>(tokens[i]) - shift));
    }
    return out;
}

std::vector<int> ddim_timesteps(int total, int steps) {
    if (steps < 1 || steps > total) {
        throw ConfigError("ddim steps must lie in [1, " + std::to_string(total) + "]");
    }
    const int stride = total / steps;
    std::vector<int> out(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        out[static_cast<std::size_t>(i)] = 1 + i * stride;
    }
    return out;
}

double continuous_beta(const NoiseSchedule& sched, double s) {
    const int total = sched.steps();
    const double u = std::clamp(s * total, 1.0, static_cast<double>(total));
    const int lo = static_cast<int>(std::floor(u));
    const int hi = std::min(lo + 1, total);
    const double frac = u - lo;
    return total * (sched.beta(lo) * (1.0 - frac) + sched.beta(hi) * frac);
}

namespace {

// Visible rows of a freshly drawn full-size noise image.
template <typename T>
void draw_visible_noise(Rng& rng, const SampleGeometry& geo, std::span<const std::size_t> tau, T* dst) {
    Tensor<T> image({geo.channels, geo.height, geo.width});
    for (T& v : image.data()) {
        v = static_cast<T>(rng.normal());
    }
    const Tensor<T> tokens = patchify(image, geo.patch);
    const std::size_t width = geo.token_dim();
    for (std::size_t s = 0; s < tau.size(); ++s) {
        std::copy_n(tokens.data().data() + tau[s] * width, width, dst + s * width);
    }
}

template <typename T>
void run_chunk(const NoisePredictor<T>& predictor, const NoiseSchedule& sched, const SampleGeometry& geo,
               const SampleRequest& req, std::span<const std::size_t> tau, Tensor<T>& x, std::vector<Rng>& rngs) {
    const std::size_t batch = x.dim(0), width = x.dim(2);
    const std::size_t row = tau.size() * width;
    const int total = sched.steps();
    auto add_noise = [&](double scale) {
        std::vector<T> z(row);
        for (std::size_t b = 0; b < batch; ++b) {
            draw_visible_noise<T>(rngs[b], geo, tau, z.data());
            T* dst = x.data().data() + b * row;
            for (std::size_t i = 0; i < row; ++i) {
                dst[i] += static_cast<T>(scale) * z[i];
            }
        }
    };

    switch (req.sampler) {
        case SamplerKind::ddpm: {
            for (int t = total; t >= 1; --t) {
                const Tensor<T> eps = predictor.predict(x, tau, t);
                StepParams<T> step = posterior_step_params(x, eps, t, sched);
                x = std::move(step.mean);
                if (t > 1) {
                    add_noise(step.sigma * req.ddpm_sigma_scale);
                }
            }
            break;
        }
        case SamplerKind::ddim: {
            const std::vector<int> ts = ddim_timesteps(total, req.steps == 0 ? total : req.steps);
            for (std::size_t i = ts.size(); i-- > 0;) {
                const int t = ts[i];
                const int t_prev = i == 0 ? 0 : ts[i - 1];
                const Tensor<T> eps = predictor.predict(x, tau, t);
                const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
                const T inv_sqrt_ab = static_cast<T>(1.0 / std::sqrt(ab));
                const T noise_now = static_cast<T>(std::sqrt(1.0 - ab));
                const T keep = static_cast<T>(std::sqrt(ab_prev));
                const T noise_prev = static_cast<T>(std::sqrt(1.0 - ab_prev));
                for (std::size_t k = 0; k < x.size(); ++k) {
                    const T x0 = (x[k] - noise_now * eps[k]) * inv_sqrt_ab;
                    x[k] = keep * x0 + noise_prev * eps[k];
                }
            }
            break;
        }
        case SamplerKind::em_sde: {
            const int steps = req.steps == 0 ? total : req.steps;
            if (steps < 1) {
                throw ConfigError("em_sde steps must be >= 1");
            }
            const double ds = 1.0 / steps;
            for (int k = steps; k >= 1; --k) {
                const double s = static_cast<double>(k) / steps;
                const int t = std::clamp(static_cast<int>(std::lround(s * total)), 1, total);
                const double beta = continuous_beta(sched, s);
                const Tensor<T> eps = predictor.predict(x, tau, t);
                // x <- x + (beta x / 2 + beta score) ds with score = -eps / sqrt(1 - ab).
                const T a = static_cast<T>(1.0 + 0.5 * beta * ds);
                const T c = static_cast<T>(beta * ds / std::sqrt(1.0 - sched.alpha_bar(t)));
                for (std::size_t i = 0; i < x.size(); ++i) {
                    x[i] = a * x[i] - c * eps[i];
                }
                if (k > 1) {
                    add_noise(std::sqrt(beta * ds));
                }
            }
            break;
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> sample(const NoisePredictor<T>& predictor, const NoiseSchedule& sched, const SampleGeometry& geo,
                 const SampleRequest& req, const Tensor<T>* initial) {
    const TokenGrid grid = geo.grid();
    const Mask mask = req.mask ? *req.mask : Mask::full(grid);
    if (!(mask.grid() == grid)) {
        throw ContractError("sample: mask grid does not match the image geometry");
    }
    if (mask.visible() == 0) {
        throw FullMaskError("sample: mask hides every token");
    }
    if (req.batch == 0) {
        throw ContractError("sample: batch must be >= 1");
    }
    const Shape image_shape{geo.channels, geo.height, geo.width};
    const std::size_t image_size = compute::element_count(image_shape);
    if (initial != nullptr && initial->shape() != Shape{req.n, geo.channels, geo.height, geo.width}) {
        throw ShapeError("sample: initial noise must be [n, C, H, W]");
    }
    const std::span<const std::size_t> tau = mask.tau();
    const std::size_t width = geo.token_dim();
    const std::size_t row = tau.size() * width;

    Tensor<T> out({req.n, geo.channels, geo.height, geo.width});
    for (std::size_t first = 0; first < req.n; first += req.batch) {
        const std::size_t batch = std::min(req.batch, req.n - first);
        std::vector<Rng> rngs;
        rngs.reserve(batch);
        Tensor<T> x({batch, tau.size(), width});
        for (std::size_t b = 0; b < batch; ++b) {
            rngs.emplace_back(req.seed, first + b);
            T* dst = x.data().data() + b * row;
            if (initial == nullptr) {
                draw_visible_noise<T>(rngs.back(), geo, tau, dst);
            } else {
                const auto begin = initial->buffer().begin() + static_cast<std::ptrdiff_t>((first + b) * image_size);
                const Tensor<T> tokens = patchify(
                    Tensor<T>(image_shape, std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(image_size))),
                    geo.patch);
                const Tensor<T> visible = apply_mask(tokens, mask);
                std::copy(visible.buffer().begin(), visible.buffer().end(), dst);
            }
        }
        run_chunk(predictor, sched, geo, req, tau, x, rngs);
        for (std::size_t b = 0; b < batch; ++b) {
            Tensor<T> tokens({tau.size(), width});
            std::copy_n(x.data().data() + b * row, row, tokens.data().data());
            if (req.clip) {
                for (T& v : tokens.data()) {
                    v = std::clamp(v, T(-1), T(1));
                }
            }
            const Tensor<T> image = unpatchify(tokens, geo.channels, geo.height, geo.width, geo.patch,
                                               static_cast<T>(req.fill), &mask);
            std::copy(image.buffer().begin(), image.buffer().end(),
                      out.buffer().begin() + static_cast<std::ptrdiff_t>((first + b) * image_size));
        }
    }
    return out;
}

template <typename T>
Tensor<T> ddpm_sample(const NoisePredictor<T>& predictor, const NoiseSchedule& sched, const SampleGeometry& geo,
                      SampleRequest req, const Tensor<T>* initial) {
    req.sampler = SamplerKind::ddpm;
    return sample(predictor, sched, geo, req, initial);
}

template <typename T>
Tensor<T> ddim_sample(const NoisePredictor<T>& predictor, const NoiseSchedule& sched, int steps,
                      const SampleGeometry& geo, SampleRequest req, const Tensor<T>* initial) {
    req.sampler = SamplerKind::ddim;
    req.steps = steps;
    if (steps < 1 || steps > sched.steps()) {
        throw ConfigError("ddim steps must lie in [1, " + std::to_string(sched.steps()) + "]");
    }
    return sample(predictor, sched, geo, req, initial);
}

template <typename T>
Tensor<T> em_sde_sample(const NoisePredictor<T>& predictor, const NoiseSchedule& sched, int steps,
                        const SampleGeometry& geo, SampleRequest req, const Tensor<T>* initial) {
    req.sampler = SamplerKind::em_sde;
    req.steps = steps;
    if (steps < 1) {
        throw ConfigError("em_sde steps must be >= 1");
    }
    return sample(predictor, sched, geo, req, initial);
}

template <typename T>
Tensor<T> marginal_sample(const NoisePredictor<T>& predictor, const NoiseSchedule& sched, const Mask& mask,
                          const SampleGeometry& geo, SampleRequest req, const Tensor<T>* initial) {
    req.mask = mask;
    return sample(predictor, sched, geo, req, initial);
}

#define MASKDM_INSTANTIATE(T)                                                                                  \
    template class ModelPredictor<T>;                                                                         \
    template class GaussianOracle<T>;                                                                         \
    template Tensor<T> sample(const NoisePredictor<T>&, const NoiseSchedule&, const SampleGeometry&,          \
                              const SampleRequest&, const Tensor<T>*);                                        \
    template Tensor<T> ddpm_sample(const NoisePredictor<T>&, const NoiseSchedule&, const SampleGeometry&,     \
                                   SampleRequest, const Tensor<T>*);                                          \
    template Tensor<T> ddim_sample(const NoisePredictor<T>&, const NoiseSchedule&, int, const SampleGeometry&, \
                                   SampleRequest, const Tensor<T>*);                                          \
    template Tensor<T> em_sde_sample(const NoisePredictor<T>&, const NoiseSchedule&, int,                     \
                                     const SampleGeometry&, SampleRequest, const Tensor<T>*);                 \
    template Tensor<T> marginal_sample(const NoisePredictor<T>&, const NoiseSchedule&, const Mask&,           \
                                       const SampleGeometry&, SampleRequest, const Tensor<T>*);

MASKDM_INSTANTIATE(float)
MASKDM_INSTANTIATE(double)

#undef MASKDM_INSTANTIATE

}  // namespace maskdm
