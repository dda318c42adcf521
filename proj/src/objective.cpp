#include "maskdm/objective.hpp"

#include "maskdm/errors.hpp"

namespace maskdm {

using compute::Graph;
using compute::ParamSet;
using compute::Tensor;
using compute::Var;

template <typename T>
LossBatch<T> draw_loss_batch(Tensor<T> images, const NoiseSchedule& sched, Rng& rng,
                             const std::optional<MaskSpec>& mask, const TokenGrid& grid) {
    if (images.rank() != 4) {
        throw ShapeError("loss batch images must be [B, C, H, W]");
    }
    LossBatch<T> batch;
    const std::size_t n = images.dim(0);
    batch.t.resize(n);
    for (auto& step : batch.t) {
        step = static_cast<int>(rng.uniform_int(1, sched.steps()));
    }
    batch.eps = Tensor<T>(images.shape());
    for (T& v : batch.eps.data()) {
        v = static_cast<T>(rng.normal());
    }
    if (mask) {
        batch.masks.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            batch.masks.push_back(sample_mask(grid, *mask, rng));
        }
    }
    batch.images = std::move(images);
    return batch;
}

namespace {

template <typename T>
Var masked_regression(Graph<T>& g, const UViT<T>& model, const LossBatch<T>& batch, const NoiseSchedule& sched,
                      const ParamSet<T>* params, bool use_masks) {
    const UViTConfig& cfg = model.config();
    const Tensor<T>& x0 = batch.images;
    if (x0.rank() != 4 || x0.dim(1) != cfg.channels || x0.dim(2) != cfg.image_h || x0.dim(3) != cfg.image_w) {
        throw ShapeError("loss batch images " + compute::shape_string(x0.shape()) + " do not fit the model");
    }
    if (batch.eps.shape() != x0.shape()) {
        throw ShapeError("loss batch noise shape differs from images");
    }
    const std::size_t n = x0.dim(0);
    if (batch.t.size() != n) {
        throw ContractError("loss batch needs one timestep per image");
    }
    if (use_masks && batch.masks.size() != n) {
        throw ContractError("masked loss needs one mask per image");
    }
    const std::size_t image_size = x0.size() / n;
    const std::size_t width = cfg.token_dim();
    const std::size_t n_tokens = cfg.n_tokens();
    const std::size_t seq = use_masks ? batch.masks[0].visible() : n_tokens;
    if (seq == 0) {
        throw FullMaskError("no visible tokens");
    }

    Tensor<T> inputs({n * seq, width});
    Tensor<T> targets({n * seq, width});
    std::vector<std::size_t> tau;
    tau.reserve(n * seq);
    const compute::Shape chw{cfg.channels, cfg.image_h, cfg.image_w};
    for (std::size_t b = 0; b < n; ++b) {
        auto slice = [&](const Tensor<T>& src) {
            const auto first = src.buffer().begin() + static_cast<std::ptrdiff_t>(b * image_size);
            return Tensor<T>(chw, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(image_size)));
        };
        const Tensor<T> eps = slice(batch.eps);
        const Tensor<T> xt = forward_sample(slice(x0), eps, batch.t[b], sched);
        Tensor<T> xt_tokens = patchify(xt, cfg.patch);
        Tensor<T> eps_tokens = patchify(eps, cfg.patch);
        if (use_masks) {
            const Mask& m = batch.masks[b];
            if (m.visible() != seq) {
                throw ContractError("all masks in a batch must keep the same number of tokens");
            }
            xt_tokens = apply_mask(xt_tokens, m);
            eps_tokens = apply_mask(eps_tokens, m);
            tau.insert(tau.end(), m.tau().begin(), m.tau().end());
        } else {
            for (std::size_t i = 0; i < n_tokens; ++i) {
                tau.push_back(i);
            }
        }
        std::copy(xt_tokens.buffer().begin(), xt_tokens.buffer().end(),
                  inputs.buffer().begin() + static_cast<std::ptrdiff_t>(b * seq * width));
        std::copy(eps_tokens.buffer().begin(), eps_tokens.buffer().end(),
                  targets.buffer().begin() + static_cast<std::ptrdiff_t>(b * seq * width));
    }
    Var in = g.constant(std::move(inputs));
    Var pred = params != nullptr ? model.forward_with(g, *params, in, tau, batch.t) : model.forward(g, in, tau, batch.t);
    return g.squared_error(pred, g.constant(std::move(targets)));
}

}  // namespace

template <typename T>
Var dsm_loss(Graph<T>& g, const UViT<T>& model, const LossBatch<T>& batch, const NoiseSchedule& sched,
             const ParamSet<T>* params) {
    if (!batch.masks.empty()) {
        throw ContractError("dsm_loss takes an unmasked batch");
    }
    return masked_regression(g, model, batch, sched, params, false);
}

template <typename T>
Var mdsm_loss(Graph<T>& g, const UViT<T>& model, const LossBatch<T>& batch, const NoiseSchedule& sched,
              const ParamSet<T>* params) {
    if (batch.masks.empty()) {
        throw ContractError("mdsm_loss needs a mask per sample");
    }
    return masked_regression(g, model, batch, sched, params, true);
}

template LossBatch<float> draw_loss_batch(Tensor<float>, const NoiseSchedule&, Rng&, const std::optional<MaskSpec>&,
                                          const TokenGrid&);
template LossBatch<double> draw_loss_batch(Tensor<double>, const NoiseSchedule&, Rng&,
                                           const std::optional<MaskSpec>&, const TokenGrid&);
template Var dsm_loss(Graph<float>&, const UViT<float>&, const LossBatch<float>&, const NoiseSchedule&,
                      const ParamSet<float>*);
template Var dsm_loss(Graph<double>&, const UViT<double>&, const LossBatch<double>&, const NoiseSchedule&,
                      const ParamSet<double>*);
template Var mdsm_loss(Graph<float>&, const UViT<float>&, const LossBatch<float>&, const NoiseSchedule&,
                       const ParamSet<float>*);
template Var mdsm_loss(Graph<double>&, const UViT<double>&, const LossBatch<double>&, const NoiseSchedule&,
                       const ParamSet<double>*);

}  // namespace maskdm
