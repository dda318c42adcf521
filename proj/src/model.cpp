#include "maskdm/model.hpp"

#include <algorithm>
#include <cmath>

#include "maskdm/errors.hpp"

namespace maskdm {

using compute::Graph;
using compute::npos;
using compute::ParamSet;
using compute::Shape;
using compute::Tensor;
using compute::Var;

std::string_view to_string(PositionalKind kind) {
    return kind == PositionalKind::learned ? "learned" : "sinusoidal-frozen";
}

PositionalKind parse_positional_kind(std::string_view text) {
    if (text == "learned") {
        return PositionalKind::learned;
    }
    if (text == "sinusoidal-frozen") {
        return PositionalKind::sinusoidal_frozen;
    }
    throw ConfigError("unknown positional kind '" + std::string(text) + "'");
}

UViTConfig UViTConfig::preset(std::string_view name) {
    UViTConfig c;
    if (name == "tiny") {
        c.depth = 4, c.dim = 64, c.mlp_dim = 128, c.heads = 4, c.patch = 2;
        c.channels = 3, c.image_h = 16, c.image_w = 16;
    } else if (name == "maskdm-s") {
        c.depth = 13, c.dim = 512, c.mlp_dim = 2048, c.heads = 8, c.patch = 4;
        c.channels = 3, c.image_h = 64, c.image_w = 64;
    } else if (name == "maskdm-b") {
        c.depth = 12, c.dim = 768, c.mlp_dim = 3172, c.heads = 12, c.patch = 4;
        c.channels = 3, c.image_h = 256, c.image_w = 256;
    } else {
        throw ConfigError("unknown model preset '" + std::string(name) + "'");
    }
    return c;
}

void UViTConfig::validate() const {
    if (depth < 1) {
        throw ConfigError("model depth must be >= 1");
    }
    if (dim == 0 || heads == 0 || dim % heads != 0) {
        throw ConfigError("heads (" + std::to_string(heads) + ") must divide dim (" +
                          std::to_string(dim) + ")");
    }
    if (mlp_dim == 0 || channels == 0) {
        throw ConfigError("mlp_dim and channels must be positive");
    }
    (void)grid();
}

template <typename T>
std::vector<T> time_embedding(int t, std::size_t dim) {
    std::vector<T> out(dim, T(0));
    const std::size_t half = dim / 2;
    for (std::size_t j = 0; j < half; ++j) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
        const double arg = static_cast<double>(t) * freq;
        out[j] = static_cast<T>(std::cos(arg));
        out[half + j] = static_cast<T>(std::sin(arg));
    }
    return out;
}

std::vector<std::pair<std::string, Shape>> uvit_layout(const UViTConfig& c) {
    c.validate();
    const std::size_t d = c.dim, p = c.token_dim();
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back("patch_embed.weight", Shape{p, d});
    out.emplace_back("patch_embed.bias", Shape{d});
    out.emplace_back("pos_embed", Shape{c.n_tokens() + 1, d});
    out.emplace_back("time_embed.fc1.weight", Shape{d, d});
    out.emplace_back("time_embed.fc1.bias", Shape{d});
    out.emplace_back("time_embed.fc2.weight", Shape{d, d});
    out.emplace_back("time_embed.fc2.bias", Shape{d});
    for (std::size_t k = 0; k < c.depth; ++k) {
        const std::string b = "blocks." + std::to_string(k) + ".";
        if (k >= c.depth - c.depth / 2) {
            out.emplace_back(b + "skip.weight", Shape{2 * d, d});
            out.emplace_back(b + "skip.bias", Shape{d});
        }
        out.emplace_back(b + "norm1.weight", Shape{d});
        out.emplace_back(b + "norm1.bias", Shape{d});
        // Keys carry no bias: softmax over keys is invariant to it, so its
        // gradient is identically zero.
        for (const char* name : {"q", "k", "v", "proj"}) {
            out.emplace_back(b + "attn." + name + ".weight", Shape{d, d});
            if (std::string_view(name) != "k") {
                out.emplace_back(b + "attn." + name + ".bias", Shape{d});
            }
        }
        out.emplace_back(b + "norm2.weight", Shape{d});
        out.emplace_back(b + "norm2.bias", Shape{d});
        out.emplace_back(b + "mlp.fc1.weight", Shape{d, c.mlp_dim});
        out.emplace_back(b + "mlp.fc1.bias", Shape{c.mlp_dim});
        out.emplace_back(b + "mlp.fc2.weight", Shape{c.mlp_dim, d});
        out.emplace_back(b + "mlp.fc2.bias", Shape{d});
    }
    out.emplace_back("norm_out.weight", Shape{d});
    out.emplace_back("norm_out.bias", Shape{d});
    out.emplace_back("head.weight", Shape{d, p});
    out.emplace_back("head.bias", Shape{p});
    return out;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

double truncated_normal(Rng& rng, double std) {
    for (;;) {
        const double z = rng.normal();
        if (std::abs(z) <= 2.0) {
            return z * std;
        }
    }
}

}  // namespace

template <typename T>
UViT<T> UViT<T>::init(const UViTConfig& config, Rng& rng) {
    ParamSet<T> params;
    for (auto& [name, shape] : uvit_layout(config)) {
        Tensor<T> value(shape);
        if (name == "pos_embed" && config.positional == PositionalKind::sinusoidal_frozen) {
            params.add(name, sinusoidal_position_table<T>(config.grid(), config.dim), false);
            continue;
        }
        if (name.starts_with("head.")) {
            // zero head
        } else if (ends_with(name, "norm1.weight") || ends_with(name, "norm2.weight") ||
                   name == "norm_out.weight") {
            value.fill(T(1));
        } else if (ends_with(name, ".weight") || name == "pos_embed") {
            for (T& v : value.data()) {
                v = static_cast<T>(truncated_normal(rng, 0.02));
            }
        }
        params.add(name, std::move(value));
    }
    return UViT(config, std::move(params));
}

template <typename T>
UViT<T>::UViT(UViTConfig config, ParamSet<T> params) : config_(config), params_(std::move(params)) {
    const auto layout = uvit_layout(config_);
    if (layout.size() != params_.size()) {
        throw FormatError("parameter set has " + std::to_string(params_.size()) + " tensors, model needs " +
                          std::to_string(layout.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (params_.name(i) != layout[i].first || params_.tensor(i).shape() != layout[i].second) {
            throw FormatError("parameter " + std::to_string(i) + " is '" + params_.name(i) + "' " +
                              compute::shape_string(params_.tensor(i).shape()) + ", expected '" +
                              layout[i].first + "' " + compute::shape_string(layout[i].second));
        }
    }
    bind_ids();
}

template <typename T>
void UViT<T>::bind_ids() {
    auto id = [&](const std::string& name) {
        const std::size_t i = params_.find(name);
        if (i == npos) {
            throw FormatError("missing parameter " + name);
        }
        return i;
    };
    embed_w_ = id("patch_embed.weight");
    embed_b_ = id("patch_embed.bias");
    pos_ = id("pos_embed");
    time1_w_ = id("time_embed.fc1.weight");
    time1_b_ = id("time_embed.fc1.bias");
    time2_w_ = id("time_embed.fc2.weight");
    time2_b_ = id("time_embed.fc2.bias");
    norm_w_ = id("norm_out.weight");
    norm_b_ = id("norm_out.bias");
    head_w_ = id("head.weight");
    head_b_ = id("head.bias");
    blocks_.clear();
    for (std::size_t k = 0; k < config_.depth; ++k) {
        const std::string b = "blocks." + std::to_string(k) + ".";
        BlockIds ids{};
        ids.norm1_w = id(b + "norm1.weight");
        ids.norm1_b = id(b + "norm1.bias");
        ids.q_w = id(b + "attn.q.weight");
        ids.q_b = id(b + "attn.q.bias");
        ids.k_w = id(b + "attn.k.weight");
        ids.v_w = id(b + "attn.v.weight");
        ids.v_b = id(b + "attn.v.bias");
        ids.proj_w = id(b + "attn.proj.weight");
        ids.proj_b = id(b + "attn.proj.bias");
        ids.norm2_w = id(b + "norm2.weight");
        ids.norm2_b = id(b + "norm2.bias");
        ids.fc1_w = id(b + "mlp.fc1.weight");
        ids.fc1_b = id(b + "mlp.fc1.bias");
        ids.fc2_w = id(b + "mlp.fc2.weight");
        ids.fc2_b = id(b + "mlp.fc2.bias");
        if (skip_partner(k) != npos) {
            ids.skip_w = id(b + "skip.weight");
            ids.skip_b = id(b + "skip.bias");
        }
        blocks_.push_back(ids);
    }
}

template <typename T>
std::size_t UViT<T>::skip_partner(std::size_t block) const {
    const std::size_t pairs = config_.depth / 2;
    if (block >= config_.depth - pairs) {
        return config_.depth - 1 - block;
    }
    return npos;
}

template <typename T>
Var UViT<T>::forward(Graph<T>& g, Var tokens, std::span<const std::size_t> tau, std::span<const int> t) const {
    return forward_with(g, params_, tokens, tau, t);
}

template <typename T>
Var UViT<T>::forward_with(Graph<T>& g, const ParamSet<T>& params, Var tokens,
                          std::span<const std::size_t> tau, std::span<const int> t) const {
    const std::size_t batch = t.size();
    const std::size_t d = config_.dim;
    const std::size_t heads = config_.heads;
    const std::size_t dh = d / heads;
    const std::size_t n_tokens = config_.n_tokens();
    if (batch == 0 || tau.empty()) {
        throw FullMaskError("predict_noise: no visible tokens");
    }
    if (tau.size() % batch != 0) {
        throw ContractError("tau length " + std::to_string(tau.size()) + " is not a multiple of batch " +
                            std::to_string(batch));
    }
    const std::size_t seq = tau.size() / batch;
    const std::size_t len = seq + 1;
    const Shape& in_shape = g.value(tokens).shape();
    if (in_shape != Shape{tau.size(), config_.token_dim()}) {
        throw ShapeError("model input " + compute::shape_string(in_shape) + ", expected [" +
                         std::to_string(tau.size()) + ", " + std::to_string(config_.token_dim()) + "]");
    }
    for (std::size_t idx : tau) {
        if (idx >= n_tokens) {
            throw ContractError("tau index " + std::to_string(idx) + " outside the token grid");
        }
    }

    auto P = [&](std::size_t id) { return g.param(params, id); };
    auto linear = [&](Var x, std::size_t w, std::size_t b) { return g.add(g.matmul(x, P(w)), P(b)); };

    Var pos = P(pos_);
    Var x = g.add(linear(tokens, embed_w_, embed_b_),
                  g.gather_rows(pos, std::vector<std::size_t>(tau.begin(), tau.end())));

    Tensor<T> features({batch, d});
    for (std::size_t b = 0; b < batch; ++b) {
        const auto row = time_embedding<T>(t[b], d);
        std::copy(row.begin(), row.end(), features.data().begin() + static_cast<std::ptrdiff_t>(b * d));
    }
    Var temb = linear(g.gelu(linear(g.constant(std::move(features)), time1_w_, time1_b_)), time2_w_, time2_b_);
    temb = g.add(temb, g.gather_rows(pos, std::vector<std::size_t>(batch, n_tokens)));

    const Var parts[2] = {g.reshape(temb, {batch, 1, d}), g.reshape(x, {batch, seq, d})};
    Var h = g.reshape(g.concat(parts, 1), {batch * len, d});

    const T attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Var> skips;
    for (std::size_t k = 0; k < config_.depth; ++k) {
        const BlockIds& ids = blocks_[k];
        const std::size_t partner = skip_partner(k);
        if (partner != npos) {
            const Var merge[2] = {h, skips.at(partner)};
            h = linear(g.concat(merge, 1), ids.skip_w, ids.skip_b);
        }

        Var n1 = g.layer_norm(h, P(ids.norm1_w), P(ids.norm1_b));
        auto split_heads = [&](Var v, std::vector<std::size_t> perm, Shape out) {
            return g.reshape(g.transpose(g.reshape(v, {batch, len, heads, dh}), std::move(perm)), std::move(out));
        };
        Var q = split_heads(linear(n1, ids.q_w, ids.q_b), {0, 2, 1, 3}, {batch * heads, len, dh});
        Var kt = split_heads(g.matmul(n1, P(ids.k_w)), {0, 2, 3, 1}, {batch * heads, dh, len});
        Var v = split_heads(linear(n1, ids.v_w, ids.v_b), {0, 2, 1, 3}, {batch * heads, len, dh});
        Var att = g.softmax(g.scale(g.matmul(q, kt), attn_scale));
        Var o = g.matmul(att, v);
        o = g.reshape(g.transpose(g.reshape(o, {batch, heads, len, dh}), {0, 2, 1, 3}), {batch * len, d});
        h = g.add(h, linear(o, ids.proj_w, ids.proj_b));

        Var n2 = g.layer_norm(h, P(ids.norm2_w), P(ids.norm2_b));
        h = g.add(h, linear(g.gelu(linear(n2, ids.fc1_w, ids.fc1_b)), ids.fc2_w, ids.fc2_b));

        if (k < config_.depth / 2) {
            skips.push_back(h);
        }
    }

    Var out = linear(g.layer_norm(h, P(norm_w_), P(norm_b_)), head_w_, head_b_);
    std::vector<std::size_t> keep;
    keep.reserve(tau.size());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < seq; ++i) {
            keep.push_back(b * len + 1 + i);
        }
    }
    return g.gather_rows(out, std::move(keep));
}

template <typename T>
Tensor<T> predict_noise(const UViT<T>& model, const Tensor<T>& tokens, std::span<const std::size_t> tau,
                        std::span<const int> t) {
    if (tokens.rank() != 3) {
        throw ShapeError("predict_noise expects [B, S, token_dim] tokens");
    }
    const std::size_t batch = tokens.dim(0), seq = tokens.dim(1), width = tokens.dim(2);
    if (seq == 0) {
        throw FullMaskError("predict_noise: no visible tokens");
    }
    std::vector<std::size_t> full_tau;
    if (tau.size() == seq) {
        full_tau.reserve(batch * seq);
        for (std::size_t b = 0; b < batch; ++b) {
            full_tau.insert(full_tau.end(), tau.begin(), tau.end());
        }
    } else if (tau.size() == batch * seq) {
        full_tau.assign(tau.begin(), tau.end());
    } else {
        throw ContractError("predict_noise: tau length does not match tokens");
    }
    std::vector<int> steps;
    if (t.size() == 1) {
        steps.assign(batch, t[0]);
    } else if (t.size() == batch) {
        steps.assign(t.begin(), t.end());
    } else {
        throw ContractError("predict_noise: need one timestep or one per sample");
    }
    Graph<T> g;
    Var in = g.constant(tokens.reshaped({batch * seq, width}));
    Var out = model.forward(g, in, full_tau, steps);
    return g.value(out).reshaped({batch, seq, width});
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
    if (image.rank() != 3) {
        throw ShapeError("patchify expects a [C, H, W] image");
    }
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const TokenGrid grid = TokenGrid::for_image(h, w, patch);
    Tensor<T> out({grid.n_tokens(), patch * patch * c});
    T* dst = out.data().data();
    for (std::size_t gr = 0; gr < grid.rows; ++gr) {
        for (std::size_t gc = 0; gc < grid.cols; ++gc) {
            for (std::size_t py = 0; py < patch; ++py) {
                for (std::size_t px = 0; px < patch; ++px) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        *dst++ = image[(ch * h + gr * patch + py) * w + gc * patch + px];
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t channels, std::size_t height, std::size_t width,
                     std::size_t patch, T fill, const Mask* mask) {
    const TokenGrid grid = TokenGrid::for_image(height, width, patch);
    const std::size_t token_dim = patch * patch * channels;
    const std::size_t rows = mask != nullptr ? mask->visible() : grid.n_tokens();
    if (tokens.size() != rows * token_dim) {
        throw ContractError("unpatchify: got " + compute::shape_string(tokens.shape()) + " for " +
                            std::to_string(rows) + " tokens of width " + std::to_string(token_dim));
    }
    if (mask != nullptr && !(mask->grid() == grid)) {
        throw ContractError("unpatchify: mask grid does not match the image");
    }
    Tensor<T> image({channels, height, width}, fill);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t slot = mask != nullptr ? mask->tau()[r] : r;
        const std::size_t gr = slot / grid.cols, gc = slot % grid.cols;
        const T* src = tokens.data().data() + r * token_dim;
        for (std::size_t py = 0; py < patch; ++py) {
            for (std::size_t px = 0; px < patch; ++px) {
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    image[(ch * height + gr * patch + py) * width + gc * patch + px] = *src++;
                }
            }
        }
    }
    return image;
}

template class UViT<float>;
template class UViT<double>;
template std::vector<float> time_embedding(int, std::size_t);
template std::vector<double> time_embedding(int, std::size_t);
template Tensor<float> predict_noise(const UViT<float>&, const Tensor<float>&, std::span<const std::size_t>,
                                     std::span<const int>);
template Tensor<double> predict_noise(const UViT<double>&, const Tensor<double>&, std::span<const std::size_t>,
                                      std::span<const int>);
template Tensor<float> patchify(const Tensor<float>&, std::size_t);
template Tensor<double> patchify(const Tensor<double>&, std::size_t);
template Tensor<float> unpatchify(const Tensor<float>&, std::size_t, std::size_t, std::size_t, std::size_t,
                                  float, const Mask*);
template Tensor<double> unpatchify(const Tensor<double>&, std::size_t, std::size_t, std::size_t, std::size_t,
                                   double, const Mask*);

}  // namespace maskdm
