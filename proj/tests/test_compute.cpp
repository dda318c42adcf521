#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "maskdm/compute/grad_check.hpp"
#include "maskdm/compute/graph.hpp"
#include "maskdm/masking.hpp"
#include "maskdm/rng.hpp"

using namespace maskdm;
using namespace maskdm::compute;

namespace {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor<T> t(std::move(shape));
    for (T& v : t.data()) {
        v = static_cast<T>(scale * rng.normal());
    }
    return t;
}

// Reduces an arbitrary output to a scalar through fixed random weights so
// every output element receives a distinct upstream gradient.
Var weighted_sum(Graph<double>& g, Var out, std::uint64_t seed) {
    Rng rng(seed);
    return g.sum(g.mul(out, g.constant(random_tensor(g.value(out).shape(), rng))));
}

struct OpCase {
    const char* name;
    std::vector<Shape> params;
    std::function<Var(Graph<double>&, const std::vector<Var>&)> build;
};

}  // namespace

TEST(Tensor, BufferMustMatchShape) {
    EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
    EXPECT_EQ(Tensor<float>({2, 3}).size(), 6u);
    EXPECT_EQ(Tensor<float>::scalar(2.5f).item(), 2.5f);
    EXPECT_THROW(Tensor<float>({2}).item(), ShapeError);
    EXPECT_THROW(Tensor<float>({2, 3}).reshaped({4}), ShapeError);
}

TEST(Forward, MatmulWithIdentityReturnsOperand) {
    Rng rng(1);
    Tensor<double> eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) {
        eye[i * 3 + i] = 1.0;
    }
    const Tensor<double> a = random_tensor({3, 3}, rng);
    Graph<double> g;
    EXPECT_EQ(g.value(g.matmul(g.constant(eye), g.constant(a))), a);
}

TEST(Forward, SoftmaxOfZerosIsUniform) {
    Graph<double> g;
    const Tensor<double>& y = g.value(g.softmax(g.constant(Tensor<double>({4}))));
    for (double v : y.data()) {
        EXPECT_DOUBLE_EQ(v, 0.25);
    }
}

TEST(Forward, LayerNormMatchesMeanVarianceOracle) {
    Graph<float> g;
    const Var x = g.constant(Tensor<float>({3}, std::vector<float>{1, 2, 3}));
    const Var y = g.layer_norm(x, g.constant(Tensor<float>({3}, 1.0f)), g.constant(Tensor<float>({3})), 1e-5f);
    const double mean = 2.0;
    const double var = ((1 - mean) * (1 - mean) + 0 + (3 - mean) * (3 - mean)) / 3.0;
    for (int i = 0; i < 3; ++i) {
        const double expected = (i + 1 - mean) / std::sqrt(var + 1e-5);
        EXPECT_NEAR(g.value(y)[i], expected, 1e-6);
    }
}

TEST(Forward, BroadcastRulesAreRestricted) {
    Graph<double> g;
    const Var a = g.constant(Tensor<double>({2, 3}, 1.0));
    EXPECT_NO_THROW(g.add(a, g.constant(Tensor<double>({3}, 1.0))));
    EXPECT_NO_THROW(g.add(a, g.constant(Tensor<double>::scalar(1.0))));
    EXPECT_THROW(g.add(a, g.constant(Tensor<double>({2}, 1.0))), ShapeError);
    EXPECT_THROW(g.mul(a, g.constant(Tensor<double>({3, 2}, 1.0))), ShapeError);
    EXPECT_THROW(g.matmul(a, g.constant(Tensor<double>({2, 3}))), ShapeError);
    EXPECT_THROW(g.reshape(a, {4}), ShapeError);
}

TEST(Forward, ForwardOpDispatchesByKind) {
    Graph<double> g;
    const Var a = g.constant(Tensor<double>({2}, std::vector<double>{1, 2}));
    const Var b = g.constant(Tensor<double>({2}, std::vector<double>{3, 5}));
    const Var inputs[2] = {a, b};
    EXPECT_EQ(g.value(g.forward_op(OpKind::mul, inputs)), Tensor<double>({2}, std::vector<double>{3, 10}));
    OpAttrs<double> attrs;
    attrs.factor = 4.0;
    EXPECT_EQ(g.value(g.forward_op(OpKind::scale, std::span(inputs, 1), attrs)).buffer(),
              (std::vector<double>{4, 8}));
    EXPECT_THROW(g.forward_op(OpKind::add, std::span(inputs, 1)), Error);
}

TEST(Forward, AssertFiniteRaisesOnOverflow) {
    Graph<float> strict(true);
    const Var big = strict.constant(Tensor<float>({1}, 1e30f));
    EXPECT_THROW(strict.mul(big, big), NumericsError);

    Graph<float> lax(false);
    const Var big2 = lax.constant(Tensor<float>({1}, 1e30f));
    EXPECT_TRUE(std::isinf(lax.value(lax.mul(big2, big2))[0]));
}

TEST(Forward, IsPure) {
    Rng rng(4);
    const Tensor<double> x = random_tensor({5, 8}, rng);
    const Tensor<double> w = random_tensor({8, 8}, rng);
    auto run = [&] {
        Graph<double> g;
        const Var h = g.gelu(g.matmul(g.constant(x), g.constant(w)));
        return g.value(g.softmax(g.layer_norm(h, g.constant(Tensor<double>({8}, 1.0)),
                                               g.constant(Tensor<double>({8})))));
    };
    EXPECT_EQ(run(), run());
}

TEST(Forward, GatherThenScatterRestoresSelectedRows) {
    Rng rng(5);
    const TokenGrid grid{2, 3};
    const Mask mask(grid, {1, 0, 1, 1, 0, 0}, MaskSpec{});
    const Tensor<double> tokens = random_tensor({6, 4}, rng);
    Graph<double> g;
    const Tensor<double> picked = g.value(g.gather_rows(g.constant(tokens), mask.tau()));
    Tensor<double> back({6, 4}, -7.0);
    scatter_visible(picked, mask, back);
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_EQ(back[r * 4 + j], mask.is_visible(r) ? tokens[r * 4 + j] : -7.0);
        }
    }
}

TEST(Backward, SquareGradientIsTwoX) {
    ParamSet<double> params;
    const std::size_t x = params.add("x", Tensor<double>({1}, 3.0));
    Graph<double> g;
    const Var v = g.param(params, x);
    const GradientMap<double> grads = g.backward(g.sum(g.mul(v, v)), params);
    EXPECT_DOUBLE_EQ(grads[x][0], 6.0);
}

TEST(Backward, MatmulMeanMatchesFiniteDifferences) {
    Rng rng(6);
    ParamSet<double> params;
    params.add("W", random_tensor({4, 5}, rng));
    const Tensor<double> x = random_tensor({5, 3}, rng);
    const LossFn<double> fn = [&](Graph<double>& g, const ParamSet<double>& p) {
        return g.mean(g.matmul(g.param(p, 0), g.constant(x)));
    };
    EXPECT_LT(grad_check(fn, params, 1e-4), 1e-6);
}

TEST(Backward, UnreachableParameterGetsZeros) {
    ParamSet<double> params;
    const std::size_t a = params.add("a", Tensor<double>({2}, 1.0));
    const std::size_t b = params.add("b", Tensor<double>({2, 2}, 1.0));
    Graph<double> g;
    const GradientMap<double> grads = g.backward(g.sum(g.param(params, a)), params);
    EXPECT_EQ(grads[b], Tensor<double>({2, 2}));
    EXPECT_EQ(grads[b].shape(), params.tensor(b).shape());
}

TEST(Backward, FrozenParameterGetsZeros) {
    ParamSet<double> params;
    const std::size_t a = params.add("a", Tensor<double>({2}, 1.0), false);
    Graph<double> g;
    const Var v = g.param(params, a);
    EXPECT_FALSE(g.requires_grad(v));
    EXPECT_EQ(g.backward(g.sum(g.mul(v, v)), params)[a], Tensor<double>({2}));
}

TEST(Backward, NonScalarLossIsRejected) {
    ParamSet<double> params;
    params.add("a", Tensor<double>({2}, 1.0));
    Graph<double> g;
    EXPECT_THROW(g.backward(g.param(params, 0), params), ContractError);
}

TEST(Backward, InputsPrecedeConsumers) {
    ParamSet<double> params;
    params.add("a", Tensor<double>({2, 2}, 1.0));
    Graph<double> g;
    const Var a = g.param(params, 0);
    const Var out = g.sum(g.softmax(g.matmul(a, g.transpose(a, {1, 0}))));
    for (std::size_t id = 0; id <= out.id; ++id) {
        for (std::size_t in : g.inputs(Var{id})) {
            EXPECT_LT(in, id);
        }
    }
}

TEST(GradCheck, QuadraticForm) {
    Rng rng(7);
    ParamSet<double> params;
    params.add("x", random_tensor({6, 1}, rng));
    Tensor<double> a = random_tensor({6, 6}, rng);
    const LossFn<double> fn = [&](Graph<double>& g, const ParamSet<double>& p) {
        const Var x = g.param(p, 0);
        return g.sum(g.mul(x, g.matmul(g.constant(a), x)));
    };
    EXPECT_LT(grad_check(fn, params, 1e-4), 1e-6);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
    ParamSet<double> params;
    params.add("x", Tensor<double>({3}, 1.0));
    const LossFn<double> fn = [](Graph<double>& g, const ParamSet<double>&) {
        return g.constant(Tensor<double>::scalar(4.0));
    };
    EXPECT_EQ(grad_check(fn, params, 1e-4), 0.0);
}

TEST(GradCheck, RejectsNonPositiveStep) {
    ParamSet<double> params;
    params.add("x", Tensor<double>({1}, 1.0));
    const LossFn<double> fn = [](Graph<double>& g, const ParamSet<double>& p) { return g.sum(g.param(p, 0)); };
    EXPECT_THROW(grad_check(fn, params, 0.0), ContractError);
}

// Every op, random inputs of dimension <= 16, double precision, h = 1e-4.
TEST(GradCheck, EveryOpAgreesWithCentralDifferences) {
    const std::vector<OpCase> cases = {
        {"matmul", {{3, 4}, {4, 5}}, [](Graph<double>& g, const auto& v) { return g.matmul(v[0], v[1]); }},
        {"batched_matmul", {{2, 3, 4}, {2, 4, 2}},
         [](Graph<double>& g, const auto& v) { return g.matmul(v[0], v[1]); }},
        {"add", {{3, 4}, {3, 4}}, [](Graph<double>& g, const auto& v) { return g.add(v[0], v[1]); }},
        {"add_bias", {{3, 4}, {4}}, [](Graph<double>& g, const auto& v) { return g.add(v[0], v[1]); }},
        {"add_scalar", {{3, 4}, {1}}, [](Graph<double>& g, const auto& v) { return g.add(v[0], v[1]); }},
        {"mul", {{3, 4}, {3, 4}}, [](Graph<double>& g, const auto& v) { return g.mul(v[0], v[1]); }},
        {"mul_bias", {{2, 3, 4}, {4}}, [](Graph<double>& g, const auto& v) { return g.mul(v[0], v[1]); }},
        {"scale", {{5}}, [](Graph<double>& g, const auto& v) { return g.scale(v[0], -1.7); }},
        {"reshape", {{2, 6}}, [](Graph<double>& g, const auto& v) { return g.reshape(v[0], {3, 4}); }},
        {"transpose", {{2, 3, 4}},
         [](Graph<double>& g, const auto& v) { return g.transpose(v[0], {2, 0, 1}); }},
        {"concat0", {{2, 3}, {4, 3}},
         [](Graph<double>& g, const auto& v) { return g.concat(std::span(v.data(), 2), 0); }},
        {"concat1", {{2, 1, 3}, {2, 2, 3}},
         [](Graph<double>& g, const auto& v) { return g.concat(std::span(v.data(), 2), 1); }},
        {"gather_rows", {{4, 3}},
         [](Graph<double>& g, const auto& v) { return g.gather_rows(v[0], {3, 0, 3, 1}); }},
        {"layer_norm", {{3, 6}, {6}, {6}},
         [](Graph<double>& g, const auto& v) { return g.layer_norm(v[0], v[1], v[2]); }},
        {"softmax", {{3, 5}}, [](Graph<double>& g, const auto& v) { return g.softmax(v[0]); }},
        {"gelu", {{16}}, [](Graph<double>& g, const auto& v) { return g.gelu(v[0]); }},
        {"sum", {{4, 4}}, [](Graph<double>& g, const auto& v) { return g.sum(v[0]); }},
        {"mean", {{4, 4}}, [](Graph<double>& g, const auto& v) { return g.mean(v[0]); }},
        {"squared_error", {{3, 4}, {3, 4}},
         [](Graph<double>& g, const auto& v) { return g.squared_error(v[0], v[1]); }},
    };
    for (const OpCase& c : cases) {
        Rng rng(11);
        ParamSet<double> params;
        for (std::size_t i = 0; i < c.params.size(); ++i) {
            params.add("p" + std::to_string(i), random_tensor(c.params[i], rng));
        }
        const LossFn<double> fn = [&](Graph<double>& g, const ParamSet<double>& p) {
            std::vector<Var> vars;
            for (std::size_t i = 0; i < p.size(); ++i) {
                vars.push_back(g.param(p, i));
            }
            return weighted_sum(g, c.build(g, vars), 99);
        };
        EXPECT_LT(grad_check(fn, params, 1e-4), 1e-6) << c.name;
    }
}

TEST(GradientMap, NormAndScale) {
    ParamSet<float> params;
    params.add("a", Tensor<float>({2}));
    GradientMap<float> grads(params);
    grads[0][0] = 3.0f;
    grads[0][1] = 4.0f;
    EXPECT_DOUBLE_EQ(grads.global_norm(), 5.0);
    grads.scale(0.5f);
    EXPECT_FLOAT_EQ(grads[0][1], 2.0f);
}

TEST(ParamSet, NamesAreUnique) {
    ParamSet<float> params;
    params.add("w", Tensor<float>({1}));
    EXPECT_THROW(params.add("w", Tensor<float>({1})), Error);
    EXPECT_EQ(params.find("w"), 0u);
    EXPECT_EQ(params.find("missing"), npos);
}
