#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "maskdm/compute/graph.hpp"

namespace maskdm::compute {

// Scalar-valued function of the parameters, recorded on the supplied graph.
template <typename T>
using LossFn = std::function<Var(Graph<T>&, const ParamSet<T>&)>;

// Maximum relative error between backward() gradients and central
// differences (f(p+h) - f(p-h)) / 2h over every trainable element. The
// denominator is max(|analytic|, |numeric|, 1e-8). `fn` must be
// deterministic; any randomness has to be fixed outside of it.
template <typename T>
double grad_check(const LossFn<T>& fn, ParamSet<T>& params, T h) {
    if (!(h > T(0))) {
        throw ContractError("grad_check: step must be positive");
    }
    GradientMap<T> analytic;
    {
        Graph<T> g;
        Var loss = fn(g, params);
        analytic = g.backward(loss, params);
    }
    auto evaluate = [&]() {
        Graph<T> g;
        return static_cast<double>(g.value(fn(g, params)).item());
    };
    double worst = 0.0;
    for (std::size_t id = 0; id < params.size(); ++id) {
        if (!params.trainable(id)) {
            continue;
        }
        auto values = params.tensor(id).data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const T saved = values[i];
            values[i] = saved + h;
            const double up = evaluate();
            values[i] = saved - h;
            const double down = evaluate();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * static_cast<double>(h));
            const double exact = static_cast<double>(analytic[id][i]);
            const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(exact - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace maskdm::compute
