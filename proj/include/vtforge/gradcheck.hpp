#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vtforge/error.hpp"
#include "vtforge/graph.hpp"
#include "vtforge/tensor.hpp"

namespace vtforge {

// Builds a scalar node from the probe input inside the supplied graph.
template <typename T>
using ScalarBuilder = std::function<typename Graph<T>::Id(Graph<T>&, typename Graph<T>::Id)>;

// Central-difference check of the tape's analytic gradient at one point.
// Returns max over coordinates of |analytic - central| / max(|analytic|,
// |central|, 1e-8). The probe function is evaluated through rebind +
// recompute, so the value path checked is exactly the production one.
template <typename T>
double finite_difference_check(const ScalarBuilder<T>& build, const Tensor<T>& point, double step) {
    if (!(step > 0)) fail(ErrKind::kConfig, "finite_difference_check: step must be positive");
    Graph<T> g;
    auto x = g.input("x", point, /*requires_grad=*/true);
    auto out = build(g, x);
    if (g.value(out).size() != 1)
        fail(ErrKind::kShape, "finite_difference_check: builder must produce a scalar");
    if (!std::isfinite(double(g.value(out).data[0])))
        fail(ErrKind::kNumeric, "finite_difference_check: non-finite value at probe point");
    g.backward(out);
    std::vector<T> analytic = g.grad(x);

    double worst = 0.0;
    Tensor<T> probe = point;
    for (size_t i = 0; i < point.data.size(); ++i) {
        probe.data[i] = T(double(point.data[i]) + step);
        g.rebind("x", probe);
        g.recompute();
        double fp = double(g.value(out).data[0]);
        probe.data[i] = T(double(point.data[i]) - step);
        g.rebind("x", probe);
        g.recompute();
        double fm = double(g.value(out).data[0]);
        probe.data[i] = point.data[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            fail(ErrKind::kNumeric, "finite_difference_check: non-finite value near coordinate " +
                                        std::to_string(i));
        double central = (fp - fm) / (2.0 * step);
        double a = double(analytic[i]);
        double err = std::abs(a - central) / std::max({std::abs(a), std::abs(central), 1e-8});
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace vtforge
