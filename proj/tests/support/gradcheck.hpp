#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "ldp/autograd.hpp"
#include "ldp/tensor.hpp"

namespace ldp::testing {

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({1e-6, std::fabs(analytic), std::fabs(numeric)});
    return std::fabs(analytic - numeric) / denom;
}

// Central finite differences against the tape gradient, step 1e-5. make_loss
// must be a pure function of its input tensor. Returns the max relative error
// over all (or every stride-th) element.
inline double grad_max_rel_err(const Tensor& x0,
                               const std::function<Var(Tape&, Var)>& make_loss,
                               double step = 1e-5, int stride = 1) {
    Tape tape;
    Var x = tape.input(x0);
    Var loss = make_loss(tape, x);
    tape.backward(loss);
    const Tensor analytic = tape.grad(x);

    auto eval = [&](const Tensor& xt) {
        Tape t;
        Var xv = t.input(xt);
        Var l = make_loss(t, xv);
        return t.value(l).data[0];
    };

    double worst = 0.0;
    Tensor xt = x0;
    for (size_t i = 0; i < x0.data.size(); i += static_cast<size_t>(stride)) {
        const double orig = xt.data[i];
        xt.data[i] = orig + step;
        const double fp = eval(xt);
        xt.data[i] = orig - step;
        const double fm = eval(xt);
        xt.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        worst = std::max(worst, rel_err(analytic.data[i], numeric));
    }
    return worst;
}

}  // namespace ldp::testing
