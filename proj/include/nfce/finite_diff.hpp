#pragma once

#include <cmath>
#include <functional>

#include "nfce/errors.hpp"
#include "nfce/tensor.hpp"

namespace nfce {

// Central-difference gradient of a scalar function, used as the independent
// oracle for the tape. h defaults to the value the gradient checks are
// specified at.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                               const Tensor& x, double h = 1e-5) {
    NFCE_REQUIRE(h > 0.0, "finite_diff_grad: h must be > 0");
    Tensor g(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                               std::to_string(i));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Max over coordinates of |a - b| / max(1, |b|); the acceptance threshold
// for gradient checks compares autodiff against finite differences with
// this metric.
inline double max_rel_err(const Tensor& a, const Tensor& b) {
    NFCE_REQUIRE(a.same_shape(b), "max_rel_err: shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max(1.0, std::abs(b[i]));
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace nfce
