#pragma once

// Central finite-difference gradient oracle used across the test suites.
// Kept independent of the autodiff tape: it only ever calls a black-box
// scalar function of a flat parameter vector.

#include <functional>

#include "semsec/tensor.hpp"

namespace semsec_test {

using semsec::Tensor;

/// Central differences of f at x, step eps per coordinate.
inline Tensor<double> fd_gradient(const std::function<double(const Tensor<double>&)>& f,
                                  const Tensor<double>& x, double eps = 1e-5) {
    Tensor<double> g(x.shape());
    Tensor<double> xp = x;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        xp[i] = v + eps;
        const double fp = f(xp);
        xp[i] = v - eps;
        const double fm = f(xp);
        xp[i] = v;
        g[i] = (fp - fm) / (2 * eps);
    }
    return g;
}

/// || a - b ||_2 / (|| b ||_2 + tiny)
inline double rel_err(const Tensor<double>& a, const Tensor<double>& b) {
    double num = 0, den = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / (std::sqrt(den) + 1e-300);
}

} // namespace semsec_test
