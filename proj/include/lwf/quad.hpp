#pragma once

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace lwf {

inline double log_gamma(double x) { return boost::math::lgamma(x); }

inline double log_beta(double a, double b) {
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b);
}

inline double log_choose(double n, double k) {
    return log_gamma(n + 1.0) - log_gamma(k + 1.0) - log_gamma(n - k + 1.0);
}

// Integral over (0,1). The integrand receives (z, one_minus_z) with the
// complement computed exactly near the right endpoint, which matters for
// kernels with a singular factor (1-z)^(b-1), b < 1.
template <typename F>
double integrate_unit(F&& f, double tol = 1e-12) {
    boost::math::quadrature::tanh_sinh<double> integ;
    double error = 0.0;
    // zc is the (positive) distance to the nearest endpoint.
    auto g = [&f](double z, double zc) {
        const double omz = (z > 0.5) ? zc : 1.0 - z;
        return f(z, omz);
    };
    return integ.integrate(g, 0.0, 1.0, tol, &error);
}

}  // namespace lwf
