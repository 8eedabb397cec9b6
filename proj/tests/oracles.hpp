#pragma once

// Independent oracles used only by tests. Everything here is computed by a
// different route than the library code it checks: quadrature instead of
// closed forms, finite differences instead of reparameterized gradients, a
// privacy-loss tail integral instead of the accountant's bound arithmetic.

#include <cmath>
#include <functional>
#include <stdexcept>

#include <Eigen/Core>

namespace oracles {

// Simpson's rule on [a, b] with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
    if (n % 2 != 0) ++n;
    double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return s * h / 3.0;
}

inline double normal_pdf(double x, double mu, double var) {
    double d = x - mu;
    return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
}

inline double normal_logpdf(double x, double mu, double var) {
    double d = x - mu;
    return -0.5 * d * d / var - 0.5 * std::log(2.0 * M_PI * var);
}

// KL(N(mu_q, var_q) || N(mu_p, var_p)) by quadrature of q (log q - log p),
// with the log densities expanded analytically so the tails do not underflow.
inline double kl_gaussian_quadrature(double mu_q, double var_q, double mu_p, double var_p) {
    double sd = std::sqrt(var_q);
    auto integrand = [&](double x) {
        return normal_pdf(x, mu_q, var_q) *
               (normal_logpdf(x, mu_q, var_q) - normal_logpdf(x, mu_p, var_p));
    };
    return simpson(integrand, mu_q - 25.0 * sd, mu_q + 25.0 * sd, 40000);
}

// delta(eps) of a single Gaussian mechanism with noise multiplier s, computed
// by integrating the positive part of the privacy-loss tail:
//   delta = integral max(0, p0(x) - e^eps p1(x)) dx,  p0 = N(0, s^2),
//   p1 = N(1, s^2). The integrand is positive exactly where the privacy loss
//   log(p0/p1) = (1 - 2x) / (2 s^2) exceeds eps.
inline double gaussian_mechanism_delta_numeric(double eps, double s) {
    double var = s * s;
    double cutoff = 0.5 - eps * var;  // loss > eps iff x < cutoff
    double lo = -40.0 * s;
    if (cutoff <= lo) return 0.0;
    auto integrand = [&](double x) {
        return normal_pdf(x, 0.0, var) - std::exp(eps) * normal_pdf(x, 1.0, var);
    };
    return simpson(integrand, lo, cutoff, 200000);
}

// Numeric inversion of the tail integral: smallest eps with delta(eps) <= delta.
inline double gaussian_mechanism_epsilon_numeric(double delta, double s) {
    double lo = 0.0, hi = 1.0;
    while (gaussian_mechanism_delta_numeric(hi, s) > delta) {
        hi *= 2.0;
        if (hi > 1e6) throw std::runtime_error("epsilon oracle: no bracket");
    }
    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        if (gaussian_mechanism_delta_numeric(mid, s) <= delta)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

// Central finite difference of f along coordinate j with step h. The caller
// makes f deterministic (common random numbers).
inline double central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, int j, double h) {
    Eigen::VectorXd up = x, dn = x;
    up[j] += h;
    dn[j] -= h;
    return (f(up) - f(dn)) / (2.0 * h);
}

// Exact conjugate posterior for the Gaussian-mean model with known
// observation variance, in precision arithmetic (independent of the
// natural-parameter route under test).
struct GaussianMeanPosterior {
    double mean;
    double variance;
};

inline GaussianMeanPosterior gaussian_mean_posterior(double prior_mean, double prior_var,
                                                     double obs_var,
                                                     const Eigen::VectorXd& data) {
    double prec = 1.0 / prior_var + data.size() / obs_var;
    double m = (prior_mean / prior_var + data.sum() / obs_var) / prec;
    return GaussianMeanPosterior{m, 1.0 / prec};
}

// One-sided sign test p-value: P(X >= k) for X ~ Binomial(n, 1/2).
inline double sign_test_pvalue(int k, int n) {
    double p = 0.0;
    for (int i = k; i <= n; ++i) {
        double logc = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
        p += std::exp(logc - n * std::log(2.0));
    }
    return p;
}

}  // namespace oracles
