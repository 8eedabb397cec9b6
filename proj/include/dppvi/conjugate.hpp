#pragma once

#include <cmath>

#include <Eigen/Core>

#include "dppvi/errors.hpp"

namespace dppvi {

// Two d=1 conjugate-exponential families used as analytically tractable
// models: Beta posterior over a Bernoulli rate, and a Gaussian posterior over
// the mean of a Gaussian with known observation variance. For both, the
// maximizer of
//     temper * sum_i E_q[log p(x_i | theta)] - kl_weight * KL(q || prior)
// over the full conjugate family is exact:
//     lambda* = lambda_prior + (temper / kl_weight) * sum_i T(x_i).

enum class ConjugateKind { beta_bernoulli, gaussian_mean };

struct ConjugateFamily {
    ConjugateKind kind = ConjugateKind::beta_bernoulli;
    double obs_variance = 1.0;  // gaussian_mean only

    Eigen::Index lambda_dim() const { return 2; }

    // Natural parameters of the default prior: Beta(1,1) stored as
    // (alpha-1, beta-1) = (0, 0), or N(0, 1) stored as (mu/v, -1/(2v)).
    Eigen::VectorXd prior_lambda() const {
        Eigen::VectorXd lam(2);
        if (kind == ConjugateKind::beta_bernoulli) {
            lam << 0.0, 0.0;
        } else {
            lam << 0.0, -0.5;
        }
        return lam;
    }

    // Sufficient statistic of one observation.
    Eigen::VectorXd suff_stat(double x) const {
        Eigen::VectorXd t(2);
        if (kind == ConjugateKind::beta_bernoulli) {
            t << x, 1.0 - x;
        } else {
            t << x / obs_variance, -0.5 / obs_variance;
        }
        return t;
    }

    bool normalizable(const Eigen::VectorXd& lam) const {
        if (lam.size() != 2) return false;
        if (kind == ConjugateKind::beta_bernoulli)
            return lam[0] > -1.0 && lam[1] > -1.0;  // alpha, beta > 0
        return lam[1] < 0.0;
    }

    // Predictive p(x* = 1) for Beta-Bernoulli, i.e. E[theta] = a/(a+b).
    double predictive_prob(const Eigen::VectorXd& lam) const {
        if (kind != ConjugateKind::beta_bernoulli)
            throw DomainError("predictive_prob: Bernoulli predictive only");
        double a = lam[0] + 1.0, b = lam[1] + 1.0;
        return a / (a + b);
    }

    // Exact posterior given prior natural parameters and observations.
    Eigen::VectorXd exact_posterior(const Eigen::VectorXd& prior,
                                    const Eigen::VectorXd& data) const {
        Eigen::VectorXd lam = prior;
        for (Eigen::Index i = 0; i < data.size(); ++i) lam += suff_stat(data[i]);
        return lam;
    }
};

}  // namespace dppvi
