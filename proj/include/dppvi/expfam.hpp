#pragma once

#include <cmath>
#include <optional>

#include <Eigen/Core>

#include "dppvi/errors.hpp"

namespace dppvi {

struct MomentGaussian {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;  // strictly positive, per coordinate
};

// Mean-field Gaussian in natural parameterization, one (eta1, eta2) pair per
// coordinate: eta1 = mu / var, eta2 = -1 / (2 var). Normalizable iff every
// eta2 < 0.
struct MeanFieldGaussian {
    Eigen::VectorXd eta1;
    Eigen::VectorXd eta2;

    Eigen::Index dim() const { return eta1.size(); }

    // stacked natural-parameter vector [eta1; eta2], length 2d
    Eigen::VectorXd lambda() const {
        Eigen::VectorXd out(2 * eta1.size());
        out.head(eta1.size()) = eta1;
        out.tail(eta2.size()) = eta2;
        return out;
    }

    static MeanFieldGaussian from_lambda(const Eigen::VectorXd& lam) {
        if (lam.size() % 2 != 0)
            throw DimensionMismatch("natural-parameter vector length must be even");
        Eigen::Index d = lam.size() / 2;
        return MeanFieldGaussian{lam.head(d), lam.tail(d)};
    }

    // N(0, I): eta1 = 0, eta2 = -1/2
    static MeanFieldGaussian standard(Eigen::Index d) {
        return MeanFieldGaussian{Eigen::VectorXd::Zero(d),
                                 Eigen::VectorXd::Constant(d, -0.5)};
    }
};

// Unnormalized exponential-family site t(theta | lambda). Unlike
// MeanFieldGaussian, the eta2 block may contain nonnegative entries; only the
// full product prior * prod_j t_j has to stay normalizable.
struct Factor {
    Eigen::VectorXd lambda;  // stacked [eta1; eta2], length 2d
    int owner = -1;
    std::optional<int> shard_index;

    static Factor zero(Eigen::Index d, int owner = -1) {
        return Factor{Eigen::VectorXd::Zero(2 * d), owner, std::nullopt};
    }
};

inline bool normalizable(const Eigen::VectorXd& lambda) {
    Eigen::Index d = lambda.size() / 2;
    return lambda.size() % 2 == 0 && (lambda.tail(d).array() < 0.0).all();
}

inline MomentGaussian to_moment(const MeanFieldGaussian& q) {
    if (q.eta1.size() != q.eta2.size())
        throw DimensionMismatch("eta1/eta2 length mismatch");
    if (!(q.eta2.array() < 0.0).all())
        throw NonNormalizable("to_moment: eta2 must be negative in every coordinate");
    Eigen::VectorXd variance = (-2.0 * q.eta2.array()).inverse();
    Eigen::VectorXd mean = q.eta1.array() * variance.array();
    return MomentGaussian{mean, variance};
}

inline MeanFieldGaussian to_natural(const MomentGaussian& m) {
    if (m.mean.size() != m.variance.size())
        throw DimensionMismatch("mean/variance length mismatch");
    if (!(m.variance.array() > 0.0).all())
        throw DomainError("to_natural: variance must be strictly positive");
    Eigen::VectorXd eta2 = -0.5 * m.variance.array().inverse();
    Eigen::VectorXd eta1 = m.mean.array() / m.variance.array();
    return MeanFieldGaussian{eta1, eta2};
}

// Product (sign = +1) or quotient (sign = -1) of exponential-family terms:
// plain addition/subtraction of stacked natural parameters.
inline Eigen::VectorXd combine(const Eigen::VectorXd& base,
                               const Eigen::VectorXd& delta, int sign) {
    if (base.size() != delta.size())
        throw DimensionMismatch("combine: operand lengths differ");
    if (sign != 1 && sign != -1) throw DomainError("combine: sign must be +1 or -1");
    return base + static_cast<double>(sign) * delta;
}

// KL(q || p) for two mean-field Gaussians, summed over coordinates.
inline double kl_divergence(const MeanFieldGaussian& q, const MeanFieldGaussian& p) {
    if (q.dim() != p.dim()) throw DimensionMismatch("kl_divergence: dimension mismatch");
    MomentGaussian mq = to_moment(q);
    MomentGaussian mp = to_moment(p);
    double kl = 0.0;
    for (Eigen::Index i = 0; i < q.dim(); ++i) {
        double vq = mq.variance[i], vp = mp.variance[i];
        double dm = mq.mean[i] - mp.mean[i];
        kl += 0.5 * (std::log(vp / vq) + (vq + dm * dm) / vp - 1.0);
    }
    return kl;
}

// (1 - rho) * old + rho * new, rho in (0, 1]
inline Eigen::VectorXd damp(const Eigen::VectorXd& old_lambda,
                            const Eigen::VectorXd& new_lambda, double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) throw DomainError("damp: rho must be in (0, 1]");
    if (old_lambda.size() != new_lambda.size())
        throw DimensionMismatch("damp: operand lengths differ");
    return (1.0 - rho) * old_lambda + rho * new_lambda;
}

}  // namespace dppvi
