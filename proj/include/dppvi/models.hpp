#pragma once

#include <cmath>

#include <Eigen/Core>

#include "dppvi/data.hpp"
#include "dppvi/errors.hpp"
#include "dppvi/expfam.hpp"
#include "dppvi/random.hpp"

namespace dppvi {

enum class ModelKind { logistic_regression, bnn_1hidden };

// Bernoulli-likelihood models over theta in R^d with a standard normal prior:
// logistic regression on the bias-augmented input, or a one-hidden-layer ReLU
// network whose scalar output is the logit.
struct ModelSpec {
    ModelKind kind = ModelKind::logistic_regression;
    int input_dim = 1;     // d' (without the bias)
    int hidden_units = 50; // BNN only

    // BNN parameter layout: [W1 row-major (h x d'), b1 (h), w2 (h), b2].
    int param_dim() const {
        if (kind == ModelKind::logistic_regression) return input_dim + 1;
        return (input_dim + 1) * hidden_units + hidden_units + 1;
    }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^z) without overflow
inline double log1pexp(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

namespace detail {

// Scalar logit f_theta(x); when grad != nullptr also fills d f / d theta.
inline double model_logit(const ModelSpec& model, const Eigen::VectorXd& theta,
                          const Eigen::Ref<const Eigen::RowVectorXd>& x,
                          Eigen::VectorXd* grad) {
    if (x.size() != model.input_dim)
        throw DimensionMismatch("model_logit: feature length != input_dim");
    if (theta.size() != model.param_dim())
        throw DimensionMismatch("model_logit: theta length != param_dim");
    if (model.kind == ModelKind::logistic_regression) {
        double z = theta[0] + x.dot(theta.tail(model.input_dim).transpose());
        if (grad) {
            grad->resize(theta.size());
            (*grad)[0] = 1.0;
            grad->tail(model.input_dim) = x.transpose();
        }
        return z;
    }
    const int h = model.hidden_units, di = model.input_dim;
    const auto w1 = theta.head(h * di);
    const auto b1 = theta.segment(h * di, h);
    const auto w2 = theta.segment(h * di + h, h);
    const double b2 = theta[h * di + 2 * h];
    Eigen::VectorXd pre(h), act(h);
    for (int j = 0; j < h; ++j) {
        pre[j] = b1[j] + x.dot(w1.segment(j * di, di).transpose());
        act[j] = pre[j] > 0.0 ? pre[j] : 0.0;  // ReLU, subgradient 0 at 0
    }
    double z = b2 + w2.dot(act);
    if (grad) {
        grad->setZero(theta.size());
        for (int j = 0; j < h; ++j) {
            if (pre[j] > 0.0) {
                grad->segment(j * di, di) = w2[j] * x.transpose();
                (*grad)[h * di + j] = w2[j];
            }
            (*grad)[h * di + h + j] = act[j];
        }
        (*grad)[h * di + 2 * h] = 1.0;
    }
    return z;
}

}  // namespace detail

inline double predict_proba(const ModelSpec& model, const Eigen::VectorXd& theta,
                            const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    return sigmoid(detail::model_logit(model, theta, x, nullptr));
}

// Variational parameters in optimization space (mean, log-variance); the
// variance stays positive with unconstrained updates.
struct VariationalParams {
    Eigen::VectorXd mean;
    Eigen::VectorXd log_var;

    static VariationalParams from_natural(const MeanFieldGaussian& q) {
        MomentGaussian m = to_moment(q);
        return VariationalParams{m.mean, m.variance.array().log().matrix()};
    }

    MeanFieldGaussian to_natural() const {
        return dppvi::to_natural(
            MomentGaussian{mean, log_var.array().exp().matrix()});
    }

    Eigen::VectorXd std_dev() const { return (0.5 * log_var.array()).exp(); }
    Eigen::Index dim() const { return mean.size(); }

    // stacked optimization vector [mean; log_var]
    Eigen::VectorXd stacked() const {
        Eigen::VectorXd v(2 * mean.size());
        v.head(mean.size()) = mean;
        v.tail(mean.size()) = log_var;
        return v;
    }
    static VariationalParams from_stacked(const Eigen::VectorXd& v) {
        Eigen::Index d = v.size() / 2;
        return VariationalParams{v.head(d), v.tail(d)};
    }
};

// One evaluation of the local ELBO
//   temper * sum_i E_q[log p(x_i | theta)] - kl_weight * KL(q || prior)
// with reparameterized Monte-Carlo gradients in (mean, log-variance) space.
// Per-example rows carry only the likelihood part so a DP step can clip them;
// the KL gradient is exact, data independent, and kept separate.
struct ElboGradReport {
    double elbo_value = 0.0;
    Eigen::MatrixXd per_example_loglik_grads;  // n x 2d when materialized
    Eigen::VectorXd loglik_grad_total;         // sum of rows in index order
    Eigen::VectorXd kl_grad;                   // gradient of -KL(q || prior)
    double kl_weight = 1.0;
    int mc_samples = 1;
    bool has_rows = false;

    Eigen::VectorXd total_grad() const {
        return loglik_grad_total + kl_weight * kl_grad;
    }
};

inline ElboGradReport elbo_and_grad(const MeanFieldGaussian& q,
                                    const Eigen::VectorXd& effective_prior,
                                    const Dataset& batch, const ModelSpec& model,
                                    double kl_weight, double likelihood_temper,
                                    int mc_samples, RandomStream& rng,
                                    bool materialize_rows = true) {
    if (kl_weight <= 0.0) throw DomainError("elbo_and_grad: kl_weight must be > 0");
    if (likelihood_temper < 1.0)
        throw DomainError("elbo_and_grad: likelihood_temper must be >= 1");
    if (mc_samples < 1) throw DomainError("elbo_and_grad: mc_samples must be >= 1");
    if (q.dim() != model.param_dim())
        throw DimensionMismatch("elbo_and_grad: q dimension != model param_dim");
    if (batch.n() > 0 && batch.input_dim() != model.input_dim)
        throw DimensionMismatch("elbo_and_grad: batch feature width != input_dim");
    MeanFieldGaussian prior = MeanFieldGaussian::from_lambda(effective_prior);
    if (!(prior.eta2.array() < 0.0).all())
        throw NonNormalizable("elbo_and_grad: effective prior is not normalizable");

    const Eigen::Index d = q.dim();
    const int n = batch.n();
    VariationalParams vp = VariationalParams::from_natural(q);
    const Eigen::VectorXd sd = vp.std_dev();

    Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(n, 2 * d);
    double loglik_sum = 0.0;
    Eigen::VectorXd theta(d), dll(d);
    for (int s = 0; s < mc_samples; ++s) {
        Eigen::VectorXd eps = rng.normal_vector(d);
        theta = vp.mean.array() + sd.array() * eps.array();
        for (int i = 0; i < n; ++i) {
            double z = detail::model_logit(model, theta, batch.features.row(i), &dll);
            double y = batch.labels[i];
            loglik_sum += y * z - log1pexp(z);
            dll *= y - sigmoid(z);  // d loglik / d theta
            rows.row(i).head(d) += dll;
            rows.row(i).tail(d).array() += dll.array() * eps.array() * sd.array() * 0.5;
        }
    }
    rows *= likelihood_temper / static_cast<double>(mc_samples);

    // closed-form Gaussian-Gaussian KL against the effective prior
    MomentGaussian mp = to_moment(prior);
    const Eigen::VectorXd v = vp.log_var.array().exp();
    double kl = 0.0;
    Eigen::VectorXd kl_grad(2 * d);
    for (Eigen::Index j = 0; j < d; ++j) {
        double dm = vp.mean[j] - mp.mean[j];
        kl += 0.5 * (std::log(mp.variance[j] / v[j]) +
                     (v[j] + dm * dm) / mp.variance[j] - 1.0);
        kl_grad[j] = -dm / mp.variance[j];
        kl_grad[d + j] = 0.5 * (1.0 - v[j] / mp.variance[j]);
    }

    ElboGradReport report;
    report.elbo_value = likelihood_temper * loglik_sum / mc_samples - kl_weight * kl;
    report.loglik_grad_total = Eigen::VectorXd::Zero(2 * d);
    for (int i = 0; i < n; ++i) report.loglik_grad_total += rows.row(i);
    report.kl_grad = std::move(kl_grad);
    report.kl_weight = kl_weight;
    report.mc_samples = mc_samples;
    report.has_rows = materialize_rows;
    if (materialize_rows) report.per_example_loglik_grads = std::move(rows);
    return report;
}

// Monte-Carlo posterior predictive: (1 / n_mc) sum_i sigmoid(f_{theta_i}(x)),
// theta_i ~ q.
inline Eigen::VectorXd posterior_predictive(const MeanFieldGaussian& q,
                                            const Eigen::MatrixXd& X,
                                            const ModelSpec& model, int n_mc,
                                            RandomStream& rng) {
    if (n_mc < 1) throw DomainError("posterior_predictive: n_mc must be >= 1");
    if (X.cols() != model.input_dim)
        throw DimensionMismatch("posterior_predictive: feature width != input_dim");
    if (q.dim() != model.param_dim())
        throw DimensionMismatch("posterior_predictive: q dimension != param_dim");
    MomentGaussian m = to_moment(q);
    const Eigen::VectorXd sd = m.variance.array().sqrt();
    Eigen::VectorXd probs = Eigen::VectorXd::Zero(X.rows());
    Eigen::VectorXd theta(q.dim());
    for (int s = 0; s < n_mc; ++s) {
        Eigen::VectorXd eps = rng.normal_vector(q.dim());
        theta = m.mean.array() + sd.array() * eps.array();
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            probs[i] += sigmoid(detail::model_logit(model, theta, X.row(i), nullptr));
    }
    return probs / static_cast<double>(n_mc);
}

struct EvalResult {
    double accuracy = 0.0;
    double mean_loglik = 0.0;
};

// Accuracy at the 0.5 threshold (ties predict class 1) and mean Bernoulli
// log-likelihood with probabilities clamped to [1e-12, 1 - 1e-12].
inline EvalResult evaluate(const Eigen::VectorXd& probs, const Eigen::VectorXd& labels) {
    if (probs.size() != labels.size())
        throw LengthMismatch("evaluate: probs/labels length mismatch");
    if (probs.size() == 0) throw LengthMismatch("evaluate: empty input");
    double correct = 0.0, ll = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        double y = labels[i];
        correct += ((probs[i] >= 0.5) == (y > 0.5)) ? 1.0 : 0.0;
        double p_event = y > 0.5 ? probs[i] : 1.0 - probs[i];
        ll += std::log(std::clamp(p_event, 1e-12, 1.0));
    }
    double n = static_cast<double>(probs.size());
    return EvalResult{correct / n, ll / n};
}

}  // namespace dppvi
