#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "dppvi/errors.hpp"
#include "dppvi/models.hpp"
#include "dppvi/random.hpp"

namespace dppvi {

enum class MechanismKind { dp_sgd, update_perturbation };

// Per-client DP configuration. noise std of a release = noise_multiplier *
// sensitivity, with sensitivity fixed to 2 * clip_norm (substitution
// neighborhood) by the mechanism call sites.
struct DpConfig {
    bool enabled = false;
    double clip_norm = std::numeric_limits<double>::infinity();  // C
    double noise_multiplier = 0.0;                               // sigma
    double target_epsilon = 0.0;  // used when sigma is calibrated from (eps, delta)
    double target_delta = 1e-5;
    double subsample_fraction = 1.0;  // q_sample, batch / n_m
    MechanismKind mechanism = MechanismKind::dp_sgd;

    void validate() const {
        if (!(clip_norm > 0.0)) throw DomainError("dp: clip_norm must be > 0");
        if (noise_multiplier < 0.0) throw DomainError("dp: noise_multiplier must be >= 0");
        if (!(target_delta > 0.0 && target_delta < 1.0))
            throw DomainError("dp: delta must be in (0, 1)");
        if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
            throw DomainError("dp: q_sample must be in (0, 1]");
        if (noise_multiplier > 0.0 && !std::isfinite(clip_norm))
            throw DomainError("dp: clipping is required when noise is added");
    }
};

// Projects v onto the l2 ball of radius C. Returns v untouched (bit-exact)
// when it is already inside.
inline Eigen::VectorXd clip_to_ball(const Eigen::VectorXd& v, double C) {
    if (!(C > 0.0)) throw DomainError("clip_to_ball: C must be > 0");
    double norm = v.norm();
    if (norm <= C) return v;
    return v * (C / norm);
}

// Gaussian mechanism: v + xi with xi ~ N(0, (sigma * sensitivity)^2 I).
// sigma == 0 returns v exactly and consumes no randomness.
inline Eigen::VectorXd gaussian_mechanism(const Eigen::VectorXd& v, double sensitivity,
                                          double sigma, RandomStream& rng) {
    if (!(sensitivity > 0.0)) throw DomainError("gaussian_mechanism: sensitivity must be > 0");
    if (sigma < 0.0) throw DomainError("gaussian_mechanism: sigma must be >= 0");
    if (sigma == 0.0) return v;
    return v + sigma * sensitivity * rng.normal_vector(v.size());
}

// ---------------------------------------------------------------------------
// Accounting oracle: (delta, q_sample, T, sigma) -> epsilon for a T-fold
// composition of the subsampled Gaussian mechanism with noise multiplier
// sigma. Two valid upper bounds are combined:
//   1. Renyi-DP of the subsampled Gaussian (integer orders, the standard
//      Poisson-subsampling formula; labelled approximate-WOR in run metadata
//      since our simulator samples without replacement), composed linearly in
//      T and converted to (eps, delta).
//   2. The tight bound for the unsubsampled case: T Gaussian mechanisms
//      compose exactly into one Gaussian mechanism with multiplier
//      sigma / sqrt(T), whose exact (eps, delta) curve is known in closed
//      form. Subsampling never increases the leakage of a step, so the bound
//      remains valid for q < 1.
// Taking the minimum keeps the oracle monotone in all four arguments.
// ---------------------------------------------------------------------------

namespace accounting {

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// log Phi(x), with an asymptotic expansion where erfc underflows.
inline double log_std_normal_cdf(double x) {
    if (x > -36.0) return std::log(std_normal_cdf(x));
    double x2 = x * x;
    // Phi(x) ~ phi(x)/(-x) (1 - 1/x^2 + 3/x^4 - 15/x^6) for x << 0
    double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) +
           std::log(series);
}

// Exact delta(eps) of a single Gaussian mechanism with noise multiplier s.
// The e^eps term is assembled in log space; the product can underflow but the
// true value never exceeds the leading term.
inline double gaussian_mechanism_delta(double eps, double s) {
    double a = std_normal_cdf(1.0 / (2.0 * s) - eps * s);
    double log_b = eps + log_std_normal_cdf(-1.0 / (2.0 * s) - eps * s);
    double b = std::exp(std::min(log_b, 0.0));
    return std::max(0.0, a - b);
}

// Smallest eps with delta(eps) <= delta for a Gaussian mechanism at
// multiplier s, found by bisection on the monotone profile.
inline double gaussian_mechanism_epsilon(double delta, double s) {
    if (gaussian_mechanism_delta(0.0, s) <= delta) return 0.0;
    double lo = 0.0, hi = 1.0;
    while (gaussian_mechanism_delta(hi, s) > delta) {
        hi *= 2.0;
        if (hi > 1e10) throw DivergentEpsilon("accountant: no finite epsilon below cap");
    }
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (gaussian_mechanism_delta(mid, s) <= delta)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

inline double log_binom(int n, int k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Renyi divergence of order alpha (integer >= 2) for one subsampled Gaussian
// step with sampling fraction q and noise multiplier sigma.
inline double rdp_subsampled_gaussian(double q, double sigma, int alpha) {
    if (q >= 1.0) return alpha / (2.0 * sigma * sigma);
    // log sum_k C(alpha,k) (1-q)^(alpha-k) q^k exp((k^2 - k) / (2 sigma^2))
    double max_term = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(alpha + 1);
    for (int k = 0; k <= alpha; ++k) {
        terms[k] = log_binom(alpha, k) + (alpha - k) * std::log1p(-q) +
                   k * std::log(q) + (static_cast<double>(k) * k - k) /
                                         (2.0 * sigma * sigma);
        max_term = std::max(max_term, terms[k]);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - max_term);
    return (max_term + std::log(s)) / (alpha - 1.0);
}

// RDP -> (eps, delta) conversion, minimized over the order grid.
inline double rdp_to_epsilon(double rdp, int alpha, double delta) {
    double eps = rdp + std::log((alpha - 1.0) / alpha) -
                 (std::log(delta) + std::log(static_cast<double>(alpha))) / (alpha - 1.0);
    return std::max(0.0, eps);
}

inline const std::vector<int>& alpha_grid() {
    static const std::vector<int> grid = [] {
        std::vector<int> g;
        for (int a = 2; a <= 128; ++a) g.push_back(a);
        for (int a : {160, 192, 256, 320, 512, 768, 1024}) g.push_back(a);
        return g;
    }();
    return grid;
}

}  // namespace accounting

inline double accountant_epsilon(double delta, double q_sample, long T,
                                 double noise_multiplier) {
    if (!(delta > 0.0 && delta < 1.0)) throw DomainError("accountant: delta must be in (0, 1)");
    if (!(q_sample > 0.0 && q_sample <= 1.0))
        throw DomainError("accountant: q_sample must be in (0, 1]");
    if (T < 1) throw DomainError("accountant: T must be >= 1");
    if (!(noise_multiplier > 0.0)) throw DomainError("accountant: sigma must be > 0");

    double eps = std::numeric_limits<double>::infinity();
    for (int alpha : accounting::alpha_grid()) {
        double rdp = T * accounting::rdp_subsampled_gaussian(q_sample, noise_multiplier, alpha);
        eps = std::min(eps, accounting::rdp_to_epsilon(rdp, alpha, delta));
    }
    try {
        double tight = accounting::gaussian_mechanism_epsilon(
            delta, noise_multiplier / std::sqrt(static_cast<double>(T)));
        eps = std::min(eps, tight);
    } catch (const DivergentEpsilon&) {
        // keep the RDP value, checked below
    }
    if (!std::isfinite(eps) || eps > 1e9)
        throw DivergentEpsilon("accountant: sigma too small to certify a bound");
    return eps;
}

// Smallest noise multiplier (on a relative-tolerance-1e-3 bisection grid) with
// accountant_epsilon(...) <= target_epsilon. The returned value is always on
// the certified side of the bracket.
inline double calibrate_sigma(double target_epsilon, double delta, double q_sample,
                              long T) {
    if (!(target_epsilon > 0.0)) throw DomainError("calibrate: epsilon must be > 0");
    constexpr double kLo = 1e-3, kHi = 1e6;
    auto feasible = [&](double sigma) {
        try {
            return accountant_epsilon(delta, q_sample, T, sigma) <= target_epsilon;
        } catch (const DivergentEpsilon&) {
            return false;
        }
    };
    if (feasible(kLo)) return kLo;
    double lo = kLo, hi = kLo;
    while (!feasible(hi)) {
        hi *= 2.0;
        if (hi > kHi) throw CalibrationFailed("calibrate: no sigma <= 1e6 meets the target");
        lo = hi / 2.0;
    }
    while (hi - lo > 1e-3 * hi) {
        double mid = 0.5 * (lo + hi);
        if (feasible(mid))
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

// Append-only record of mechanism invocations for one client, composed by the
// accounting oracle.
class PrivacyLedger {
  public:
    struct Entry {
        MechanismKind kind = MechanismKind::dp_sgd;
        double sigma = 0.0;
        double q_sample = 1.0;
        long invocations = 0;
    };

    explicit PrivacyLedger(int owner = -1) : owner_(owner) {}

    void record(MechanismKind kind, double sigma, double q_sample, long count = 1) {
        if (count < 0) throw DomainError("ledger: negative invocation count");
        for (auto& e : entries_) {
            if (e.kind == kind && e.sigma == sigma && e.q_sample == q_sample) {
                e.invocations += count;
                return;
            }
        }
        entries_.push_back(Entry{kind, sigma, q_sample, count});
    }

    const std::vector<Entry>& entries() const { return entries_; }
    int owner() const { return owner_; }

    long total_invocations() const {
        long t = 0;
        for (const auto& e : entries_) t += e.invocations;
        return t;
    }

    // epsilon(delta) of everything recorded so far; 0 when nothing was
    // released, infinity when an unnoised mechanism was recorded.
    double epsilon(double delta) const {
        std::vector<Entry> active;
        for (const auto& e : entries_)
            if (e.invocations > 0) active.push_back(e);
        if (active.empty()) return 0.0;
        for (const auto& e : active)
            if (e.sigma <= 0.0) return std::numeric_limits<double>::infinity();
        if (active.size() == 1)
            return accountant_epsilon(delta, active[0].q_sample, active[0].invocations,
                                      active[0].sigma);
        // heterogeneous mechanisms: add the Renyi divergences per order
        double eps = std::numeric_limits<double>::infinity();
        for (int alpha : accounting::alpha_grid()) {
            double rdp = 0.0;
            for (const auto& e : active)
                rdp += e.invocations *
                       accounting::rdp_subsampled_gaussian(e.q_sample, e.sigma, alpha);
            eps = std::min(eps, accounting::rdp_to_epsilon(rdp, alpha, delta));
        }
        if (!std::isfinite(eps) || eps > 1e9)
            throw DivergentEpsilon("ledger: sigma too small to certify a bound");
        return eps;
    }

  private:
    std::vector<Entry> entries_;
    int owner_;
};

// ---------------------------------------------------------------------------
// Adam (the only optimizer used anywhere), operating on the ascent direction.
// ---------------------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long t = 0;

    void reset(Eigen::Index n) {
        m = Eigen::VectorXd::Zero(n);
        v = Eigen::VectorXd::Zero(n);
        t = 0;
    }

    // Returns the additive update for one ascent step.
    Eigen::VectorXd step(const Eigen::VectorXd& grad, const AdamConfig& cfg) {
        if (m.size() != grad.size()) reset(grad.size());
        ++t;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        Eigen::ArrayXd mhat = m.array() / bc1;
        Eigen::ArrayXd vhat = v.array() / bc2;
        return (cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps)).matrix();
    }
};

// Ascent direction of one (possibly DP) step: the clipped per-example
// likelihood rows are summed and noised; the exact KL gradient is data
// independent and enters unclipped and unnoised, scaled by the lot fraction
// so the direction stays an unbiased estimate of lot_fraction times the full
// objective gradient.
inline Eigen::VectorXd dp_sgd_direction(const ElboGradReport& report, const DpConfig& dp,
                                        double lot_fraction, RandomStream& rng) {
    if (!report.has_rows)
        throw MissingPerExampleGrads("dp_sgd: per-example gradient rows are required");
    dp.validate();
    const Eigen::MatrixXd& rows = report.per_example_loglik_grads;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(rows.cols());
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        sum += clip_to_ball(rows.row(i).transpose(), dp.clip_norm);
    if (dp.noise_multiplier > 0.0)
        sum = gaussian_mechanism(sum, 2.0 * dp.clip_norm, dp.noise_multiplier, rng);
    return sum + lot_fraction * report.kl_weight * report.kl_grad;
}

// Non-private counterpart; identical arithmetic path with the clipping and
// noise degenerate (sum of rows in index order plus the scaled KL gradient).
inline Eigen::VectorXd sgd_direction(const ElboGradReport& report, double lot_fraction) {
    return report.loglik_grad_total + lot_fraction * report.kl_weight * report.kl_grad;
}

inline void dp_sgd_step(VariationalParams& params, AdamState& adam, const AdamConfig& cfg,
                        const ElboGradReport& report, const DpConfig& dp,
                        double lot_fraction, RandomStream& rng) {
    Eigen::VectorXd dir = dp_sgd_direction(report, dp, lot_fraction, rng);
    Eigen::VectorXd upd = adam.step(dir, cfg);
    params.mean += upd.head(params.dim());
    params.log_var += upd.tail(params.dim());
}

inline void sgd_step(VariationalParams& params, AdamState& adam, const AdamConfig& cfg,
                     const ElboGradReport& report, double lot_fraction) {
    Eigen::VectorXd dir = sgd_direction(report, lot_fraction);
    Eigen::VectorXd upd = adam.step(dir, cfg);
    params.mean += upd.head(params.dim());
    params.log_var += upd.tail(params.dim());
}

}  // namespace dppvi
