#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dppvi/conjugate.hpp"
#include "dppvi/data.hpp"
#include "dppvi/dp.hpp"
#include "dppvi/errors.hpp"
#include "dppvi/expfam.hpp"
#include "dppvi/models.hpp"
#include "dppvi/random.hpp"

namespace dppvi {

// ---------------------------------------------------------------------------
// Federated PVI: the global approximation is prior * prod_m t_m; clients
// optimize a local ELBO against their cavity and release natural-parameter
// deltas. Three client-update variants are supported (standard, local
// averaging, virtual clients), with DP entering either inside the local
// optimizer (DP-SGD) or on the released deltas (clip + Gaussian mechanism,
// sensitivity 2C).
// ---------------------------------------------------------------------------

enum class ScheduleKind { sequential, synchronous };

struct Schedule {
    ScheduleKind kind = ScheduleKind::sequential;
    int global_updates = 1;  // S
    double damping = 1.0;    // rho

    void validate() const {
        if (global_updates < 0) throw DomainError("schedule: S must be >= 0");
        if (!(damping > 0.0 && damping <= 1.0))
            throw DomainError("schedule: damping must be in (0, 1]");
    }
};

enum class AggregatorKind { none, trusted };
enum class ClientUpdateKind { standard, local_avg, virtual_clients };

// The model the federation infers: either a gradient-based VI model over a
// mean-field Gaussian, or a d=1 conjugate family solved in closed form (the
// latter powers the analytic property tests).
struct InferenceModel {
    std::optional<ModelSpec> vi;
    std::optional<ConjugateFamily> conjugate;

    static InferenceModel from_model(const ModelSpec& m) { return InferenceModel{m, std::nullopt}; }
    static InferenceModel from_conjugate(const ConjugateFamily& f) {
        return InferenceModel{std::nullopt, f};
    }

    Eigen::Index lambda_dim() const {
        return vi ? 2 * vi->param_dim() : conjugate->lambda_dim();
    }
    Eigen::VectorXd prior_lambda() const {
        return vi ? MeanFieldGaussian::standard(vi->param_dim()).lambda()
                  : conjugate->prior_lambda();
    }
    bool lambda_normalizable(const Eigen::VectorXd& lam) const {
        return vi ? dppvi::normalizable(lam) : conjugate->normalizable(lam);
    }
};

struct OptimizerConfig {
    int local_steps = 50;
    int batch_size = 0;  // 0 or >= shard size: full-batch
    double learning_rate = 0.05;
    int mc_samples = 1;

    AdamConfig adam() const {
        AdamConfig cfg;
        cfg.learning_rate = learning_rate;
        return cfg;
    }
};

struct ClientState {
    int id = 0;
    Dataset shard;
    Factor factor;                                // current t_m
    int local_partitions = 1;                     // N_m
    std::vector<std::vector<int>> partitions;     // disjoint cover of the shard
    std::vector<Factor> virtual_factors;          // t_{m,k}, sum equals factor
    DpConfig dp;
    OptimizerConfig opt;
    PrivacyLedger ledger{0};
    std::uint64_t unit_offset = 0;  // global index of this client's first optimization unit

    // update staged by the last client_update_*; committed by the server with
    // the effective damping so prior + sum of factors stays equal to the
    // global state
    struct Pending {
        Eigen::VectorXd delta;
        std::vector<Eigen::VectorXd> virtual_deltas;
    };
    std::optional<Pending> pending;
};

inline ClientState make_client(int id, Dataset shard, int local_partitions,
                               const DpConfig& dp, const OptimizerConfig& opt,
                               const InferenceModel& model, std::uint64_t partition_seed) {
    ClientState c;
    c.id = id;
    c.shard = std::move(shard);
    c.local_partitions = local_partitions;
    c.partitions = partition_local(c.shard.n(), local_partitions,
                                   derive_seed({partition_seed, 0x9a7cu, static_cast<std::uint64_t>(id)}));
    Eigen::Index d2 = model.lambda_dim();
    c.factor = Factor{Eigen::VectorXd::Zero(d2), id, std::nullopt};
    c.virtual_factors.resize(local_partitions, Factor{Eigen::VectorXd::Zero(d2), id, 0});
    for (int k = 0; k < local_partitions; ++k) c.virtual_factors[k].shard_index = k;
    c.dp = dp;
    c.opt = opt;
    c.ledger = PrivacyLedger(id);
    return c;
}

inline void assign_unit_offsets(std::vector<ClientState>& clients) {
    std::uint64_t at = 0;
    for (auto& c : clients) {
        c.unit_offset = at;
        at += static_cast<std::uint64_t>(c.local_partitions);
    }
}

struct UpdateMessage {
    int client_id = 0;
    Eigen::VectorXd delta_lambda;
    int round = 0;
    bool noise_applied = false;
    std::size_t bytes = 0;
};

// Effective prior for a client (or virtual client): the global state divided
// by its own site factor, in natural parameters.
inline Eigen::VectorXd cavity(const Eigen::VectorXd& global_lambda, const Factor& t) {
    return combine(global_lambda, t.lambda, -1);
}

// Per-round stream layout. Optimization units are numbered globally so that a
// virtual-client run and the equivalent flat run with one client per shard
// consume identical randomness.
struct RoundContext {
    std::uint64_t master_seed = 0;
    int round = 1;

    RandomStream unit_stream(std::uint64_t unit) const {
        return RandomStream::derive(master_seed, 0xA11u, static_cast<std::uint64_t>(round), unit);
    }
    RandomStream noise_stream(int client_id) const {
        return RandomStream::derive(master_seed, 0xB22u, static_cast<std::uint64_t>(round),
                                    static_cast<std::uint64_t>(client_id));
    }
};

using StepObserver = std::function<void(int step, const Eigen::VectorXd& lambda)>;

// Solves one local problem to (approximate) optimality:
//   argmax temper * E_q[log p(shard | theta)] - kl_weight * KL(q || prior_eff)
// starting from init_lambda. `client` supplies the optimizer settings and,
// when dp_sgd is active, the DP configuration and the ledger.
using LocalSolver = std::function<Eigen::VectorXd(
    const Eigen::VectorXd& init_lambda, const Eigen::VectorXd& effective_prior,
    const Dataset& shard, double kl_weight, double likelihood_temper,
    ClientState& client, bool dp_enabled, RandomStream& rng, const StepObserver& observe)>;

// Gradient-based solver: Adam over (mean, log-variance) with reparameterized
// MC gradients; DP-SGD per-example clipping and noising when requested.
inline LocalSolver make_vi_solver(const ModelSpec& model) {
    return [model](const Eigen::VectorXd& init_lambda, const Eigen::VectorXd& effective_prior,
                   const Dataset& shard, double kl_weight, double likelihood_temper,
                   ClientState& client, bool dp_enabled, RandomStream& rng,
                   const StepObserver& observe) -> Eigen::VectorXd {
        const int n = shard.n();
        if (n == 0) throw DomainError("vi solver: empty shard");
        int batch = client.opt.batch_size;
        if (batch <= 0 || batch > n) batch = n;
        const double lot_fraction = static_cast<double>(batch) / n;
        const bool use_dp = dp_enabled && client.dp.mechanism == MechanismKind::dp_sgd;

        VariationalParams vp =
            VariationalParams::from_natural(MeanFieldGaussian::from_lambda(init_lambda));
        AdamState adam;
        AdamConfig cfg = client.opt.adam();
        for (int step = 0; step < client.opt.local_steps; ++step) {
            Dataset lot = batch == n ? shard : shard.rows(rng.sample_without_replacement(n, batch));
            auto rep = elbo_and_grad(vp.to_natural(), effective_prior, lot, model, kl_weight,
                                     likelihood_temper, client.opt.mc_samples, rng, use_dp);
            if (!std::isfinite(rep.elbo_value))
                throw OptimizerDiverged("local ELBO became non-finite");
            if (use_dp) {
                dp_sgd_step(vp, adam, cfg, rep, client.dp, lot_fraction, rng);
                client.ledger.record(MechanismKind::dp_sgd, client.dp.noise_multiplier,
                                     lot_fraction);
            } else {
                sgd_step(vp, adam, cfg, rep, lot_fraction);
            }
            if (observe) observe(step, vp.to_natural().lambda());
        }
        return vp.to_natural().lambda();
    };
}

// Closed-form solver for the d=1 conjugate families:
// lambda* = prior_eff + (temper / kl_weight) * sum_i T(x_i).
inline LocalSolver make_conjugate_solver(const ConjugateFamily& family) {
    return [family](const Eigen::VectorXd& init_lambda, const Eigen::VectorXd& effective_prior,
                    const Dataset& shard, double kl_weight, double likelihood_temper,
                    ClientState& client, bool dp_enabled, RandomStream&,
                    const StepObserver& observe) -> Eigen::VectorXd {
        (void)init_lambda;  // the conjugate optimum does not depend on it
        if (dp_enabled && client.dp.mechanism == MechanismKind::dp_sgd)
            throw ConfigError("conjugate models have no DP-SGD route");
        if (!family.normalizable(effective_prior))
            throw NonNormalizable("conjugate solver: effective prior left the family");
        Eigen::VectorXd lam = effective_prior;
        double scale = likelihood_temper / kl_weight;
        for (int i = 0; i < shard.n(); ++i) {
            double x = family.kind == ConjugateKind::beta_bernoulli ? shard.labels[i]
                                                                    : shard.features(i, 0);
            lam += scale * family.suff_stat(x);
        }
        if (observe) observe(0, lam);
        return lam;
    };
}

inline LocalSolver make_solver(const InferenceModel& model) {
    return model.vi ? make_vi_solver(*model.vi) : make_conjugate_solver(*model.conjugate);
}

namespace detail {
inline UpdateMessage make_message(const ClientState& c, Eigen::VectorXd delta, int round,
                                  bool noised) {
    if (!delta.allFinite())
        throw OptimizerDiverged("client update produced non-finite parameters");
    UpdateMessage msg;
    msg.client_id = c.id;
    msg.bytes = static_cast<std::size_t>(delta.size()) * sizeof(double);
    msg.delta_lambda = std::move(delta);
    msg.round = round;
    msg.noise_applied = noised;
    return msg;
}
}  // namespace detail

// Standard PVI client update (Algorithm-1 steps 3-4). DP, when enabled, comes
// from DP-SGD inside the local optimization; the released delta itself is not
// perturbed.
inline UpdateMessage client_update_standard(ClientState& c, const Eigen::VectorXd& global_lambda,
                                            bool dp_enabled, const RoundContext& ctx,
                                            const LocalSolver& solve,
                                            const StepObserver& observe = nullptr) {
    if (c.shard.n() == 0) throw DomainError("client update: empty shard");
    Eigen::VectorXd prior_eff = cavity(global_lambda, c.factor);
    Eigen::VectorXd lambda_star = global_lambda;
    if (c.opt.local_steps > 0) {
        RandomStream rng = ctx.unit_stream(c.unit_offset);
        lambda_star = solve(global_lambda, prior_eff, c.shard, 1.0, 1.0, c, dp_enabled, rng,
                            observe);
    }
    Eigen::VectorXd delta = lambda_star - global_lambda;
    c.pending = ClientState::Pending{delta, {}};
    bool noised = dp_enabled && c.dp.mechanism == MechanismKind::dp_sgd &&
                  c.dp.noise_multiplier > 0.0;
    return detail::make_message(c, std::move(delta), ctx.round, noised);
}

// Local averaging (Algorithm 2): N_m per-shard optimizations of the
// KL-reweighted objective from the common initial value, clipped per shard,
// averaged, with one Gaussian-mechanism invocation on the sum.
inline UpdateMessage client_update_local_avg(ClientState& c, const Eigen::VectorXd& global_lambda,
                                             bool dp_enabled, const RoundContext& ctx,
                                             const LocalSolver& solve) {
    if (c.shard.n() == 0) throw DomainError("client update: empty shard");
    const int parts = c.local_partitions;
    Eigen::VectorXd prior_eff = cavity(global_lambda, c.factor);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(global_lambda.size());
    for (int k = 0; k < parts; ++k) {
        Eigen::VectorXd lambda_k = global_lambda;
        if (c.opt.local_steps > 0) {
            RandomStream rng = ctx.unit_stream(c.unit_offset + static_cast<std::uint64_t>(k));
            lambda_k = solve(global_lambda, prior_eff, c.shard.rows(c.partitions[k]),
                             1.0 / parts, 1.0, c, false, rng, nullptr);
        }
        Eigen::VectorXd d_k = lambda_k - global_lambda;
        if (dp_enabled) d_k = clip_to_ball(d_k, c.dp.clip_norm);
        sum += d_k;
    }
    bool noised = false;
    if (dp_enabled) {
        if (c.dp.noise_multiplier > 0.0) {
            RandomStream noise = ctx.noise_stream(c.id);
            sum = gaussian_mechanism(sum, 2.0 * c.dp.clip_norm, c.dp.noise_multiplier, noise);
            noised = true;
        }
        c.ledger.record(MechanismKind::update_perturbation, c.dp.noise_multiplier, 1.0);
    }
    Eigen::VectorXd delta = sum / static_cast<double>(parts);
    c.pending = ClientState::Pending{delta, {}};
    return detail::make_message(c, std::move(delta), ctx.round, noised);
}

// Virtual PVI clients (Algorithm 3): each virtual client optimizes the plain
// PVI objective against its own cavity, all initialized from the previous
// global parameters; the released update is the noised SUM of the per-shard
// deltas. The DP noise is spread evenly over the virtual factors so that
// their sum keeps tracking the full local factor.
inline UpdateMessage client_update_virtual(ClientState& c, const Eigen::VectorXd& global_lambda,
                                           bool dp_enabled, const RoundContext& ctx,
                                           const LocalSolver& solve) {
    if (c.shard.n() == 0) throw DomainError("client update: empty shard");
    const int parts = c.local_partitions;
    if (static_cast<int>(c.virtual_factors.size()) != parts)
        throw DomainError("client update: virtual factors not initialized");
    std::vector<Eigen::VectorXd> deltas(parts);
    for (int k = 0; k < parts; ++k) {
        Eigen::VectorXd prior_eff = cavity(global_lambda, c.virtual_factors[k]);
        Eigen::VectorXd lambda_k = global_lambda;
        if (c.opt.local_steps > 0) {
            RandomStream rng = ctx.unit_stream(c.unit_offset + static_cast<std::uint64_t>(k));
            lambda_k = solve(global_lambda, prior_eff, c.shard.rows(c.partitions[k]), 1.0, 1.0,
                             c, false, rng, nullptr);
        }
        deltas[k] = lambda_k - global_lambda;
        if (dp_enabled) deltas[k] = clip_to_ball(deltas[k], c.dp.clip_norm);
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(global_lambda.size());
    for (int k = 0; k < parts; ++k) sum += deltas[k];
    Eigen::VectorXd xi = Eigen::VectorXd::Zero(global_lambda.size());
    bool noised = false;
    if (dp_enabled) {
        if (c.dp.noise_multiplier > 0.0) {
            RandomStream noise = ctx.noise_stream(c.id);
            xi = c.dp.noise_multiplier * 2.0 * c.dp.clip_norm *
                 noise.normal_vector(global_lambda.size());
            sum += xi;
            noised = true;
        }
        c.ledger.record(MechanismKind::update_perturbation, c.dp.noise_multiplier, 1.0);
    }
    ClientState::Pending pending;
    pending.delta = sum;
    pending.virtual_deltas.resize(parts);
    for (int k = 0; k < parts; ++k)
        pending.virtual_deltas[k] = deltas[k] + xi / static_cast<double>(parts);
    c.pending = std::move(pending);
    return detail::make_message(c, std::move(sum), ctx.round, noised);
}

namespace detail {
inline void commit_pending(ClientState& c, double rho) {
    if (!c.pending) return;
    c.factor.lambda += rho * c.pending->delta;
    for (std::size_t k = 0; k < c.pending->virtual_deltas.size(); ++k)
        c.virtual_factors[k].lambda += rho * c.pending->virtual_deltas[k];
    c.pending.reset();
}
inline void discard_pending(std::vector<ClientState>& clients) {
    for (auto& c : clients) c.pending.reset();
}
}  // namespace detail

struct ServerRoundResult {
    Eigen::VectorXd global_lambda;
    std::vector<UpdateMessage> messages;
    double damping_used = 1.0;
};

// One global update: choose b^(s) (round-robin singleton for sequential, all
// clients for synchronous), gather updates, apply the damped aggregate delta,
// and commit the same damped deltas into the client factors. A
// non-normalizable result halves the damping once, then aborts.
inline ServerRoundResult server_round(const Eigen::VectorXd& global_lambda,
                                      const Schedule& schedule,
                                      std::vector<ClientState>& clients,
                                      AggregatorKind aggregator, const InferenceModel& model,
                                      ClientUpdateKind kind, bool dp_enabled,
                                      const RoundContext& ctx, const LocalSolver& solve) {
    schedule.validate();
    if (clients.empty()) throw DomainError("server_round: no clients");
    if (aggregator == AggregatorKind::trusted && schedule.kind != ScheduleKind::synchronous)
        throw ConfigError("trusted aggregator requires a synchronous schedule");

    std::vector<int> chosen;
    if (schedule.kind == ScheduleKind::sequential) {
        chosen.push_back((ctx.round - 1) % static_cast<int>(clients.size()));
    } else {
        for (std::size_t i = 0; i < clients.size(); ++i) chosen.push_back(static_cast<int>(i));
    }

    ServerRoundResult result;
    for (int i : chosen) {
        ClientState& c = clients[static_cast<std::size_t>(i)];
        switch (kind) {
            case ClientUpdateKind::standard:
                result.messages.push_back(client_update_standard(c, global_lambda, dp_enabled,
                                                                 ctx, solve));
                break;
            case ClientUpdateKind::local_avg:
                result.messages.push_back(client_update_local_avg(c, global_lambda, dp_enabled,
                                                                  ctx, solve));
                break;
            case ClientUpdateKind::virtual_clients:
                result.messages.push_back(client_update_virtual(c, global_lambda, dp_enabled,
                                                                ctx, solve));
                break;
        }
    }

    // With a trusted aggregator the deltas are summed exactly before the
    // server sees them; numerically this is the same in-order summation.
    Eigen::VectorXd total = Eigen::VectorXd::Zero(global_lambda.size());
    for (const auto& msg : result.messages) total += msg.delta_lambda;

    double rho = schedule.damping;
    Eigen::VectorXd candidate = global_lambda + rho * total;
    if (!model.lambda_normalizable(candidate)) {
        rho *= 0.5;
        candidate = global_lambda + rho * total;
        if (!model.lambda_normalizable(candidate)) {
            detail::discard_pending(clients);
            throw NonNormalizableGlobal("server_round: global state left the family");
        }
    }
    for (int i : chosen) detail::commit_pending(clients[static_cast<std::size_t>(i)], rho);
    result.global_lambda = std::move(candidate);
    result.damping_used = rho;
    return result;
}

// ---------------------------------------------------------------------------
// Experiment traces
// ---------------------------------------------------------------------------

struct RoundRecord {
    int round = 0;  // 0 is the prior-only record
    std::vector<double> client_epsilons;
    double epsilon_global = 0.0;  // +inf encodes "no finite bound"
    bool has_metrics = false;
    double accuracy = 0.0;
    double mean_loglik = 0.0;
    long cumulative_communications = 0;
    Eigen::VectorXd global_lambda;
};

struct ExperimentTrace {
    std::vector<RoundRecord> rounds;
    Eigen::VectorXd final_lambda;
    long communications = 0;
    double final_accuracy = 0.0;
    double final_mean_loglik = 0.0;
    bool has_metrics = false;
    std::vector<PrivacyLedger> final_ledgers;
};

struct PviOptions {
    ClientUpdateKind update_kind = ClientUpdateKind::standard;
    bool dp_enabled = false;
    Schedule schedule;
    AggregatorKind aggregator = AggregatorKind::none;
    std::uint64_t master_seed = 0;
    int predictive_mc = 100;
    int eval_every = 1;  // rounds between metric evaluations (last round always)
    double report_delta = 1e-5;
    const Dataset* heldout = nullptr;
};

namespace detail {

inline void eval_metrics(const InferenceModel& model, const Eigen::VectorXd& global_lambda,
                         const PviOptions& opts, int round, RoundRecord& rec) {
    if (!opts.heldout || opts.heldout->n() == 0) return;
    if (model.conjugate && model.conjugate->kind != ConjugateKind::beta_bernoulli) return;
    Eigen::VectorXd probs;
    if (model.vi) {
        RandomStream rng = RandomStream::derive(opts.master_seed, 0xC33u,
                                                static_cast<std::uint64_t>(round));
        probs = posterior_predictive(MeanFieldGaussian::from_lambda(global_lambda),
                                     opts.heldout->features, *model.vi, opts.predictive_mc, rng);
    } else {
        probs = Eigen::VectorXd::Constant(opts.heldout->n(),
                                          model.conjugate->predictive_prob(global_lambda));
    }
    EvalResult r = evaluate(probs, opts.heldout->labels);
    rec.has_metrics = true;
    rec.accuracy = r.accuracy;
    rec.mean_loglik = r.mean_loglik;
}

inline void fill_epsilons(const std::vector<ClientState>& clients, const PviOptions& opts,
                          int releases_so_far, RoundRecord& rec) {
    rec.client_epsilons.clear();
    bool any = false;
    double max_eps = 0.0;
    for (const auto& c : clients) {
        double e = c.ledger.total_invocations() > 0 ? c.ledger.epsilon(opts.report_delta) : 0.0;
        rec.client_epsilons.push_back(e);
        max_eps = std::max(max_eps, e);
        any = any || c.ledger.total_invocations() > 0;
    }
    if (!any) {
        rec.epsilon_global = 0.0;
        return;
    }
    if (opts.aggregator == AggregatorKind::trusted &&
        opts.update_kind != ClientUpdateKind::standard && releases_so_far > 0) {
        // joint accounting from the aggregate noise (Theorems 5 and 8): all
        // clients add sigma_client = sigma0 / sqrt(M), the summed release
        // carries sigma0
        double sigma_client = clients.front().dp.noise_multiplier;
        if (sigma_client > 0.0) {
            double sigma0 = sigma_client * std::sqrt(static_cast<double>(clients.size()));
            rec.epsilon_global =
                accountant_epsilon(opts.report_delta, 1.0, releases_so_far, sigma0);
            return;
        }
        rec.epsilon_global = std::numeric_limits<double>::infinity();
        return;
    }
    rec.epsilon_global = max_eps;  // parallel composition across clients
}

}  // namespace detail

// Runs S global updates and records one trace row per round (plus the
// prior-only row). Deterministic given the master seed.
inline ExperimentTrace run_pvi(std::vector<ClientState>& clients, const InferenceModel& model,
                               const PviOptions& opts) {
    opts.schedule.validate();
    assign_unit_offsets(clients);
    LocalSolver solve = make_solver(model);
    Eigen::VectorXd global = model.prior_lambda();
    long comms = 0;
    int releases = 0;

    ExperimentTrace trace;
    {
        RoundRecord rec;
        rec.round = 0;
        rec.global_lambda = global;
        detail::fill_epsilons(clients, opts, 0, rec);
        detail::eval_metrics(model, global, opts, 0, rec);
        trace.rounds.push_back(std::move(rec));
    }

    for (int s = 1; s <= opts.schedule.global_updates; ++s) {
        RoundContext ctx{opts.master_seed, s};
        auto result = server_round(global, opts.schedule, clients, opts.aggregator, model,
                                   opts.update_kind, opts.dp_enabled, ctx, solve);
        global = result.global_lambda;
        comms += 2 * static_cast<long>(result.messages.size());
        releases += 1;

        RoundRecord rec;
        rec.round = s;
        rec.cumulative_communications = comms;
        rec.global_lambda = global;
        detail::fill_epsilons(clients, opts, releases, rec);
        bool eval_now = opts.eval_every > 0 &&
                        (s % opts.eval_every == 0 || s == opts.schedule.global_updates);
        if (eval_now) detail::eval_metrics(model, global, opts, s, rec);
        trace.rounds.push_back(std::move(rec));
    }

    trace.final_lambda = global;
    trace.communications = comms;
    for (const auto& c : clients) trace.final_ledgers.push_back(c.ledger);
    for (auto it = trace.rounds.rbegin(); it != trace.rounds.rend(); ++it) {
        if (it->has_metrics) {
            trace.has_metrics = true;
            trace.final_accuracy = it->accuracy;
            trace.final_mean_loglik = it->mean_loglik;
            break;
        }
    }
    return trace;
}

// Centralised (global) DP-VI baseline: DP-SGD on the pooled data behind a
// trusted aggregator. Communication-wise every optimization step is a full
// gradient exchange with all M clients, so one step costs 2M messages.
inline ExperimentTrace run_global_vi(const Dataset& pooled, int cohort_clients,
                                     const InferenceModel& model, const DpConfig& dp,
                                     const OptimizerConfig& opt, bool dp_enabled,
                                     const PviOptions& opts) {
    std::vector<ClientState> one;
    one.push_back(make_client(0, pooled, 1, dp, opt, model, opts.master_seed));
    assign_unit_offsets(one);
    LocalSolver solve = make_solver(model);
    Eigen::VectorXd prior = model.prior_lambda();

    std::vector<Eigen::VectorXd> iterates;
    iterates.reserve(static_cast<std::size_t>(opt.local_steps));
    StepObserver observe = [&](int, const Eigen::VectorXd& lam) { iterates.push_back(lam); };
    RoundContext ctx{opts.master_seed, 1};
    client_update_standard(one[0], prior, dp_enabled, ctx, solve, observe);
    detail::commit_pending(one[0], 1.0);
    if (iterates.empty()) iterates.push_back(prior);

    ExperimentTrace trace;
    {
        RoundRecord rec;
        rec.round = 0;
        rec.global_lambda = prior;
        detail::eval_metrics(model, prior, opts, 0, rec);
        trace.rounds.push_back(std::move(rec));
    }
    long comms = 0;
    for (std::size_t i = 0; i < iterates.size(); ++i) {
        comms += 2 * static_cast<long>(cohort_clients);
        RoundRecord rec;
        rec.round = static_cast<int>(i) + 1;
        rec.cumulative_communications = comms;
        rec.global_lambda = iterates[i];
        double eps = one[0].ledger.total_invocations() > 0
                         ? accountant_epsilon(opts.report_delta, one[0].dp.subsample_fraction,
                                              static_cast<long>(i) + 1,
                                              one[0].dp.noise_multiplier)
                         : 0.0;
        rec.client_epsilons.assign(1, eps);
        rec.epsilon_global = eps;
        bool eval_now = opts.eval_every > 0 && ((rec.round % opts.eval_every == 0) ||
                                                i + 1 == iterates.size());
        if (eval_now) detail::eval_metrics(model, iterates[i], opts, rec.round, rec);
        trace.rounds.push_back(std::move(rec));
    }
    trace.final_lambda = iterates.back();
    trace.communications = comms;
    trace.final_ledgers.push_back(one[0].ledger);
    for (auto it = trace.rounds.rbegin(); it != trace.rounds.rend(); ++it) {
        if (it->has_metrics) {
            trace.has_metrics = true;
            trace.final_accuracy = it->accuracy;
            trace.final_mean_loglik = it->mean_loglik;
            break;
        }
    }
    return trace;
}

enum class BcmVariant { same, split };

// Bayesian committee machine baselines: every client trains a local (DP-)VI
// posterior independently and uploads once. "split" trains against
// prior^(1/M) and sums the results; "same" trains against the full prior and
// subtracts the (M-1) extra prior copies.
inline ExperimentTrace run_bcm(BcmVariant variant, std::vector<ClientState>& clients,
                               const InferenceModel& model, bool dp_enabled,
                               const PviOptions& opts) {
    if (clients.empty()) throw DomainError("run_bcm: no clients");
    assign_unit_offsets(clients);
    LocalSolver solve = make_solver(model);
    const double M = static_cast<double>(clients.size());
    Eigen::VectorXd prior = model.prior_lambda();
    Eigen::VectorXd combined = Eigen::VectorXd::Zero(prior.size());

    RoundContext ctx{opts.master_seed, 1};
    for (auto& c : clients) {
        Eigen::VectorXd local_prior = variant == BcmVariant::split ? (prior / M).eval() : prior;
        Eigen::VectorXd lambda_star = local_prior;
        if (c.opt.local_steps > 0) {
            RandomStream rng = ctx.unit_stream(c.unit_offset);
            lambda_star = solve(local_prior, local_prior, c.shard, 1.0, 1.0, c, dp_enabled, rng,
                                nullptr);
        }
        combined += lambda_star;
    }
    if (variant == BcmVariant::same) combined -= (M - 1.0) * prior;
    if (!model.lambda_normalizable(combined))
        throw NonNormalizableGlobal("run_bcm: combined posterior left the family");

    ExperimentTrace trace;
    RoundRecord rec;
    rec.round = 1;
    rec.cumulative_communications = 2 * static_cast<long>(clients.size());
    rec.global_lambda = combined;
    detail::fill_epsilons(clients, opts, 0, rec);
    detail::eval_metrics(model, combined, opts, 1, rec);
    trace.rounds.push_back(rec);
    trace.final_lambda = combined;
    trace.communications = rec.cumulative_communications;
    trace.has_metrics = rec.has_metrics;
    trace.final_accuracy = rec.accuracy;
    trace.final_mean_loglik = rec.mean_loglik;
    for (const auto& c : clients) trace.final_ledgers.push_back(c.ledger);
    return trace;
}

}  // namespace dppvi
