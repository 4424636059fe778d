#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rcuniv/filtercore.hpp"
#include "rcuniv/seqspace.hpp"

namespace rcuniv {

/// Certifies ||F(u,z) - F(v,z)|| <= r ||u-v|| on the declared domain. Only
/// the analytic method carries a by-construction guarantee; sampled lower
/// bounds are diagnostics.
struct ContractionCertificate {
    enum class Method { analytic, sampled_lower_bound_only };
    double r = 0.0;
    Method method = Method::analytic;
    std::string provenance;
};

/// State map F : L-ball x M-ball -> L-ball plus a readout. Ball invariance is
/// spot-checked by sampling at construction.
class ReservoirSystem {
  public:
    using StateMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;
    using Readout = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

    ReservoirSystem(StateMap state_map, Readout readout, Eigen::Index state_dim,
                    Eigen::Index input_dim, Eigen::Index output_dim, double state_bound,
                    double input_bound, std::string label)
        : F_(std::move(state_map)), h_(std::move(readout)), N_(state_dim), n_(input_dim),
          d_(output_dim), L_(state_bound), M_(input_bound), label_(std::move(label)) {
        if (N_ < 1 || n_ < 1 || d_ < 1)
            throw std::invalid_argument("ReservoirSystem: dimensions must be >= 1");
        if (!(L_ > 0.0) || !(M_ > 0.0))
            throw std::invalid_argument("ReservoirSystem: bounds L, M must be positive");
        Rng rng(substream_seed(0x5e5e5e5eULL, "reservoir_ctor_check"));
        for (int i = 0; i < 64; ++i) {
            Eigen::VectorXd x = rng.ball(N_, L_);
            Eigen::VectorXd z = rng.ball(n_, M_);
            Eigen::VectorXd y = F_(x, z);
            if (y.size() != N_)
                throw std::invalid_argument(label_ + ": state map returns wrong dimension");
            if (y.norm() > L_ + 1e-9)
                throw std::invalid_argument(label_ +
                                            ": state map leaves the L-ball on sampled inputs");
        }
    }

    Eigen::VectorXd state_map(const Eigen::VectorXd& x, const Eigen::VectorXd& z) const {
        return F_(x, z);
    }
    Eigen::VectorXd readout(const Eigen::VectorXd& x) const { return h_(x); }

    Eigen::Index state_dim() const { return N_; }
    Eigen::Index input_dim() const { return n_; }
    Eigen::Index output_dim() const { return d_; }
    double state_bound() const { return L_; }
    double input_bound() const { return M_; }
    const std::string& label() const { return label_; }

  private:
    StateMap F_;
    Readout h_;
    Eigen::Index N_, n_, d_;
    double L_, M_;
    std::string label_;
};

/// Single reservoir update with domain checks and the post-condition
/// ||result|| <= L + 1e-9.
inline Eigen::VectorXd step(const ReservoirSystem& S, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& z) {
    if (x.size() != S.state_dim() || z.size() != S.input_dim())
        throw std::invalid_argument("step: dimension mismatch");
    if (x.norm() > S.state_bound() * (1.0 + 1e-12))
        throw std::invalid_argument("step: state outside the L-ball");
    if (z.norm() > S.input_bound() * (1.0 + 1e-12))
        throw std::invalid_argument("step: input outside the M-ball");
    Eigen::VectorXd y = S.state_map(x, z);
    if (y.norm() > S.state_bound() + 1e-9)
        throw std::logic_error("step: state map left the L-ball");
    return y;
}

/// Smallest n with 2 L r^n <= tol: the number of steps after which the
/// initial-condition term of the decomposition inequality is below tol.
inline long washout_length(double r, double L, double tol) {
    if (!(r >= 0.0 && r < 1.0))
        throw std::invalid_argument("washout_length: requires a contraction constant r in [0,1)");
    if (!(L > 0.0) || !(tol > 0.0))
        throw std::invalid_argument("washout_length: L and tol must be positive");
    if (2.0 * L <= tol) return 0;
    if (r == 0.0) return 1;
    double n = std::log(tol / (2.0 * L)) / std::log(r);
    long candidate = static_cast<long>(std::ceil(n));
    while (2.0 * L * std::pow(r, static_cast<double>(candidate)) > tol) ++candidate;
    while (candidate > 0 && 2.0 * L * std::pow(r, static_cast<double>(candidate - 1)) <= tol)
        --candidate;
    return candidate;
}

/// Trajectory of a reservoir run over a window. `unique` records whether a
/// contraction certificate guaranteed the echo state property; without one
/// the result is just whatever the washout run returned.
struct RunResult {
    BoundedSignal states;
    BoundedSignal outputs;
    long clean_from;
    bool unique;
};

namespace detail {

inline RunResult iterate_system(const ReservoirSystem& S, const BoundedSignal& z, long washout,
                                bool unique, const Eigen::VectorXd& x0) {
    const long T = z.length();
    Eigen::MatrixXd states(S.state_dim(), T);
    Eigen::MatrixXd outputs(S.output_dim(), T);
    Eigen::VectorXd x = x0;
    double out_bound = 0.0;
    for (long t = z.first_index(); t <= 0; ++t) {
        x = S.state_map(x, z.at(t));
        if (x.norm() > S.state_bound() + 1e-9)
            throw std::logic_error(S.label() + ": trajectory left the L-ball at t=" +
                                   std::to_string(t));
        Eigen::VectorXd y = S.readout(x);
        states.col(t - z.first_index()) = x;
        outputs.col(t - z.first_index()) = y;
        out_bound = std::max(out_bound, y.norm());
    }
    out_bound = std::max(out_bound, std::numeric_limits<double>::min());
    long clean_from = z.first_index() + washout;
    return RunResult{BoundedSignal(std::move(states), S.state_bound() + 1e-9, Padding::zero),
                     BoundedSignal(std::move(outputs), out_bound * (1.0 + 1e-12), Padding::zero),
                     clean_from, unique};
}

}  // namespace detail

/// Runs the reservoir from the zero initial state through the whole window.
/// Entries at t >= clean_from = first + washout_length(r, L, tol) are within
/// tol of the unique solution, by the 2 L r^n bound.
inline RunResult run_filter(const ReservoirSystem& S, const ContractionCertificate& cert,
                            const BoundedSignal& z, double tol) {
    if (cert.method != ContractionCertificate::Method::analytic)
        throw std::invalid_argument("run_filter: an analytic contraction certificate is required");
    if (z.dim() != S.input_dim()) throw std::invalid_argument("run_filter: input dimension mismatch");
    if (z.bound() > S.input_bound() * (1.0 + 1e-12))
        throw std::invalid_argument("run_filter: input bound exceeds the system's M");
    const long washout = washout_length(cert.r, S.state_bound(), tol);
    if (z.length() <= washout)
        throw std::invalid_argument("run_filter: window length " + std::to_string(z.length()) +
                                    " too short, need more than " + std::to_string(washout) +
                                    " steps of washout");
    return detail::iterate_system(S, z, washout, /*unique=*/true,
                                  Eigen::VectorXd::Zero(S.state_dim()));
}

/// Existence-only run: same iteration, no uniqueness claim. The caller picks
/// the washout discarded as contaminated and, optionally, the initial state.
inline RunResult run_washout(const ReservoirSystem& S, const BoundedSignal& z, long washout,
                             std::optional<Eigen::VectorXd> x0 = std::nullopt) {
    if (z.dim() != S.input_dim())
        throw std::invalid_argument("run_washout: input dimension mismatch");
    if (washout < 0 || washout >= z.length())
        throw std::invalid_argument("run_washout: washout must lie inside the window");
    Eigen::VectorXd start = x0 ? *x0 : Eigen::VectorXd::Zero(S.state_dim());
    if (start.norm() > S.state_bound() * (1.0 + 1e-12))
        throw std::invalid_argument("run_washout: initial state outside the L-ball");
    return detail::iterate_system(S, z, washout, /*unique=*/false, start);
}

/// The reservoir filter U_F as a Filter object, for use with the probes.
inline Filter reservoir_filter(const ReservoirSystem& S, const ContractionCertificate& cert,
                               double tol, bool apply_readout = true) {
    const long washout = washout_length(cert.r, S.state_bound(), tol);
    ReservoirSystem sys = S;
    ContractionCertificate c = cert;
    auto eval = [sys, c, tol, apply_readout](const BoundedSignal& z) {
        RunResult run = run_filter(sys, c, z, tol);
        BoundedSignal& sig = apply_readout ? run.outputs : run.states;
        return FilterOutput{sig, run.clean_from};
    };
    return Filter(std::move(eval), SignalSpec{S.input_dim(), S.input_bound()},
                  apply_readout ? S.output_dim() : S.state_dim(),
                  "U_F(" + S.label() + ")", /*causal=*/true, /*time_invariant=*/true, washout);
}

/// Sampled max of ||F(u,z) - F(v,z)|| / ||u - v||: a lower bound on the true
/// Lipschitz constant of F in the state argument.
inline double contraction_lower_bound(const ReservoirSystem& S, long samples, std::uint64_t seed) {
    Rng rng(substream_seed(seed, "contraction_lower_bound"));
    double worst = 0.0;
    for (long i = 0; i < samples; ++i) {
        Eigen::VectorXd u = rng.ball(S.state_dim(), S.state_bound());
        Eigen::VectorXd v = rng.ball(S.state_dim(), S.state_bound());
        double duv = (u - v).norm();
        if (duv < 1e-12) continue;
        Eigen::VectorXd z = rng.ball(S.input_dim(), S.input_bound());
        double ratio = (S.state_map(u, z) - S.state_map(v, z)).norm() / duv;
        worst = std::max(worst, ratio);
    }
    return worst;
}

struct InternalApproxConfig {
    long map_samples = 4000;  // (x, z) draws for the d_F lower estimate
    long z_samples = 100;
    long window = 64;
    double washout_tol = 1e-9;
    double compare_tol = 1e-6;
    std::optional<double> declared_upper;  // analytic bound on ||F1-F2||_inf when known
    double safety = 1.5;                   // inflation applied to the sampled estimate otherwise
    std::uint64_t seed = 1;
};

struct InternalApproxReport {
    double d_f = 0.0;        // sampled lower estimate of ||F1 - F2||_inf
    double d_f_upper = 0.0;  // declared, or sampled estimate times the safety factor
    double bound = 0.0;      // d_f_upper / (1 - r)
    double measured = 0.0;   // washout estimate of |||U_{F1} - U_{F2}|||_inf
    bool pass = false;
    bool declared_upper_used = false;
    long z_samples = 0;
};

inline void to_json(nlohmann::json& j, const InternalApproxReport& r) {
    j = nlohmann::json{{"d_f", r.d_f},
                       {"d_f_upper", r.d_f_upper},
                       {"upper_kind", r.declared_upper_used ? "declared" : "sampled_inflated"},
                       {"bound", r.bound},
                       {"measured", r.measured},
                       {"pass", r.pass},
                       {"z_samples", r.z_samples}};
}

/// Verifies the internal approximation statement: ||F1 - F2||_inf < (1-r) eps
/// implies |||U_{F1} - U_{F2}|||_inf < eps. S1 must carry the analytic
/// certificate; S2 only needs existence (it is run by the same iteration and
/// its outputs count as a generalized filter).
inline InternalApproxReport internal_approx_check(const ReservoirSystem& S1,
                                                  const ContractionCertificate& cert1,
                                                  const ReservoirSystem& S2,
                                                  InternalApproxConfig cfg = {}) {
    if (cert1.method != ContractionCertificate::Method::analytic)
        throw std::invalid_argument("internal_approx_check: S1 needs an analytic certificate");
    if (S1.state_dim() != S2.state_dim() || S1.input_dim() != S2.input_dim())
        throw std::invalid_argument("internal_approx_check: systems must share state/input spaces");
    const double L = std::min(S1.state_bound(), S2.state_bound());
    const double M = std::min(S1.input_bound(), S2.input_bound());

    InternalApproxReport report;
    Rng rng(substream_seed(cfg.seed, "internal_approx_map"));
    for (long i = 0; i < cfg.map_samples; ++i) {
        Eigen::VectorXd x = rng.ball(S1.state_dim(), L);
        Eigen::VectorXd z = rng.ball(S1.input_dim(), M);
        report.d_f = std::max(report.d_f, (S1.state_map(x, z) - S2.state_map(x, z)).norm());
    }
    report.declared_upper_used = cfg.declared_upper.has_value();
    report.d_f_upper = cfg.declared_upper ? *cfg.declared_upper : report.d_f * cfg.safety;
    report.bound = report.d_f_upper / (1.0 - cert1.r);

    const long washout = washout_length(cert1.r, S1.state_bound(), cfg.washout_tol);
    if (cfg.window <= washout)
        throw std::invalid_argument("internal_approx_check: window must exceed the washout length " +
                                    std::to_string(washout));
    auto inputs = sample_KM(S1.input_dim(), M, cfg.window, cfg.z_samples,
                            substream_seed(cfg.seed, "internal_approx_inputs"));
    for (const auto& z : inputs) {
        RunResult r1 = run_filter(S1, cert1, z, cfg.washout_tol);
        RunResult r2 = run_washout(S2, z, washout);
        for (long t = r1.clean_from; t <= 0; ++t)
            report.measured = std::max(report.measured, (r1.states.at(t) - r2.states.at(t)).norm());
        ++report.z_samples;
    }
    report.pass = report.measured <= report.bound + cfg.compare_tol;
    return report;
}

/// Worst sampled residual of reservoir equivariance f(F1(x,z)) = F2(f(x),z)
/// and readout invariance h1(x) = h2(f(x)), over the supplied state/input
/// samples.
inline ProbeReport morphism_check(const Eigen::MatrixXd& f, const ReservoirSystem& S1,
                                  const ReservoirSystem& S2,
                                  const std::vector<Eigen::VectorXd>& states,
                                  const std::vector<Eigen::VectorXd>& inputs) {
    if (f.cols() != S1.state_dim() || f.rows() != S2.state_dim())
        throw std::invalid_argument("morphism_check: map shape does not match the state spaces");
    if (S1.input_dim() != S2.input_dim() || S1.output_dim() != S2.output_dim())
        throw std::invalid_argument("morphism_check: systems must share input/output spaces");
    if (states.size() != inputs.size())
        throw std::invalid_argument("morphism_check: need one input per state sample");
    ProbeReport report;
    for (std::size_t i = 0; i < states.size(); ++i) {
        const Eigen::VectorXd& x = states[i];
        const Eigen::VectorXd& z = inputs[i];
        double equivariance = (f * S1.state_map(x, z) - S2.state_map(f * x, z)).norm();
        double readout = (S1.readout(x) - S2.readout(f * x)).norm();
        double residual = std::max(equivariance, readout);
        ++report.samples;
        if (residual > report.worst_deviation) {
            report.worst_deviation = residual;
            report.witness_ref = "sample " + std::to_string(i);
        }
    }
    return report;
}

/// Same check with states drawn from S1's ball, rejecting draws that f maps
/// outside S2's ball.
inline ProbeReport morphism_check(const Eigen::MatrixXd& f, const ReservoirSystem& S1,
                                  const ReservoirSystem& S2, long samples, std::uint64_t seed) {
    Rng rng(substream_seed(seed, "morphism_check"));
    std::vector<Eigen::VectorXd> states, inputs;
    long attempts = 0;
    const long max_attempts = samples * 64;
    while (static_cast<long>(states.size()) < samples && attempts < max_attempts) {
        ++attempts;
        Eigen::VectorXd x = rng.ball(S1.state_dim(), S1.state_bound());
        if ((f * x).norm() > S2.state_bound()) continue;
        states.push_back(std::move(x));
        inputs.push_back(rng.ball(S1.input_dim(), std::min(S1.input_bound(), S2.input_bound())));
    }
    if (states.empty())
        throw std::runtime_error("morphism_check: could not sample states mapping into S2's ball");
    ProbeReport report = morphism_check(f, S1, S2, states, inputs);
    report.seed = seed;
    return report;
}

}  // namespace rcuniv
