#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rcuniv/filtercore.hpp"
#include "rcuniv/models.hpp"
#include "rcuniv/reservoir.hpp"

namespace rcuniv {

// ---------------------------------------------------------------------------
// Error budget of the universality construction.
// ---------------------------------------------------------------------------

/// Bookkeeping for the two-stage approximation: eps1 = eps/2 for the SAS
/// stage and eps2 = min{eps(1-K)/(2 ||W1||_2), (L-L1)/2} for the hidden-layer
/// stage, under 0 < K < L/(L+1) and L1 < L.
struct ErrorBudget {
    double eps = 0.0;
    double eps1 = 0.0;
    double eps2 = 0.0;
    double K = 0.0;
    double L = 0.0;
    double L1 = 0.0;
    double W1_norm = 0.0;
};

inline void to_json(nlohmann::json& j, const ErrorBudget& b) {
    j = nlohmann::json{{"eps", b.eps}, {"eps1", b.eps1}, {"eps2", b.eps2}, {"K", b.K},
                       {"L", b.L},     {"L1", b.L1},     {"W1_norm", b.W1_norm}};
}

inline ErrorBudget make_error_budget(double eps, double K, double L, double L1, double W1_norm) {
    if (!(eps > 0.0)) throw std::invalid_argument("error budget: eps must be positive");
    if (!(L > 0.0)) throw std::invalid_argument("error budget: L must be positive");
    if (!(K > 0.0 && K < L / (L + 1.0)))
        throw std::invalid_argument("error budget: condition 0 < K < L/(L+1) violated");
    if (!(L1 < L)) throw std::invalid_argument("error budget: condition L1 < L violated");
    if (!(W1_norm > 0.0)) throw std::invalid_argument("error budget: ||W1||_2 must be positive");
    ErrorBudget b;
    b.eps = eps;
    b.eps1 = eps / 2.0;
    b.eps2 = std::min(eps * (1.0 - K) / (2.0 * W1_norm), (L - L1) / 2.0);
    b.K = K;
    b.L = L;
    b.L1 = L1;
    b.W1_norm = W1_norm;
    return b;
}

/// Sampled sup of ||F(x,z)|| over the L-ball x M-ball; used both to measure
/// L1 = ||F_SAS||_inf and to monitor that the fitted map stays inside the
/// ball.
inline double sampled_map_sup(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>& F,
    Eigen::Index state_dim, Eigen::Index input_dim, double L, double M, long samples,
    std::uint64_t seed) {
    Rng rng(substream_seed(seed, "sampled_map_sup"));
    double sup = 0.0;
    for (long i = 0; i < samples; ++i) {
        Eigen::VectorXd x = rng.ball(state_dim, L);
        Eigen::VectorXd z = rng.ball(input_dim, M);
        sup = std::max(sup, F(x, z).norm());
    }
    return sup;
}

// ---------------------------------------------------------------------------
// Hidden-layer approximation of a reservoir map (extreme-learning style).
// ---------------------------------------------------------------------------

/// One-hidden-layer reservoir map (x,z) -> E sigma(G x + C z + zeta).
struct NnReservoirParams {
    Eigen::MatrixXd E;     // N1 x N
    Eigen::MatrixXd G;     // N x N1
    Eigen::MatrixXd C;     // N x n
    Eigen::VectorXd zeta;  // N
    Activation activation = Activation(Activation::Kind::tanh);

    Eigen::Index width() const { return G.rows(); }
    Eigen::Index state_dim() const { return E.rows(); }
    Eigen::Index input_dim() const { return C.cols(); }

    Eigen::VectorXd operator()(const Eigen::VectorXd& x, const Eigen::VectorXd& z) const {
        return E * activation.apply(G * x + C * z + zeta);
    }
};

struct FitConfig {
    std::vector<Eigen::Index> width_schedule = {16, 32, 64, 128, 256, 512};
    long design_grid = 512;    // low-discrepancy points over the ball product
    long design_random = 512;  // random ball-product points
    long holdout = 512;        // independent residual check
    double ridge = 1e-9;
    Activation activation = Activation(Activation::Kind::tanh);
    std::uint64_t seed = 1;
};

struct FitResult {
    NnReservoirParams params;
    double design_residual = 0.0;   // sup residual over the design set
    double holdout_residual = 0.0;  // sup residual over the hold-out set
    double achieved = 0.0;          // max of the two; the reported estimate
    Eigen::Index width = 0;
    bool success = false;
};

inline void to_json(nlohmann::json& j, const FitResult& r) {
    j = nlohmann::json{{"design_residual", r.design_residual},
                       {"holdout_residual", r.holdout_residual},
                       {"achieved", r.achieved},
                       {"width", r.width},
                       {"success", r.success}};
}

namespace detail {

inline double radical_inverse(unsigned base, unsigned long i) {
    double f = 1.0, r = 0.0;
    while (i > 0) {
        f /= base;
        r += f * static_cast<double>(i % base);
        i /= base;
    }
    return r;
}

constexpr unsigned kHaltonPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31,
                                      37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79,
                                      83, 89, 97, 101, 103, 107, 109, 113, 127, 131};

/// Design points over the L-ball x M-ball: a Halton sequence mapped onto the
/// inscribed cubes (dense coverage for small dimensions) plus random draws
/// from the balls themselves (coverage near the boundary).
inline void build_design(Eigen::Index N1, Eigen::Index n, double L, double M, long grid,
                         long random, std::uint64_t seed, std::vector<Eigen::VectorXd>& xs,
                         std::vector<Eigen::VectorXd>& zs) {
    const Eigen::Index dims = N1 + n;
    const double x_scale = L / std::sqrt(static_cast<double>(N1));
    const double z_scale = M / std::sqrt(static_cast<double>(n));
    for (long i = 1; i <= grid; ++i) {
        Eigen::VectorXd x(N1), z(n);
        for (Eigen::Index c = 0; c < dims; ++c) {
            double u = c < 32 ? radical_inverse(kHaltonPrimes[c], static_cast<unsigned long>(i))
                              : 0.5;
            double v = 2.0 * u - 1.0;
            if (c < N1)
                x[c] = v * x_scale;
            else
                z[c - N1] = v * z_scale;
        }
        xs.push_back(std::move(x));
        zs.push_back(std::move(z));
    }
    Rng rng(substream_seed(seed, "fit_design_random"));
    for (long i = 0; i < random; ++i) {
        xs.push_back(rng.ball(N1, L));
        zs.push_back(rng.ball(n, M));
    }
}

}  // namespace detail

/// Solves the output weights E for fixed random features by regularized least
/// squares and reports the sup residual on the design set.
inline std::pair<Eigen::MatrixXd, double> solve_output_weights(
    const Eigen::MatrixXd& features,  // width x samples
    const Eigen::MatrixXd& targets,   // N1 x samples
    double ridge) {
    const Eigen::Index width = features.rows();
    Eigen::MatrixXd E;
    if (ridge > 0.0) {
        Eigen::MatrixXd gram = features * features.transpose();
        gram.diagonal().array() += ridge;
        E = gram.ldlt().solve(features * targets.transpose()).transpose();
    } else {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(features.transpose());
        if (qr.rank() < width)
            throw std::runtime_error("solve_output_weights: features are rank deficient; "
                                     "use a positive ridge parameter");
        E = qr.solve(targets.transpose()).transpose();
    }
    double residual = 0.0;
    Eigen::MatrixXd err = E * features - targets;
    for (Eigen::Index c = 0; c < err.cols(); ++c) residual = std::max(residual, err.col(c).norm());
    return {std::move(E), residual};
}

/// Approximates a reservoir map on the L-ball x M-ball by a one-hidden-layer
/// map E sigma(G x + C z + zeta): hidden weights are drawn at random, E is
/// solved by regularized least squares, and the width grows along the
/// schedule until the sampled sup residual (design and hold-out) meets the
/// eps2 budget. On schedule exhaustion the best attempt is returned with
/// success = false.
inline FitResult fit_nn_reservoir(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>& target,
    Eigen::Index N1, Eigen::Index n, double L, double M, double eps2, const FitConfig& cfg) {
    if (!(eps2 > 0.0)) throw std::invalid_argument("fit_nn_reservoir: eps2 must be positive");
    if (cfg.width_schedule.empty())
        throw std::invalid_argument("fit_nn_reservoir: empty width schedule");

    std::vector<Eigen::VectorXd> xs, zs;
    detail::build_design(N1, n, L, M, cfg.design_grid, cfg.design_random, cfg.seed, xs, zs);
    const auto S = static_cast<Eigen::Index>(xs.size());
    Eigen::MatrixXd targets(N1, S);
    for (Eigen::Index i = 0; i < S; ++i) targets.col(i) = target(xs[i], zs[i]);

    std::vector<Eigen::VectorXd> hx, hz;
    {
        Rng rng(substream_seed(cfg.seed, "fit_holdout"));
        for (long i = 0; i < cfg.holdout; ++i) {
            hx.push_back(rng.ball(N1, L));
            hz.push_back(rng.ball(n, M));
        }
    }

    const double gx = 3.0 / (L * std::sqrt(static_cast<double>(N1)));
    const double gz = 3.0 / (M * std::sqrt(static_cast<double>(n)));

    FitResult best;
    best.achieved = std::numeric_limits<double>::infinity();
    for (Eigen::Index width : cfg.width_schedule) {
        Rng rng(substream_seed(cfg.seed, "fit_features_w" + std::to_string(width)));
        NnReservoirParams nn;
        nn.G = gx * rng.uniform_matrix(width, N1, -1.0, 1.0);
        nn.C = gz * rng.uniform_matrix(width, n, -1.0, 1.0);
        nn.zeta = rng.uniform_vector(width, -1.0, 1.0);
        nn.activation = cfg.activation;

        Eigen::MatrixXd features(width, S);
        for (Eigen::Index i = 0; i < S; ++i)
            features.col(i) = cfg.activation.apply(nn.G * xs[i] + nn.C * zs[i] + nn.zeta);
        auto [E, design_res] = solve_output_weights(features, targets, cfg.ridge);
        nn.E = std::move(E);

        double holdout_res = 0.0;
        for (std::size_t i = 0; i < hx.size(); ++i)
            holdout_res = std::max(holdout_res, (nn(hx[i], hz[i]) - target(hx[i], hz[i])).norm());

        double achieved = std::max(design_res, holdout_res);
        if (achieved < best.achieved) {
            best.params = std::move(nn);
            best.design_residual = design_res;
            best.holdout_residual = holdout_res;
            best.achieved = achieved;
            best.width = width;
        }
        if (best.achieved <= eps2) {
            best.success = true;
            return best;
        }
    }
    best.success = best.achieved <= eps2;
    return best;
}

// ---------------------------------------------------------------------------
// ESN assembly A := G E, W := W1 E.
// ---------------------------------------------------------------------------

struct AssembledEsn {
    EsnParams esn;
    Eigen::MatrixXd morphism;  // f(x) = E x, intertwining the ESN with the NN system
};

inline AssembledEsn assemble_esn(const NnReservoirParams& nn, const Eigen::MatrixXd& W1) {
    if (W1.cols() != nn.E.rows())
        throw std::invalid_argument("assemble_esn: W1 column count must equal the NN state dim");
    if (nn.G.cols() != nn.E.rows())
        throw std::invalid_argument("assemble_esn: G/E dimension chain is inconsistent");
    AssembledEsn out;
    out.esn.A = nn.G * nn.E;
    out.esn.C = nn.C;
    out.esn.zeta = nn.zeta;
    out.esn.W = W1 * nn.E;
    out.esn.activation = nn.activation;
    out.esn.validate();
    out.morphism = nn.E;
    return out;
}

// ---------------------------------------------------------------------------
// SAS -> NN -> ESN chain with measured error budget.
// ---------------------------------------------------------------------------

struct ChainVerifyConfig {
    long z_samples = 100;
    long window = 80;
    long morphism_samples = 1000;
    double washout_tol = 1e-9;
    double compare_tol = 1e-6;
    std::uint64_t seed = 3;
};

struct SasToEsnResult {
    EsnParams esn;
    NnReservoirParams nn;
    Eigen::MatrixXd morphism;
    FitResult fit;
    double morphism_residual = 0.0;
    double chain_bound = 0.0;  // ||W1||_2 * rho / (1 - K)
    double measured = 0.0;     // washout estimate of the readout-filter distance
    bool ball_preserved = true;
    bool verified = false;
};

inline void to_json(nlohmann::json& j, const SasToEsnResult& r) {
    j = nlohmann::json{{"fit", r.fit},
                       {"morphism_residual", r.morphism_residual},
                       {"chain_bound", r.chain_bound},
                       {"measured", r.measured},
                       {"ball_preserved", r.ball_preserved},
                       {"verified", r.verified},
                       {"esn_size", r.esn.state_dim()}};
}

/// Runs the constructive chain for a certified SAS: fit F_NN to F_SAS within
/// eps2, assemble the ESN, then verify on sampled inputs that the measured
/// readout-filter distance stays within ||W1||_2 rho/(1-K) and that E x_t
/// never leaves the L-ball. Verification failures flag the result; nothing
/// passes silently.
inline SasToEsnResult sas_to_esn(const SasParams& sas, const SasCertification& cert,
                                 const ErrorBudget& budget, const FitConfig& fit_cfg,
                                 const ChainVerifyConfig& verify = {}) {
    if (!cert.cert) throw std::invalid_argument("sas_to_esn: SAS certification did not pass");
    if (std::abs(cert.K - budget.K) > 1e-12 || std::abs(cert.L - budget.L) > 1e-12)
        throw std::invalid_argument("sas_to_esn: budget K, L must match the certificate");
    const double K = budget.K;
    const double L = budget.L;
    const double W1n = spectral_norm(sas.W1);
    if (std::abs(W1n - budget.W1_norm) > 1e-9 * std::max(1.0, W1n))
        throw std::invalid_argument("sas_to_esn: budget W1 norm does not match the readout");

    SasToEsnResult out;
    auto f_sas = [&sas](const Eigen::VectorXd& x, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        return sas_p(sas, z) * x + sas_q(sas, z);
    };
    out.fit = fit_nn_reservoir(f_sas, sas.state_dim, sas.input_dim, L, 1.0 - 1e-9, budget.eps2,
                               fit_cfg);
    const double rho = out.fit.achieved;

    AssembledEsn assembled = assemble_esn(out.fit.params, sas.W1);
    out.esn = assembled.esn;
    out.nn = out.fit.params;
    out.morphism = assembled.morphism;

    ReservoirSystem sas_sys = sas_system(sas, L, "sas_chain");
    ReservoirSystem esn_sys = esn_system(out.esn, 1.0 - 1e-9, "esn_chain");
    NnReservoirParams nn = out.nn;
    // ||E sigma(.)|| <= ||E||_2 sqrt(width) always, so this ball is invariant
    const double nn_ball =
        std::max(L, spectral_norm(nn.E) * std::sqrt(static_cast<double>(nn.width()))) + 1.0;
    Eigen::MatrixXd W1 = sas.W1;
    ReservoirSystem nn_sys(
        [nn](const Eigen::VectorXd& x, const Eigen::VectorXd& z) { return nn(x, z); },
        [W1](const Eigen::VectorXd& x) -> Eigen::VectorXd { return W1 * x; },
        sas.state_dim, sas.input_dim, sas.output_dim(), nn_ball, 1.0 - 1e-9, "nn_chain");

    const long washout = washout_length(K, L, verify.washout_tol);
    if (verify.window <= washout)
        throw std::invalid_argument("sas_to_esn: verification window must exceed washout " +
                                    std::to_string(washout));
    auto inputs = sample_KM(sas.input_dim, 1.0 - 1e-9, verify.window, verify.z_samples,
                            substream_seed(verify.seed, "chain_inputs"));

    std::vector<Eigen::VectorXd> reachable_states, reachable_inputs;
    for (const auto& z : inputs) {
        RunResult rs = run_filter(sas_sys, *cert.cert, z, verify.washout_tol);
        RunResult re = run_washout(esn_sys, z, washout);
        for (long t = rs.clean_from; t <= 0; ++t) {
            out.measured = std::max(out.measured, (rs.outputs.at(t) - re.outputs.at(t)).norm());
            Eigen::VectorXd ex = out.morphism * re.states.at(t);
            if (ex.norm() > L + verify.compare_tol) out.ball_preserved = false;
            if (static_cast<long>(reachable_states.size()) <
                verify.morphism_samples) {
                reachable_states.push_back(re.states.at(t));
                reachable_inputs.push_back(z.at(t));
            }
        }
    }
    out.morphism_residual =
        morphism_check(out.morphism, esn_sys, nn_sys, reachable_states, reachable_inputs)
            .worst_deviation;
    out.chain_bound = W1n * rho / (1.0 - K);
    out.verified = out.fit.success && out.ball_preserved &&
                   out.measured <= out.chain_bound + verify.compare_tol;
    return out;
}

// ---------------------------------------------------------------------------
// Linear readout training.
// ---------------------------------------------------------------------------

/// Fits W minimizing sum ||W x_t - y_t||^2 + lambda ||W||_F^2 over the clean
/// indices of washout runs; deterministic given inputs.
inline Eigen::MatrixXd train_readout(const ReservoirSystem& S, const ContractionCertificate& cert,
                                     const std::vector<BoundedSignal>& inputs,
                                     const std::vector<BoundedSignal>& teachers, double lambda,
                                     long washout, double washout_tol = 1e-9) {
    if (inputs.size() != teachers.size() || inputs.empty())
        throw std::invalid_argument("train_readout: need matching nonempty input/teacher lists");
    if (lambda < 0.0) throw std::invalid_argument("train_readout: ridge lambda must be >= 0");
    const long required = washout_length(cert.r, S.state_bound(), washout_tol);
    if (washout < required)
        throw std::invalid_argument("train_readout: washout " + std::to_string(washout) +
                                    " below the certified requirement " + std::to_string(required));
    const Eigen::Index N = S.state_dim();
    const Eigen::Index d = teachers.front().dim();

    std::vector<Eigen::VectorXd> xs, ys;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (teachers[i].length() != inputs[i].length())
            throw std::invalid_argument("train_readout: teacher not aligned with input");
        RunResult run = run_filter(S, cert, inputs[i], washout_tol);
        const long from = inputs[i].first_index() + washout;
        for (long t = from; t <= 0; ++t) {
            xs.push_back(run.states.at(t));
            ys.push_back(teachers[i].at(t));
        }
    }
    const auto count = static_cast<Eigen::Index>(xs.size());
    Eigen::MatrixXd X(N, count), Y(d, count);
    for (Eigen::Index i = 0; i < count; ++i) {
        X.col(i) = xs[static_cast<std::size_t>(i)];
        Y.col(i) = ys[static_cast<std::size_t>(i)];
    }
    if (lambda > 0.0) {
        Eigen::MatrixXd gram = X * X.transpose();
        gram.diagonal().array() += lambda;
        return gram.ldlt().solve(X * Y.transpose()).transpose();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X.transpose());
    if (qr.rank() < N)
        throw std::runtime_error(
            "train_readout: state matrix is rank deficient with lambda=0; use lambda > 0");
    return qr.solve(Y.transpose()).transpose();
}

// ---------------------------------------------------------------------------
// Benchmark targets standing in for arbitrary fading memory filters.
// ---------------------------------------------------------------------------

struct TargetFilter {
    Functional functional;
    Filter filter;
    std::string kind;
    nlohmann::json params;
};

/// NARMA recursion over a given driving sequence, from zero history, with the
/// state clamped to [0,1].
inline std::vector<double> narma_sequence(const std::vector<double>& u, int order) {
    std::vector<double> y(u.size(), 0.0);
    auto yat = [&y](long t) { return t < 0 ? 0.0 : y[static_cast<std::size_t>(t)]; };
    auto uat = [&u](long t) { return t < 0 ? 0.0 : u[static_cast<std::size_t>(t)]; };
    for (long t = 0; t < static_cast<long>(u.size()); ++t) {
        double acc = 0.0;
        for (int i = 0; i < order; ++i) acc += yat(t - 1 - i);
        double v = 0.3 * yat(t - 1) + 0.05 * yat(t - 1) * acc + 1.5 * uat(t - order) * uat(t - 1) +
                   0.1;
        y[static_cast<std::size_t>(t)] = std::clamp(v, 0.0, 1.0);
    }
    return y;
}

/// NARMA target of the given order on scalar K_M inputs, affinely mapped to
/// the conventional [0, 0.5] driving range; the map is recorded in params.
inline TargetFilter narma_target(int order, double input_bound = 1.0) {
    if (order < 1) throw std::invalid_argument("narma_target: order must be >= 1");
    SignalSpec spec{1, input_bound};
    const double M = input_bound;
    Functional H(
        [order, M](const BoundedSignal& z) {
            const long T = z.length();
            std::vector<double> u(static_cast<std::size_t>(T));
            for (long t = z.first_index(); t <= 0; ++t)
                u[static_cast<std::size_t>(t - z.first_index())] = (z.at(t)[0] + M) / (4.0 * M);
            auto y = narma_sequence(u, order);
            Eigen::VectorXd out(1);
            out[0] = y.back();
            return out;
        },
        spec, 1, "narma" + std::to_string(order), 0);
    TargetFilter t{H, filter_from_functional(H), "narma",
                   nlohmann::json{{"order", order},
                                  {"input_map", "u = (z + M) / (4 M), M = " + format_double(M)}}};
    return t;
}

struct VolterraTerm {
    double coeff = 0.0;
    std::vector<long> lags;  // y contribution coeff * prod_j z_{t - lag_j}
};

/// Finite Volterra series on scalar inputs: y_t = sum_k a_k prod_j z_{t-tau_{kj}}.
inline TargetFilter volterra_target(const std::vector<VolterraTerm>& terms,
                                    double input_bound = 1.0) {
    if (terms.empty()) throw std::invalid_argument("volterra_target: no kernel terms");
    long depth = 0;
    for (const auto& term : terms) {
        if (!std::isfinite(term.coeff))
            throw std::invalid_argument("volterra_target: non-finite coefficient");
        for (long lag : term.lags) {
            if (lag < 0) throw std::invalid_argument("volterra_target: negative lag");
            depth = std::max(depth, lag);
        }
    }
    SignalSpec spec{1, input_bound};
    auto kernel = terms;
    Functional H(
        [kernel](const BoundedSignal& z) {
            double acc = 0.0;
            for (const auto& term : kernel) {
                double prod = term.coeff;
                for (long lag : term.lags) prod *= z.at(-lag)[0];
                acc += prod;
            }
            Eigen::VectorXd out(1);
            out[0] = acc;
            return out;
        },
        spec, 1, "volterra(depth " + std::to_string(depth) + ")", 0);
    nlohmann::json terms_json = nlohmann::json::array();
    for (const auto& term : kernel)
        terms_json.push_back({{"coeff", term.coeff}, {"lags", term.lags}});
    return TargetFilter{H, filter_from_functional(H), "volterra",
                        nlohmann::json{{"terms", terms_json}, {"memory_depth", depth}}};
}

// ---------------------------------------------------------------------------
// End-to-end pipelines.
// ---------------------------------------------------------------------------

struct PracticalConfig {
    Eigen::Index reservoir_size = 50;
    double rho = 0.5;
    Activation activation = Activation(Activation::Kind::tanh);
    double input_bound = 1.0;
    long train_signals = 40;
    long test_signals = 20;
    long window = 60;
    double ridge = 1e-8;
    double washout_tol = 1e-9;
    double input_scale = 1.0;
    double bias_scale = 0.1;
    std::uint64_t seed = 1;
};

struct EndToEndReport {
    std::string pipeline;
    Eigen::Index reservoir_size = 0;
    double r = 0.0;
    double train_error = 0.0;
    double test_error = 0.0;
    std::uint64_t seed = 0;
    nlohmann::json stages;
};

inline void to_json(nlohmann::json& j, const EndToEndReport& r) {
    j = nlohmann::json{{"pipeline", r.pipeline}, {"reservoir_size", r.reservoir_size},
                       {"r", r.r},               {"train_error", r.train_error},
                       {"test_error", r.test_error}, {"seed", r.seed},
                       {"stages", r.stages}};
}

/// Random certified reservoir plus trained linear readout, evaluated by the
/// sup distance against the target on held-out K_M samples.
inline std::pair<EsnParams, EndToEndReport> practical_pipeline(const TargetFilter& target,
                                                               const PracticalConfig& cfg) {
    const Eigen::Index n = target.functional.input_spec().dim;
    const Eigen::Index d = target.functional.output_dim();
    EsnParams esn = random_esn(cfg.reservoir_size, n, d, cfg.rho, cfg.activation,
                               substream_seed(cfg.seed, "reservoir"), cfg.input_scale,
                               cfg.bias_scale);
    auto cert = esn_esp_certificate(esn);
    if (!cert) throw std::logic_error("practical_pipeline: generated reservoir lacks certificate");
    ReservoirSystem sys = esn_system(esn, cfg.input_bound, "practical_esn");
    const long washout = washout_length(cert->r, sys.state_bound(), cfg.washout_tol);
    if (cfg.window <= washout + 4)
        throw std::invalid_argument("practical_pipeline: window too short for washout " +
                                    std::to_string(washout));

    auto train_inputs = sample_KM(n, cfg.input_bound, cfg.window, cfg.train_signals,
                                  substream_seed(cfg.seed, "train_inputs"));
    std::vector<BoundedSignal> train_teachers;
    train_teachers.reserve(train_inputs.size());
    for (const auto& z : train_inputs) train_teachers.push_back(target.filter(z).signal);

    esn.W = train_readout(sys, *cert, train_inputs, train_teachers, cfg.ridge, washout,
                          cfg.washout_tol);
    ReservoirSystem trained = esn_system(esn, cfg.input_bound, "practical_esn");

    auto sup_error = [&](const std::vector<BoundedSignal>& zs,
                         const std::vector<BoundedSignal>& teachers) {
        double err = 0.0;
        for (std::size_t i = 0; i < zs.size(); ++i) {
            RunResult run = run_filter(trained, *cert, zs[i], cfg.washout_tol);
            for (long t = run.clean_from; t <= 0; ++t)
                err = std::max(err, (run.outputs.at(t) - teachers[i].at(t)).norm());
        }
        return err;
    };

    auto test_inputs = sample_KM(n, cfg.input_bound, cfg.window, cfg.test_signals,
                                 substream_seed(cfg.seed, "test_inputs"));
    std::vector<BoundedSignal> test_teachers;
    test_teachers.reserve(test_inputs.size());
    for (const auto& z : test_inputs) test_teachers.push_back(target.filter(z).signal);

    EndToEndReport report;
    report.pipeline = "practical";
    report.reservoir_size = cfg.reservoir_size;
    report.r = cert->r;
    report.train_error = sup_error(train_inputs, train_teachers);
    report.test_error = sup_error(test_inputs, test_teachers);
    report.seed = cfg.seed;
    report.stages = nlohmann::json{{"washout", washout},
                                   {"ridge", cfg.ridge},
                                   {"train_signals", cfg.train_signals},
                                   {"test_signals", cfg.test_signals},
                                   {"window", cfg.window},
                                   {"target", target.kind},
                                   {"target_params", target.params}};
    return {std::move(esn), std::move(report)};
}

struct ConstructiveConfig {
    double eps = 0.2;  // end-to-end budget
    double K = 0.6;
    double L = 2.0;
    long l1_samples = 20000;
    FitConfig fit;
    ChainVerifyConfig verify;
    std::uint64_t seed = 1;
};

/// Constructive pipeline: a certified SAS (user-supplied) is pushed through
/// the hidden-layer fit and the ESN assembly; the report carries every
/// stage's measured error against its budgeted allowance. When a target is
/// supplied, the SAS-stage error eps1 is measured empirically against it.
inline std::pair<EsnParams, EndToEndReport> constructive_pipeline(
    const SasParams& sas, const std::optional<TargetFilter>& target,
    const ConstructiveConfig& cfg) {
    SasCertification cert = sas_certificate(sas, cfg.K, cfg.L);
    if (!cert.cert)
        throw std::runtime_error("constructive_pipeline: SAS certification failed: " +
                                 cert.failure);
    auto f_sas = [&sas](const Eigen::VectorXd& x, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        return sas_p(sas, z) * x + sas_q(sas, z);
    };
    const double L1 = sampled_map_sup(f_sas, sas.state_dim, sas.input_dim, cfg.L, 1.0 - 1e-9,
                                      cfg.l1_samples, substream_seed(cfg.seed, "l1"));
    ErrorBudget budget = make_error_budget(cfg.eps, cfg.K, cfg.L, L1, spectral_norm(sas.W1));
    SasToEsnResult chain = sas_to_esn(sas, cert, budget, cfg.fit, cfg.verify);

    EndToEndReport report;
    report.pipeline = "constructive";
    report.reservoir_size = chain.esn.state_dim();
    report.r = cfg.K;
    report.seed = cfg.seed;
    report.stages = nlohmann::json{{"budget", budget}, {"chain", chain}, {"L1", L1}};
    if (target) report.stages["target_params"] = target->params;

    if (target) {
        ReservoirSystem sas_sys = sas_system(sas, cfg.L, "sas_eval");
        ReservoirSystem esn_sys = esn_system(chain.esn, 1.0 - 1e-9, "esn_eval");
        const long washout = washout_length(cfg.K, cfg.L, cfg.verify.washout_tol);
        auto inputs = sample_KM(sas.input_dim, 1.0 - 1e-9, cfg.verify.window,
                                cfg.verify.z_samples, substream_seed(cfg.seed, "target_eval"));
        double eps1_measured = 0.0, total = 0.0;
        for (const auto& z : inputs) {
            BoundedSignal teacher = target->filter(z).signal;
            RunResult rs = run_filter(sas_sys, *cert.cert, z, cfg.verify.washout_tol);
            RunResult re = run_washout(esn_sys, z, washout);
            for (long t = rs.clean_from; t <= 0; ++t) {
                eps1_measured = std::max(eps1_measured, (rs.outputs.at(t) - teacher.at(t)).norm());
                total = std::max(total, (re.outputs.at(t) - teacher.at(t)).norm());
            }
        }
        report.train_error = eps1_measured;  // SAS-stage error, measured
        report.test_error = total;           // end-to-end error against the target
        report.stages["eps1_measured"] = eps1_measured;
    } else {
        report.train_error = chain.fit.achieved;
        report.test_error = chain.measured;
    }
    return {chain.esn, std::move(report)};
}

struct SasFitConfig {
    Eigen::Index state_dim = 8;
    int degree = 2;
    double coeff_bound = 0.45;  // coefficient-sum target for p and q; must stay below K
    double ridge = 1e-8;
    long train_signals = 40;
    long window = 96;
};

/// Pragmatic SAS approximant for an arbitrary target when none is supplied:
/// a random certified state-affine reservoir with its readout W1 trained by
/// ridge regression against the target. The SAS-stage error is whatever the
/// later evaluation measures; nothing is guaranteed about it.
inline SasParams fit_sas_readout(const TargetFilter& target, double K, double L,
                                 const SasFitConfig& cfg, double washout_tol,
                                 std::uint64_t seed) {
    const Eigen::Index n = target.functional.input_spec().dim;
    const Eigen::Index d = target.functional.output_dim();
    if (!(cfg.coeff_bound < K))
        throw std::invalid_argument("fit_sas_readout: coefficient bound must stay below K");
    SasParams sas = random_sas(cfg.state_dim, n, d, cfg.degree, cfg.coeff_bound, cfg.coeff_bound,
                               substream_seed(seed, "sas_reservoir"));
    auto cert = sas_certificate(sas, K, L);
    if (!cert.cert)
        throw std::runtime_error("fit_sas_readout: random SAS failed certification: " +
                                 cert.failure);
    ReservoirSystem sys = sas_system(sas, L, "sas_fit");
    const long washout = washout_length(K, L, washout_tol);
    if (cfg.window <= washout)
        throw std::invalid_argument("fit_sas_readout: window must exceed washout " +
                                    std::to_string(washout));
    auto inputs = sample_KM(n, 1.0 - 1e-9, cfg.window, cfg.train_signals,
                            substream_seed(seed, "sas_fit_inputs"));
    std::vector<BoundedSignal> teachers;
    teachers.reserve(inputs.size());
    for (const auto& z : inputs) teachers.push_back(target.filter(z).signal);
    sas.W1 = train_readout(sys, *cert.cert, inputs, teachers, cfg.ridge, washout, washout_tol);
    return sas;
}

/// Wraps an arbitrary functional as an approximation target.
inline TargetFilter user_target(const Functional& H) {
    return TargetFilter{H, filter_from_functional(H), "user", nlohmann::json{{"label", H.label()}}};
}

enum class Pipeline { practical, constructive };

struct EndToEndConfig {
    Pipeline pipeline = Pipeline::practical;
    PracticalConfig practical;
    ConstructiveConfig constructive;
    std::optional<SasParams> sas;      // user-supplied SAS for the constructive pipeline
    std::optional<SasFitConfig> sas_fit;  // or: fit a readout-trained SAS to the target
};

/// Single entry point over both pipelines; stage failures propagate as
/// exceptions carrying the stage name.
inline std::pair<EsnParams, EndToEndReport> end_to_end_approximate(const TargetFilter& target,
                                                                   const EndToEndConfig& cfg) {
    if (cfg.pipeline == Pipeline::practical) return practical_pipeline(target, cfg.practical);
    if (cfg.sas) return constructive_pipeline(*cfg.sas, target, cfg.constructive);
    if (cfg.sas_fit) {
        SasParams sas = fit_sas_readout(target, cfg.constructive.K, cfg.constructive.L,
                                        *cfg.sas_fit, cfg.constructive.verify.washout_tol,
                                        cfg.constructive.seed);
        return constructive_pipeline(sas, target, cfg.constructive);
    }
    throw std::invalid_argument(
        "end_to_end_approximate: constructive pipeline needs a SAS model or a SAS fit config");
}

}  // namespace rcuniv
