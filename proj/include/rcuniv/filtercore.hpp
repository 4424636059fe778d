#pragma once

#include <Eigen/Dense>

#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rcuniv/seqspace.hpp"

namespace rcuniv {

struct SignalSpec {
    Eigen::Index dim = 1;
    double bound = 1.0;  // K_M radius the object accepts
};

inline void check_input(const SignalSpec& spec, const BoundedSignal& z, const char* who) {
    if (z.dim() != spec.dim)
        throw std::invalid_argument(std::string(who) + ": input dimension mismatch");
    if (z.bound() > spec.bound * (1.0 + 1e-12))
        throw std::invalid_argument(std::string(who) + ": input bound exceeds accepted K_M radius");
}

/// A functional H : K_M -> R^d evaluated on the denoted left-infinite
/// sequence of a BoundedSignal. `settle` declares how many entries past the
/// left window edge may be contaminated by truncation or initial-condition
/// effects: 0 means the value is exact for the denoted sequence on any
/// window; s > 0 means windows shorter than s+1 may be off by the producer's
/// tolerance (reservoir washout functionals report their washout length
/// here).
class Functional {
  public:
    using Eval = std::function<Eigen::VectorXd(const BoundedSignal&)>;

    Functional(Eval eval, SignalSpec input, Eigen::Index out_dim, std::string label,
               long settle = 0)
        : eval_(std::move(eval)), input_(input), out_dim_(out_dim), label_(std::move(label)),
          settle_(settle) {}

    Eigen::VectorXd operator()(const BoundedSignal& z) const {
        check_input(input_, z, label_.c_str());
        Eigen::VectorXd y = eval_(z);
        if (y.size() != out_dim_)
            throw std::logic_error(label_ + ": evaluator returned wrong output dimension");
        return y;
    }

    const SignalSpec& input_spec() const { return input_; }
    Eigen::Index output_dim() const { return out_dim_; }
    const std::string& label() const { return label_; }
    long settle() const { return settle_; }

  private:
    Eval eval_;
    SignalSpec input_;
    Eigen::Index out_dim_;
    std::string label_;
    long settle_;
};

/// Filter evaluation result: the output window (same length as the input) and
/// the first index whose entry is certified clean, i.e. within the producer's
/// tolerance of the true filter value on the denoted sequence.
struct FilterOutput {
    BoundedSignal signal;
    long clean_from;
};

/// A filter U : K_M -> sequences, evaluated window-to-window. Causality and
/// time invariance are construction flags; the probes below test them
/// empirically on any filter regardless of the flags.
class Filter {
  public:
    using Eval = std::function<FilterOutput(const BoundedSignal&)>;

    Filter(Eval eval, SignalSpec input, Eigen::Index out_dim, std::string label, bool causal,
           bool time_invariant, long settle = 0)
        : eval_(std::move(eval)), input_(input), out_dim_(out_dim), label_(std::move(label)),
          causal_(causal), time_invariant_(time_invariant), settle_(settle) {}

    FilterOutput operator()(const BoundedSignal& z) const {
        check_input(input_, z, label_.c_str());
        FilterOutput out = eval_(z);
        if (out.signal.dim() != out_dim_)
            throw std::logic_error(label_ + ": evaluator returned wrong output dimension");
        if (out.signal.length() != z.length())
            throw std::logic_error(label_ + ": output window length must equal input length");
        return out;
    }

    const SignalSpec& input_spec() const { return input_; }
    Eigen::Index output_dim() const { return out_dim_; }
    const std::string& label() const { return label_; }
    bool causal() const { return causal_; }
    bool time_invariant() const { return time_invariant_; }
    long settle() const { return settle_; }

  private:
    Eval eval_;
    SignalSpec input_;
    Eigen::Index out_dim_;
    std::string label_;
    bool causal_;
    bool time_invariant_;
    long settle_;
};

/// T_tau on windows: output entry at index t equals the input entry at t-tau.
/// The tau most recent entries drop off the right and the window shrinks.
inline BoundedSignal time_delay(const BoundedSignal& z, long tau) {
    if (tau < 0) throw std::invalid_argument("time_delay: tau must be >= 0");
    if (tau >= z.length())
        throw std::invalid_argument("time_delay: tau exceeds window length, result would be empty");
    return BoundedSignal(z.window().leftCols(z.length() - tau), z.bound(), z.padding());
}

/// Psi: H_U(z) := U(z)_0. Only defined on causal time-invariant filters; the
/// arbitrary extension z^e never needs materializing because causality makes
/// the t=0 output depend on z alone.
inline Functional functional_from_filter(const Filter& U) {
    if (!U.causal() || !U.time_invariant())
        throw std::invalid_argument(
            "functional_from_filter: filter must carry causal and time-invariant flags");
    Filter u = U;
    return Functional([u](const BoundedSignal& z) { return u(z).signal.at(0); }, U.input_spec(),
                      U.output_dim(), "Psi(" + U.label() + ")", U.settle());
}

/// Phi: U_H(z)_t := H((P_{Z-} . T_{-t})(z)). Causal and time-invariant by
/// construction. Output entries within `settle` of the left edge are flagged
/// as padding-dependent through clean_from.
inline Filter filter_from_functional(const Functional& H) {
    Functional h = H;
    auto eval = [h](const BoundedSignal& z) {
        const long first = z.first_index();
        Eigen::MatrixXd out(h.output_dim(), z.length());
        double max_norm = 0.0;
        for (long t = first; t <= 0; ++t) {
            Eigen::VectorXd y = h(z.truncated_to(t));
            out.col(t - first) = y;
            max_norm = std::max(max_norm, y.norm());
        }
        double bound = std::max(max_norm, std::numeric_limits<double>::min());
        return FilterOutput{BoundedSignal(std::move(out), bound * (1.0 + 1e-12), Padding::zero),
                            first + h.settle()};
    };
    return Filter(std::move(eval), H.input_spec(), H.output_dim(), "Phi(" + H.label() + ")",
                  /*causal=*/true, /*time_invariant=*/true, H.settle());
}

/// Empirical probe outcome: the worst deviation seen, how many samples were
/// drawn, and a human-readable witness for the worst case.
struct ProbeReport {
    long samples = 0;
    double worst_deviation = 0.0;
    std::optional<std::string> witness_ref;
    std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const ProbeReport& r) {
    j = nlohmann::json{{"samples", r.samples},
                       {"worst_deviation", r.worst_deviation},
                       {"witness_ref", r.witness_ref ? nlohmann::json(*r.witness_ref) : nlohmann::json()},
                       {"seed", r.seed}};
}

struct ProbeConfig {
    long samples = 50;
    long window = 24;
    std::uint64_t seed = 1;
};

/// Draws input pairs that agree up to a cut index and reports the largest
/// output disagreement at or before the cut. Zero certifies consistency with
/// causality on the sample.
inline ProbeReport causality_probe(const Filter& U, ProbeConfig cfg = {}) {
    Rng rng(substream_seed(cfg.seed, "causality_probe"));
    const auto spec = U.input_spec();
    ProbeReport report;
    report.seed = cfg.seed;
    for (long s = 0; s < cfg.samples; ++s) {
        Eigen::MatrixXd wz(spec.dim, cfg.window);
        for (long c = 0; c < cfg.window; ++c) wz.col(c) = rng.ball(spec.dim, spec.bound);
        const long cut_pos = static_cast<long>(rng.integer(static_cast<std::uint64_t>(cfg.window)));
        const long t_cut = cut_pos - (cfg.window - 1);
        Eigen::MatrixXd ww = wz;
        for (long c = cut_pos + 1; c < cfg.window; ++c) ww.col(c) = rng.ball(spec.dim, spec.bound);

        BoundedSignal z(wz, spec.bound), w(ww, spec.bound);
        FilterOutput uz = U(z), uw = U(w);
        const long from = std::max({uz.clean_from, uw.clean_from, z.first_index()});
        for (long t = from; t <= t_cut; ++t) {
            double dev = (uz.signal.at(t) - uw.signal.at(t)).norm();
            if (dev > report.worst_deviation) {
                report.worst_deviation = dev;
                report.witness_ref =
                    "sample " + std::to_string(s) + ", cut t=" + std::to_string(t_cut) +
                    ", deviation at t=" + std::to_string(t);
            }
        }
        ++report.samples;
    }
    return report;
}

/// Compares T_tau . U against U . T_tau for tau <= tau_max on the overlapping
/// clean indices.
inline ProbeReport time_invariance_probe(const Filter& U, long tau_max, ProbeConfig cfg = {}) {
    if (tau_max >= cfg.window)
        throw std::invalid_argument("time_invariance_probe: tau_max must be < window length");
    Rng rng(substream_seed(cfg.seed, "time_invariance_probe"));
    const auto spec = U.input_spec();
    ProbeReport report;
    report.seed = cfg.seed;
    for (long s = 0; s < cfg.samples; ++s) {
        Eigen::MatrixXd wz(spec.dim, cfg.window);
        for (long c = 0; c < cfg.window; ++c) wz.col(c) = rng.ball(spec.dim, spec.bound);
        BoundedSignal z(wz, spec.bound);
        FilterOutput uz = U(z);
        for (long tau = 0; tau <= tau_max; ++tau) {
            BoundedSignal delayed_out = time_delay(uz.signal, tau);
            FilterOutput u_delayed = U(time_delay(z, tau));
            const long from =
                std::max({uz.clean_from + tau, u_delayed.clean_from, delayed_out.first_index()});
            for (long t = from; t <= 0; ++t) {
                double dev = (delayed_out.at(t) - u_delayed.signal.at(t)).norm();
                if (dev > report.worst_deviation) {
                    report.worst_deviation = dev;
                    report.witness_ref = "sample " + std::to_string(s) + ", tau=" +
                                         std::to_string(tau) + ", t=" + std::to_string(t);
                }
            }
        }
        ++report.samples;
    }
    return report;
}

enum class FmpStrategy { mixed, recent_only, remote_only };

/// Generates pairs with ||z - s||_w < delta, by perturbing recent entries
/// and/or replacing the remote past inside K_M, and reports the worst
/// ||H(z) - H(s)||: an empirical modulus-of-continuity estimate at scale
/// delta for the fading memory criterion.
inline ProbeReport fmp_probe(const Functional& H, const WeightingSequence& w, double delta,
                             ProbeConfig cfg = {}, FmpStrategy strategy = FmpStrategy::mixed) {
    if (!(delta > 0.0)) throw std::invalid_argument("fmp_probe: delta must be positive");
    Rng rng(substream_seed(cfg.seed, "fmp_probe"));
    const auto spec = H.input_spec();
    const double M = spec.bound;
    ProbeReport report;
    report.seed = cfg.seed;
    const double budget = 0.99 * delta;
    // beyond this depth a wholesale K_M replacement stays under the budget
    const long replace_from = w.index_below(budget / (2.0 * M));
    for (long s = 0; s < cfg.samples; ++s) {
        Eigen::MatrixXd wz(spec.dim, cfg.window);
        for (long c = 0; c < cfg.window; ++c) wz.col(c) = rng.ball(spec.dim, M);
        Eigen::MatrixXd ws = wz;
        bool perturb_recent = strategy != FmpStrategy::remote_only;
        bool replace_past = strategy != FmpStrategy::recent_only;
        if (strategy == FmpStrategy::mixed) {
            perturb_recent = rng.uniform() < 0.7;
            replace_past = !perturb_recent || rng.uniform() < 0.5;
        }
        for (long c = 0; c < cfg.window; ++c) {
            const long k = cfg.window - 1 - c;  // weight index -t
            if (replace_past && k >= replace_from) {
                ws.col(c) = rng.ball(spec.dim, M);
                continue;
            }
            if (perturb_recent) {
                double amp = std::min(budget / w.at(k), 2.0 * M) * rng.uniform();
                Eigen::VectorXd cand = wz.col(c) + rng.ball(spec.dim, amp);
                double n = cand.norm();
                if (n > M) cand *= M / n;  // projection only shrinks the step
                ws.col(c) = cand;
            }
        }
        BoundedSignal z(wz, M), sig(ws, M);
        if (weighted_metric(z, sig, w, 2.0 * M) >= delta) continue;  // construction slack check
        double dev = (H(z) - H(sig)).norm();
        ++report.samples;
        if (dev > report.worst_deviation) {
            report.worst_deviation = dev;
            report.witness_ref = "sample " + std::to_string(s);
        }
    }
    return report;
}

/// Monte-Carlo lower estimate of |||U1 - U2|||_inf over sampled K_M inputs,
/// compared on the intersection of the filters' clean index ranges. Reported
/// as a lower bound on the supremum, never as the supremum itself.
inline ProbeReport filter_sup_distance(const Filter& U1, const Filter& U2, double M,
                                       ProbeConfig cfg = {}) {
    if (U1.input_spec().dim != U2.input_spec().dim || U1.output_dim() != U2.output_dim())
        throw std::invalid_argument("filter_sup_distance: filter specs do not match");
    if (M > std::min(U1.input_spec().bound, U2.input_spec().bound) * (1.0 + 1e-12))
        throw std::invalid_argument("filter_sup_distance: M exceeds a filter's accepted bound");
    ProbeReport report;
    report.seed = cfg.seed;
    auto inputs = sample_KM(U1.input_spec().dim, M, cfg.window, cfg.samples,
                            substream_seed(cfg.seed, "filter_sup_distance"));
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        FilterOutput a = U1(inputs[s]), b = U2(inputs[s]);
        const long from = std::max({a.clean_from, b.clean_from, inputs[s].first_index()});
        for (long t = from; t <= 0; ++t) {
            double dev = (a.signal.at(t) - b.signal.at(t)).norm();
            if (dev > report.worst_deviation) {
                report.worst_deviation = dev;
                report.witness_ref = "sample " + std::to_string(s) + ", t=" + std::to_string(t);
            }
        }
        ++report.samples;
    }
    return report;
}

// ---- small constructors used by probes, tests and benchmarks ----

inline Filter identity_filter(SignalSpec spec) {
    return Filter([](const BoundedSignal& z) { return FilterOutput{z, z.first_index()}; }, spec,
                  spec.dim, "identity", true, true, 0);
}

/// Filter form of the delay: output_t = z_{t-tau} with the pre-window values
/// resolved through the padding rule, so the window length is preserved.
inline Filter delay_filter(SignalSpec spec, long tau) {
    if (tau < 0) throw std::invalid_argument("delay_filter: tau must be >= 0");
    return Filter(
        [tau](const BoundedSignal& z) {
            Eigen::MatrixXd out(z.dim(), z.length());
            for (long t = z.first_index(); t <= 0; ++t) out.col(t - z.first_index()) = z.at(t - tau);
            return FilterOutput{BoundedSignal(std::move(out), z.bound(), Padding::zero),
                                z.first_index()};
        },
        spec, spec.dim, "delay(" + std::to_string(tau) + ")", true, true, 0);
}

/// H(z) = sum_k coeffs[k] z_{-k}; the workhorse finite-memory functional.
inline Functional fir_functional(SignalSpec spec, std::vector<double> coeffs) {
    if (coeffs.empty()) throw std::invalid_argument("fir_functional: coefficients must be nonempty");
    auto cs = std::move(coeffs);
    return Functional(
        [cs](const BoundedSignal& z) {
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(z.dim());
            for (std::size_t k = 0; k < cs.size(); ++k) acc += cs[k] * z.at(-static_cast<long>(k));
            return acc;
        },
        spec, spec.dim, "fir(depth " + std::to_string(cs.size() - 1) + ")", 0);
}

inline Functional functional_lincomb(const Functional& a, double alpha, const Functional& b) {
    if (a.input_spec().dim != b.input_spec().dim || a.output_dim() != b.output_dim())
        throw std::invalid_argument("functional_lincomb: specs do not match");
    Functional fa = a, fb = b;
    return Functional([fa, fb, alpha](const BoundedSignal& z) -> Eigen::VectorXd { return fa(z) + alpha * fb(z); },
                      a.input_spec(), a.output_dim(), a.label() + "+" + std::to_string(alpha) + "*" + b.label(),
                      std::max(a.settle(), b.settle()));
}

inline Filter filter_lincomb(const Filter& a, double alpha, const Filter& b) {
    if (a.input_spec().dim != b.input_spec().dim || a.output_dim() != b.output_dim())
        throw std::invalid_argument("filter_lincomb: specs do not match");
    Filter fa = a, fb = b;
    auto eval = [fa, fb, alpha](const BoundedSignal& z) {
        FilterOutput oa = fa(z), ob = fb(z);
        Eigen::MatrixXd win = oa.signal.window() + alpha * ob.signal.window();
        double bound = 0.0;
        for (Eigen::Index c = 0; c < win.cols(); ++c) bound = std::max(bound, win.col(c).norm());
        bound = std::max(bound, std::numeric_limits<double>::min());
        return FilterOutput{BoundedSignal(std::move(win), bound * (1.0 + 1e-12), Padding::zero),
                            std::max(oa.clean_from, ob.clean_from)};
    };
    return Filter(std::move(eval), a.input_spec(), a.output_dim(),
                  a.label() + "+" + std::to_string(alpha) + "*" + b.label(),
                  a.causal() && b.causal(), a.time_invariant() && b.time_invariant(),
                  std::max(a.settle(), b.settle()));
}

}  // namespace rcuniv
