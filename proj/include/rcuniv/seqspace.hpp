#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rcuniv/rng.hpp"

namespace rcuniv {

/// A decreasing weight map w : N -> (0,1] with zero limit. Two families are
/// shipped: geometric w_t = lambda^t, and tabulated values with a geometric
/// tail so that w_T stays computable for every T.
class WeightingSequence {
  public:
    static WeightingSequence geometric(double lambda) {
        if (!(lambda > 0.0 && lambda < 1.0))
            throw std::invalid_argument("WeightingSequence::geometric: lambda must lie in (0,1)");
        WeightingSequence w;
        w.lambda_ = lambda;
        w.name_ = "geometric(" + std::to_string(lambda) + ")";
        return w;
    }

    static WeightingSequence tabulated(std::vector<double> values, double tail_rate) {
        if (values.empty())
            throw std::invalid_argument("WeightingSequence::tabulated: values must be nonempty");
        if (!(tail_rate > 0.0 && tail_rate < 1.0))
            throw std::invalid_argument("WeightingSequence::tabulated: tail rate must lie in (0,1)");
        double prev = 1.0;
        for (double v : values) {
            if (!(v > 0.0 && v <= 1.0))
                throw std::invalid_argument("WeightingSequence::tabulated: values must lie in (0,1]");
            if (v > prev)
                throw std::invalid_argument("WeightingSequence::tabulated: values must be non-increasing");
            prev = v;
        }
        WeightingSequence w;
        w.values_ = std::move(values);
        w.lambda_ = tail_rate;
        w.name_ = "tabulated(" + std::to_string(w.values_.size()) + " values, tail " +
                  std::to_string(tail_rate) + ")";
        return w;
    }

    /// w_k for k >= 0.
    double at(long k) const {
        if (k < 0) throw std::invalid_argument("WeightingSequence::at: index must be >= 0");
        if (values_.empty()) return std::pow(lambda_, static_cast<double>(k));
        auto n = static_cast<long>(values_.size());
        if (k < n) return values_[static_cast<std::size_t>(k)];
        return values_.back() * std::pow(lambda_, static_cast<double>(k - n + 1));
    }

    /// Smallest index T with w_T < eta; witnesses the zero-limit invariant.
    long index_below(double eta) const {
        if (!(eta > 0.0)) throw std::invalid_argument("WeightingSequence::index_below: eta must be positive");
        long k = 0;
        if (values_.empty()) {
            // analytic start for the geometric family, then adjust for rounding
            if (eta <= 1.0) k = std::max<long>(0, static_cast<long>(std::floor(std::log(eta) / std::log(lambda_))));
        } else {
            k = static_cast<long>(values_.size()) - 1;
            while (k > 0 && values_[static_cast<std::size_t>(k - 1)] < eta) --k;
            if (values_.front() < eta) return 0;
        }
        while (k > 0 && at(k - 1) < eta) --k;
        while (at(k) >= eta) ++k;
        return k;
    }

    bool is_geometric() const { return values_.empty(); }
    const std::string& name() const { return name_; }

  private:
    WeightingSequence() = default;
    double lambda_ = 0.5;
    std::vector<double> values_;
    std::string name_;
};

enum class Padding { zero, constant };

inline const char* to_string(Padding p) { return p == Padding::zero ? "zero" : "constant"; }

inline Padding padding_from_string(const std::string& s) {
    if (s == "zero") return Padding::zero;
    if (s == "constant") return Padding::constant;
    throw std::invalid_argument("unknown padding kind: " + s);
}

/// Finite-window representation of a left-infinite sequence in K_M. The
/// window holds entries t = -(T-1)..0 with the most recent entry stored last;
/// before the window the sequence follows the declared padding rule, so every
/// index t <= 0 has a well-defined value.
class BoundedSignal {
  public:
    BoundedSignal(Eigen::MatrixXd window, double bound, Padding padding = Padding::zero)
        : window_(std::move(window)), bound_(bound), padding_(padding) {
        if (window_.cols() < 1) throw std::invalid_argument("BoundedSignal: empty window");
        if (window_.rows() < 1) throw std::invalid_argument("BoundedSignal: dimension must be >= 1");
        if (!(bound_ > 0.0)) throw std::invalid_argument("BoundedSignal: bound M must be positive");
        if (!window_.allFinite()) throw std::invalid_argument("BoundedSignal: non-finite entry");
        for (Eigen::Index c = 0; c < window_.cols(); ++c) {
            if (window_.col(c).norm() > bound_ * (1.0 + 1e-12))
                throw std::invalid_argument("BoundedSignal: window entry exceeds bound M");
        }
    }

    Eigen::Index dim() const { return window_.rows(); }
    Eigen::Index length() const { return window_.cols(); }
    double bound() const { return bound_; }
    Padding padding() const { return padding_; }
    const Eigen::MatrixXd& window() const { return window_; }

    /// Index of the oldest window entry, -(T-1).
    long first_index() const { return -(static_cast<long>(window_.cols()) - 1); }

    /// Value at any t <= 0, resolving the padding rule before the window.
    Eigen::VectorXd at(long t) const {
        if (t > 0) throw std::out_of_range("BoundedSignal::at: index must be <= 0");
        if (t >= first_index()) return window_.col(t - first_index());
        if (padding_ == Padding::zero) return Eigen::VectorXd::Zero(window_.rows());
        return window_.col(0);
    }

    /// Value contributed by the padding rule (every index before the window).
    Eigen::VectorXd padding_value() const {
        if (padding_ == Padding::zero) return Eigen::VectorXd::Zero(window_.rows());
        return window_.col(0);
    }

    /// Restriction P_{Z_-} . T_{-t}: keeps entries up to and including t,
    /// reindexed so the kept entry at t becomes the new time origin.
    BoundedSignal truncated_to(long t) const {
        if (t > 0 || t < first_index())
            throw std::out_of_range("BoundedSignal::truncated_to: index outside window");
        return BoundedSignal(window_.leftCols(t - first_index() + 1), bound_, padding_);
    }

  private:
    Eigen::MatrixXd window_;
    double bound_;
    Padding padding_;
};

/// Norm value plus a certified bound on whatever the padding could add beyond
/// the window; value <= true norm <= value + tail_bound.
struct NormReport {
    double value = 0.0;
    double tail_bound = 0.0;
    bool exact = true;
};

/// ||z||_w = sup_t ||z_t|| w_{-t}, evaluated over the window. Zero padding
/// contributes nothing; constant padding is covered by the M*w_T tail bound.
inline NormReport weighted_norm(const BoundedSignal& z, const WeightingSequence& w) {
    const long T = z.length();
    double value = 0.0;
    for (long c = 0; c < T; ++c) {
        value = std::max(value, z.window().col(c).norm() * w.at(T - 1 - c));
    }
    NormReport r;
    r.value = value;
    if (z.padding() == Padding::zero) {
        r.tail_bound = 0.0;
        r.exact = true;
    } else {
        r.tail_bound = z.bound() * w.at(T);
        r.exact = false;
    }
    return r;
}

/// ||z||_inf over the denoted sequence. The padding's supremum is known
/// exactly (0 or the constant), so the report is always exact.
inline NormReport sup_norm(const BoundedSignal& z) {
    double value = 0.0;
    for (long c = 0; c < z.length(); ++c) value = std::max(value, z.window().col(c).norm());
    if (z.padding() == Padding::constant) value = std::max(value, z.window().col(0).norm());
    return NormReport{value, 0.0, true};
}

/// D_w^M(x,y) = sup_t min(||x_t - y_t||, M) w_{-t}. Beyond both windows the
/// difference of the padding rules is constant, so its supremum folds in
/// exactly; no residual tail uncertainty remains.
inline double weighted_metric(const BoundedSignal& x, const BoundedSignal& y,
                              const WeightingSequence& w, double clamp) {
    if (x.dim() != y.dim()) throw std::invalid_argument("weighted_metric: dimension mismatch");
    if (!(clamp > 0.0)) throw std::invalid_argument("weighted_metric: clamp M must be positive");
    const long T = std::max(x.length(), y.length());
    double value = 0.0;
    for (long t = -(T - 1); t <= 0; ++t) {
        double d = std::min((x.at(t) - y.at(t)).norm(), clamp);
        value = std::max(value, d * w.at(-t));
    }
    double pad_diff = std::min((x.padding_value() - y.padding_value()).norm(), clamp);
    value = std::max(value, pad_diff * w.at(T));
    return value;
}

/// Upper bound 2*M*w_T on ||z - z'||_w for any z, z' in K_M that agree on the
/// last T steps.
inline double tail_divergence_bound(long T, double M, const WeightingSequence& w) {
    if (T < 0) throw std::invalid_argument("tail_divergence_bound: T must be >= 0");
    if (!(M > 0.0)) throw std::invalid_argument("tail_divergence_bound: M must be positive");
    return 2.0 * M * w.at(T);
}

/// Deterministic-under-seed draws from K_M: each window entry uniform on the
/// closed Euclidean ball of radius M, zero padding.
inline std::vector<BoundedSignal> sample_KM(Eigen::Index n, double M, long T, long count,
                                            std::uint64_t seed) {
    if (n < 1 || !(M > 0.0) || T < 1 || count < 0)
        throw std::invalid_argument("sample_KM: arguments must be positive");
    Rng rng(seed);
    std::vector<BoundedSignal> out;
    out.reserve(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) {
        Eigen::MatrixXd window(n, T);
        for (long c = 0; c < T; ++c) window.col(c) = rng.ball(n, M);
        out.emplace_back(std::move(window), M, Padding::zero);
    }
    return out;
}

}  // namespace rcuniv
