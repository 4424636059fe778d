#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rcuniv/csv.hpp"
#include "rcuniv/reservoir.hpp"

namespace rcuniv {

/// Squashing nonlinearity with a known Lipschitz constant. Both shipped kinds
/// satisfy sigma(0) = 0, which keeps the zero state a fixed point of unbiased
/// reservoirs. User-supplied squashing functions are accepted only together
/// with a declared Lipschitz constant, which is validated by sampling.
class Activation {
  public:
    enum class Kind { tanh, logistic_rescaled, custom };

    explicit Activation(Kind kind = Kind::tanh) : kind_(kind) {
        if (kind == Kind::custom)
            throw std::invalid_argument("use Activation::custom for user activations");
    }

    static Activation from_name(const std::string& name) {
        if (name == "tanh") return Activation(Kind::tanh);
        if (name == "logistic_rescaled") return Activation(Kind::logistic_rescaled);
        throw std::invalid_argument("unsupported activation kind: " + name);
    }

    /// Validates on a sampled grid over [-20, 20] that fn is non-decreasing,
    /// stays in [-1, 1], and that the declared Lipschitz constant dominates
    /// every finite-difference slope.
    static Activation custom(std::function<double(double)> fn, double declared_lipschitz,
                             std::string name) {
        if (!(declared_lipschitz > 0.0))
            throw std::invalid_argument("custom activation: Lipschitz constant must be positive");
        const long grid = 50000;
        double prev = fn(-20.0);
        for (long i = 1; i <= grid; ++i) {
            double x0 = -20.0 + 40.0 * static_cast<double>(i - 1) / grid;
            double x1 = -20.0 + 40.0 * static_cast<double>(i) / grid;
            double v = fn(x1);
            if (!std::isfinite(v) || std::abs(v) > 1.0)
                throw std::invalid_argument("custom activation: range leaves [-1,1]");
            if (v < prev - 1e-12)
                throw std::invalid_argument("custom activation: not non-decreasing");
            double slope = std::abs(v - fn(x0)) / (x1 - x0);
            if (slope > declared_lipschitz + 1e-9)
                throw std::invalid_argument(
                    "custom activation: sampled slope exceeds the declared Lipschitz constant");
            prev = v;
        }
        Activation a{CustomTag{}};
        a.fn_ = std::move(fn);
        a.lipschitz_ = declared_lipschitz;
        a.name_ = std::move(name);
        return a;
    }

    const char* name() const {
        switch (kind_) {
            case Kind::tanh: return "tanh";
            case Kind::logistic_rescaled: return "logistic_rescaled";
            default: return name_.c_str();
        }
    }

    double operator()(double x) const {
        switch (kind_) {
            case Kind::tanh: return std::tanh(x);
            case Kind::logistic_rescaled: return 2.0 / (1.0 + std::exp(-x)) - 1.0;
            default: return fn_(x);
        }
    }

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        return v.unaryExpr([this](double x) { return (*this)(x); });
    }

    /// L_sigma = sup |sigma'|: 1 for tanh, 1/2 for the rescaled logistic.
    double lipschitz() const {
        switch (kind_) {
            case Kind::tanh: return 1.0;
            case Kind::logistic_rescaled: return 0.5;
            default: return lipschitz_;
        }
    }

    Kind kind() const { return kind_; }

  private:
    struct CustomTag {};
    explicit Activation(CustomTag) : kind_(Kind::custom) {}
    Kind kind_;
    std::function<double(double)> fn_;
    double lipschitz_ = 1.0;
    std::string name_ = "custom";
};

/// ||A||_2 = sigma_max(A), via full singular value decomposition.
inline double spectral_norm(const Eigen::MatrixXd& m) {
    if (!m.allFinite()) throw std::invalid_argument("spectral_norm: non-finite entries");
    if (m.rows() == 0 || m.cols() == 0) return 0.0;
    if (m.rows() == 1) return m.row(0).norm();
    if (m.cols() == 1) return m.col(0).norm();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(0);
}

// ---------------------------------------------------------------------------
// Echo state networks: x_t = sigma(A x_{t-1} + C z_t + zeta), y_t = W x_t.
// ---------------------------------------------------------------------------

struct EsnParams {
    Eigen::MatrixXd A;     // N x N reservoir matrix
    Eigen::MatrixXd C;     // N x n input mask
    Eigen::VectorXd zeta;  // N input shift
    Eigen::MatrixXd W;     // d x N readout
    Activation activation = Activation(Activation::Kind::tanh);

    Eigen::Index state_dim() const { return A.rows(); }
    Eigen::Index input_dim() const { return C.cols(); }
    Eigen::Index output_dim() const { return W.rows(); }

    void validate() const {
        if (A.rows() != A.cols()) throw std::invalid_argument("EsnParams: A must be square");
        if (C.rows() != A.rows()) throw std::invalid_argument("EsnParams: C row count != N");
        if (zeta.size() != A.rows()) throw std::invalid_argument("EsnParams: zeta size != N");
        if (W.cols() != A.rows()) throw std::invalid_argument("EsnParams: W column count != N");
        if (!A.allFinite() || !C.allFinite() || !zeta.allFinite() || !W.allFinite())
            throw std::invalid_argument("EsnParams: non-finite entries");
    }
};

inline Eigen::VectorXd esn_step(const EsnParams& p, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& z) {
    if (x.size() != p.state_dim() || z.size() != p.input_dim())
        throw std::invalid_argument("esn_step: dimension mismatch");
    return p.activation.apply(p.A * x + p.C * z + p.zeta);
}

/// ||A||_2 L_sigma < 1 certifies the echo state and fading memory properties
/// with contraction constant r = sigma_max(A) L_sigma.
inline std::optional<ContractionCertificate> esn_esp_certificate(const EsnParams& p) {
    p.validate();
    double r = spectral_norm(p.A) * p.activation.lipschitz();
    if (r >= 1.0) return std::nullopt;
    return ContractionCertificate{r, ContractionCertificate::Method::analytic,
                                  "spectral_norm(A) * L_sigma"};
}

/// Wraps the ESN as a generic reservoir system. States live in [-1,1]^N, so
/// the enclosing Euclidean ball has radius sqrt(N).
inline ReservoirSystem esn_system(const EsnParams& p, double input_bound,
                                  std::string label = "esn") {
    p.validate();
    EsnParams params = p;
    double L = std::sqrt(static_cast<double>(p.state_dim()));
    return ReservoirSystem(
        [params](const Eigen::VectorXd& x, const Eigen::VectorXd& z) {
            return esn_step(params, x, z);
        },
        [params](const Eigen::VectorXd& x) -> Eigen::VectorXd { return params.W * x; },
        p.state_dim(), p.input_dim(), p.output_dim(), L, input_bound, std::move(label));
}

/// Random reservoir in the usual practical style: i.i.d. uniform entries with
/// A rescaled so spectral_norm(A) * L_sigma equals the target rho < 1, which
/// guarantees the certificate.
inline EsnParams random_esn(Eigen::Index N, Eigen::Index n, Eigen::Index d, double rho,
                            Activation activation, std::uint64_t seed, double input_scale = 1.0,
                            double bias_scale = 0.1) {
    if (!(rho >= 0.0 && rho < 1.0))
        throw std::invalid_argument("random_esn: rho must lie in [0,1)");
    Rng rng(substream_seed(seed, "random_esn"));
    EsnParams p;
    p.A = rng.uniform_matrix(N, N, -1.0, 1.0);
    double s = spectral_norm(p.A);
    if (s > 0.0) p.A *= rho / (activation.lipschitz() * s);
    p.C = input_scale * rng.uniform_matrix(N, n, -1.0, 1.0);
    p.zeta = bias_scale * rng.uniform_vector(N, -1.0, 1.0);
    p.W = Eigen::MatrixXd::Zero(d, N);
    p.activation = activation;
    return p;
}

// ---------------------------------------------------------------------------
// Non-homogeneous state-affine systems: x_t = p(z_t) x_{t-1} + q(z_t),
// y_t = W1 x_t, with matrix-polynomial coefficients over multi-indices.
// ---------------------------------------------------------------------------

using MultiIndex = std::vector<int>;

struct SasParams {
    Eigen::Index input_dim = 1;   // n
    Eigen::Index state_dim = 1;   // N1
    std::map<MultiIndex, Eigen::MatrixXd> p_coeffs;  // N1 x N1 per multi-index
    std::map<MultiIndex, Eigen::VectorXd> q_coeffs;  // N1 per multi-index
    Eigen::MatrixXd W1;                              // d x N1 readout

    Eigen::Index output_dim() const { return W1.rows(); }

    int degree_p() const {
        int deg = 0;
        for (const auto& [idx, m] : p_coeffs) {
            int s = 0;
            for (int i : idx) s += i;
            deg = std::max(deg, s);
        }
        return deg;
    }
    int degree_q() const {
        int deg = 0;
        for (const auto& [idx, m] : q_coeffs) {
            int s = 0;
            for (int i : idx) s += i;
            deg = std::max(deg, s);
        }
        return deg;
    }

    void validate() const {
        if (input_dim < 1 || state_dim < 1)
            throw std::invalid_argument("SasParams: dimensions must be >= 1");
        if (W1.cols() != state_dim) throw std::invalid_argument("SasParams: W1 column count != N1");
        if (!W1.allFinite()) throw std::invalid_argument("SasParams: non-finite readout");
        auto check_index = [this](const MultiIndex& idx) {
            if (static_cast<Eigen::Index>(idx.size()) != input_dim)
                throw std::invalid_argument("SasParams: multi-index length != input dimension");
            for (int i : idx)
                if (i < 0) throw std::invalid_argument("SasParams: negative exponent");
        };
        for (const auto& [idx, m] : p_coeffs) {
            check_index(idx);
            if (m.rows() != state_dim || m.cols() != state_dim)
                throw std::invalid_argument("SasParams: p coefficient shape != N1 x N1");
            if (!m.allFinite()) throw std::invalid_argument("SasParams: non-finite p coefficient");
        }
        for (const auto& [idx, v] : q_coeffs) {
            check_index(idx);
            if (v.size() != state_dim)
                throw std::invalid_argument("SasParams: q coefficient size != N1");
            if (!v.allFinite()) throw std::invalid_argument("SasParams: non-finite q coefficient");
        }
    }
};

inline double monomial(const MultiIndex& idx, const Eigen::VectorXd& z) {
    double m = 1.0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        for (int k = 0; k < idx[j]; ++k) m *= z[static_cast<Eigen::Index>(j)];
    }
    return m;
}

inline Eigen::MatrixXd sas_p(const SasParams& p, const Eigen::VectorXd& z) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(p.state_dim, p.state_dim);
    for (const auto& [idx, m] : p.p_coeffs) acc += monomial(idx, z) * m;
    return acc;
}

inline Eigen::VectorXd sas_q(const SasParams& p, const Eigen::VectorXd& z) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(p.state_dim);
    for (const auto& [idx, v] : p.q_coeffs) acc += monomial(idx, z) * v;
    return acc;
}

/// One SAS update; inputs must lie in the open unit ball I_n.
inline Eigen::VectorXd sas_step(const SasParams& p, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& z) {
    if (x.size() != p.state_dim || z.size() != p.input_dim)
        throw std::invalid_argument("sas_step: dimension mismatch");
    if (z.norm() >= 1.0) throw std::invalid_argument("sas_step: input outside the open unit ball");
    return sas_p(p, z) * x + sas_q(p, z);
}

struct SasCertConfig {
    long samples = 2000;  // sampled cross-check draws of z in I_n
    std::uint64_t seed = 7;
};

/// Outcome of the SAS certification: either a certificate with r = K and the
/// state bound K L + K < L, or a diagnosis naming the first failed condition.
struct SasCertification {
    std::optional<ContractionCertificate> cert;
    double K = 0.0;
    double L = 0.0;
    double p_coeff_bound = 0.0;  // sum of ||A_i||_2; certified sup of sigma_max(p(z)) on I_n
    double q_coeff_bound = 0.0;
    double p_sampled_max = 0.0;  // sampled lower bound, must not exceed the certified one
    double q_sampled_max = 0.0;
    double state_bound = 0.0;  // K L + K
    std::string failure;       // empty on success
};

inline void to_json(nlohmann::json& j, const SasCertification& c) {
    j = nlohmann::json{{"certified", c.cert.has_value()},
                       {"r", c.cert ? c.cert->r : 0.0},
                       {"K", c.K},
                       {"L", c.L},
                       {"p_coeff_bound", c.p_coeff_bound},
                       {"q_coeff_bound", c.q_coeff_bound},
                       {"p_sampled_max", c.p_sampled_max},
                       {"q_sampled_max", c.q_sampled_max},
                       {"state_bound", c.state_bound},
                       {"failure", c.failure}};
}

/// Certifies max_{z in I_n} sigma_max(p(z)) < K via the triangle-inequality
/// coefficient bound (each monomial has magnitude at most 1 on I_n), checks
/// the same for q and the condition 0 < K < L/(L+1), and cross-checks the
/// coefficient bounds against sampled lower bounds. Strictness carries a
/// 1e-12 margin.
inline SasCertification sas_certificate(const SasParams& p, double K, double L,
                                        SasCertConfig cfg = {}) {
    p.validate();
    constexpr double margin = 1e-12;
    SasCertification out;
    out.K = K;
    out.L = L;
    for (const auto& [idx, m] : p.p_coeffs) out.p_coeff_bound += spectral_norm(m);
    for (const auto& [idx, v] : p.q_coeffs) out.q_coeff_bound += v.norm();

    Rng rng(substream_seed(cfg.seed, "sas_certificate"));
    for (long i = 0; i < cfg.samples; ++i) {
        Eigen::VectorXd z = rng.ball(p.input_dim, 1.0 - 1e-9);
        out.p_sampled_max = std::max(out.p_sampled_max, spectral_norm(sas_p(p, z)));
        out.q_sampled_max = std::max(out.q_sampled_max, sas_q(p, z).norm());
    }

    if (!(K > 0.0) || !(L > 0.0)) {
        out.failure = "K and L must be positive";
        return out;
    }
    if (!(K < L / (L + 1.0) - margin)) {
        out.failure = "condition 0 < K < L/(L+1) violated";
        return out;
    }
    if (!(out.p_coeff_bound < K - margin)) {
        out.failure = "max over I_n of sigma_max(p(z)) not certified below K";
        return out;
    }
    if (!(out.q_coeff_bound < K - margin)) {
        out.failure = "max over I_n of sigma_max(q(z)) not certified below K";
        return out;
    }
    if (out.p_sampled_max > out.p_coeff_bound + margin ||
        out.q_sampled_max > out.q_coeff_bound + margin) {
        out.failure = "sampled maximum exceeds the certified coefficient bound";
        return out;
    }
    out.state_bound = K * L + K;
    out.cert = ContractionCertificate{K, ContractionCertificate::Method::analytic,
                                      "SAS coefficient-sum bound, r = K"};
    return out;
}

/// SAS as a generic reservoir system on the L-ball with inputs just inside
/// the open unit ball.
inline ReservoirSystem sas_system(const SasParams& p, double L, std::string label = "sas") {
    p.validate();
    SasParams params = p;
    return ReservoirSystem(
        [params](const Eigen::VectorXd& x, const Eigen::VectorXd& z) -> Eigen::VectorXd {
            return sas_p(params, z) * x + sas_q(params, z);
        },
        [params](const Eigen::VectorXd& x) -> Eigen::VectorXd { return params.W1 * x; },
        p.state_dim, p.input_dim, p.output_dim(), L, 1.0 - 1e-9, std::move(label));
}

/// All multi-indices over n variables with total degree <= deg.
inline std::vector<MultiIndex> multi_indices_up_to(Eigen::Index n, int deg) {
    std::vector<MultiIndex> out;
    MultiIndex current(static_cast<std::size_t>(n), 0);
    std::function<void(Eigen::Index, int)> rec = [&](Eigen::Index pos, int remaining) {
        if (pos == n) {
            out.push_back(current);
            return;
        }
        for (int i = 0; i <= remaining; ++i) {
            current[static_cast<std::size_t>(pos)] = i;
            rec(pos + 1, remaining - i);
        }
        current[static_cast<std::size_t>(pos)] = 0;
    };
    rec(0, deg);
    return out;
}

/// Random SAS with the coefficient sums of p and q rescaled to the given
/// targets, so that certification at any K above them succeeds.
inline SasParams random_sas(Eigen::Index N1, Eigen::Index n, Eigen::Index d, int degree,
                            double p_bound_target, double q_bound_target, std::uint64_t seed) {
    Rng rng(substream_seed(seed, "random_sas"));
    SasParams p;
    p.input_dim = n;
    p.state_dim = N1;
    auto indices = multi_indices_up_to(n, degree);
    double p_sum = 0.0, q_sum = 0.0;
    for (const auto& idx : indices) {
        Eigen::MatrixXd A = rng.uniform_matrix(N1, N1, -1.0, 1.0);
        Eigen::VectorXd B = rng.uniform_vector(N1, -1.0, 1.0);
        p_sum += spectral_norm(A);
        q_sum += B.norm();
        p.p_coeffs[idx] = std::move(A);
        p.q_coeffs[idx] = std::move(B);
    }
    if (p_sum > 0.0)
        for (auto& [idx, m] : p.p_coeffs) m *= p_bound_target / p_sum;
    if (q_sum > 0.0)
        for (auto& [idx, v] : p.q_coeffs) v *= q_bound_target / q_sum;
    p.W1 = rng.uniform_matrix(d, N1, -1.0, 1.0);
    return p;
}

// ---------------------------------------------------------------------------
// Model files: JSON with row-major matrices at full float precision.
// ---------------------------------------------------------------------------

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
    return arr;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& arr, Eigen::Index rows,
                                        Eigen::Index cols, const std::string& name) {
    if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != rows * cols)
        throw std::runtime_error("model file: " + name + " has wrong element count");
    Eigen::MatrixXd m(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = arr[static_cast<std::size_t>(k++)].get<double>();
    return m;
}

inline nlohmann::json esn_to_json(const EsnParams& p) {
    p.validate();
    if (p.activation.kind() == Activation::Kind::custom)
        throw std::invalid_argument("model file: custom activations are not serializable");
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "esn";
    j["dims"] = {{"N", p.state_dim()}, {"n", p.input_dim()}, {"d", p.output_dim()}};
    j["activation"] = p.activation.name();
    j["A"] = matrix_to_json(p.A);
    j["C"] = matrix_to_json(p.C);
    j["zeta"] = matrix_to_json(p.zeta);
    j["W"] = matrix_to_json(p.W);
    return j;
}

inline EsnParams esn_from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<int>() != 1)
        throw std::runtime_error("model file: unsupported schema version");
    const auto& dims = j.at("dims");
    Eigen::Index N = dims.at("N").get<Eigen::Index>();
    Eigen::Index n = dims.at("n").get<Eigen::Index>();
    Eigen::Index d = dims.at("d").get<Eigen::Index>();
    EsnParams p;
    p.activation = Activation::from_name(j.at("activation").get<std::string>());
    p.A = matrix_from_json(j.at("A"), N, N, "A");
    p.C = matrix_from_json(j.at("C"), N, n, "C");
    p.zeta = matrix_from_json(j.at("zeta"), N, 1, "zeta");
    p.W = matrix_from_json(j.at("W"), d, N, "W");
    p.validate();
    return p;
}

inline nlohmann::json sas_to_json(const SasParams& p) {
    p.validate();
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "sas";
    j["dims"] = {{"N1", p.state_dim}, {"n", p.input_dim}, {"d", p.output_dim()}};
    nlohmann::json pj = nlohmann::json::array();
    for (const auto& [idx, m] : p.p_coeffs)
        pj.push_back({{"index", idx}, {"coeff", matrix_to_json(m)}});
    nlohmann::json qj = nlohmann::json::array();
    for (const auto& [idx, v] : p.q_coeffs)
        qj.push_back({{"index", idx}, {"coeff", matrix_to_json(v)}});
    j["p"] = pj;
    j["q"] = qj;
    j["W1"] = matrix_to_json(p.W1);
    return j;
}

inline SasParams sas_from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<int>() != 1)
        throw std::runtime_error("model file: unsupported schema version");
    const auto& dims = j.at("dims");
    SasParams p;
    p.state_dim = dims.at("N1").get<Eigen::Index>();
    p.input_dim = dims.at("n").get<Eigen::Index>();
    Eigen::Index d = dims.at("d").get<Eigen::Index>();
    for (const auto& term : j.at("p")) {
        MultiIndex idx = term.at("index").get<MultiIndex>();
        p.p_coeffs[idx] = matrix_from_json(term.at("coeff"), p.state_dim, p.state_dim, "p coeff");
    }
    for (const auto& term : j.at("q")) {
        MultiIndex idx = term.at("index").get<MultiIndex>();
        p.q_coeffs[idx] = matrix_from_json(term.at("coeff"), p.state_dim, 1, "q coeff");
    }
    p.W1 = matrix_from_json(j.at("W1"), d, p.state_dim, "W1");
    p.validate();
    return p;
}

struct LoadedModel {
    std::string kind;
    std::optional<EsnParams> esn;
    std::optional<SasParams> sas;
};

inline void save_model(const std::filesystem::path& path, const EsnParams& p) {
    write_file_atomic(path, esn_to_json(p).dump(2) + "\n");
}

inline void save_model(const std::filesystem::path& path, const SasParams& p) {
    write_file_atomic(path, sas_to_json(p).dump(2) + "\n");
}

inline LoadedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);  // parse errors carry the byte position
    LoadedModel m;
    m.kind = j.at("kind").get<std::string>();
    if (m.kind == "esn") {
        m.esn = esn_from_json(j);
    } else if (m.kind == "sas") {
        m.sas = sas_from_json(j);
    } else {
        throw std::runtime_error("model file: unknown kind '" + m.kind + "'");
    }
    return m;
}

}  // namespace rcuniv
