#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace rcuniv {

/// Derives a per-stage seed from a root seed and a stream name, so that
/// changing one stage's configuration does not disturb the draws of another.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ULL;
    }
    // splitmix64 finisher over (root, name-hash)
    std::uint64_t x = root + 0x9e3779b97f4a7c15ULL * (h | 1ULL);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

/// Deterministic random source. All distributions are generated from raw
/// mt19937_64 output with fixed arithmetic, so identical seeds give identical
/// streams independently of the standard library's distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, bound). bound must be positive.
    std::uint64_t integer(std::uint64_t bound) {
        return gen_() % bound;
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    Eigen::VectorXd normal_vector(Eigen::Index dim) {
        Eigen::VectorXd v(dim);
        for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal();
        return v;
    }

    /// Uniform draw on the sphere of the given radius.
    Eigen::VectorXd sphere(Eigen::Index dim, double radius) {
        Eigen::VectorXd g = normal_vector(dim);
        double n = g.norm();
        while (n == 0.0) {
            g = normal_vector(dim);
            n = g.norm();
        }
        return (radius / n) * g;
    }

    /// Uniform draw on the closed Euclidean ball of the given radius.
    Eigen::VectorXd ball(Eigen::Index dim, double radius) {
        double u = uniform();
        double scale = std::pow(u, 1.0 / static_cast<double>(dim));
        return sphere(dim, radius * scale);
    }

    Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform(lo, hi);
        return m;
    }

    Eigen::VectorXd uniform_vector(Eigen::Index dim, double lo, double hi) {
        Eigen::VectorXd v(dim);
        for (Eigen::Index i = 0; i < dim; ++i) v[i] = uniform(lo, hi);
        return v;
    }

  private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace rcuniv
