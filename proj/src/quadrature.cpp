#include "mfg/quadrature.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "mfg/error.hpp"

namespace mfg {

namespace {

// Orthonormal Hermite values p_0..p_{n-1} and derivative of p_n at x.
void orthonormal_hermite(int n, double x, double& sum_sq, double& pn, double& dpn) {
    double pm1 = 0.0, p = 1.0;
    double dpm1 = 0.0, dp = 0.0;
    sum_sq = 1.0;
    for (int k = 0; k < n; ++k) {
        const double a = std::sqrt(static_cast<double>(k + 1));
        const double b = std::sqrt(static_cast<double>(k));
        const double pn_ = (x * p - b * pm1) / a;
        const double dpn_ = (p + x * dp - b * dpm1) / a;
        pm1 = p;
        p = pn_;
        dpm1 = dp;
        dp = dpn_;
        if (k + 1 < n) sum_sq += p * p;
    }
    pn = p;
    dpn = dp;
}

GaussHermite build(int n) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        J(k, k - 1) = std::sqrt(static_cast<double>(k));
        J(k - 1, k) = J(k, k - 1);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J, Eigen::EigenvaluesOnly);
    GaussHermite g;
    g.nodes.resize(static_cast<std::size_t>(n));
    g.weights.resize(static_cast<std::size_t>(n));
    for (int q = 0; q < n; ++q) {
        double x = es.eigenvalues()(q);
        double sum_sq = 0.0, pn = 0.0, dpn = 0.0;
        for (int it = 0; it < 3; ++it) {
            orthonormal_hermite(n, x, sum_sq, pn, dpn);
            if (dpn != 0.0) x -= pn / dpn;
        }
        orthonormal_hermite(n, x, sum_sq, pn, dpn);
        g.nodes[static_cast<std::size_t>(q)] = x;
        g.weights[static_cast<std::size_t>(q)] = 1.0 / sum_sq;
    }
    // Exact symmetry and unit mass.
    for (int q = 0; q < n / 2; ++q) {
        const std::size_t a = static_cast<std::size_t>(q), b = static_cast<std::size_t>(n - 1 - q);
        const double x = 0.5 * (g.nodes[b] - g.nodes[a]);
        const double w = 0.5 * (g.weights[a] + g.weights[b]);
        g.nodes[a] = -x;
        g.nodes[b] = x;
        g.weights[a] = w;
        g.weights[b] = w;
    }
    if (n % 2 == 1) g.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
    double total = 0.0;
    for (double w : g.weights) total += w;
    for (double& w : g.weights) w /= total;
    return g;
}

}  // namespace

std::shared_ptr<const GaussHermite> gauss_hermite(int order) {
    if (order < 1 || order > 400) fail(ErrorKind::argument, "gauss_hermite: order must be in [1, 400]");
    static std::mutex mu;
    static std::map<int, std::shared_ptr<const GaussHermite>> cache;
    std::lock_guard<std::mutex> lk(mu);
    auto it = cache.find(order);
    if (it != cache.end()) return it->second;
    auto g = std::make_shared<const GaussHermite>(build(order));
    cache.emplace(order, g);
    return g;
}

}  // namespace mfg
