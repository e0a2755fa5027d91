#pragma once

#include <memory>

#include "mfg/model.hpp"
#include "mfg/quadrature.hpp"

namespace mfg {

struct LimitPoint {
    double s = 0.0;
    double x0 = 0.0;
    double y = 0.0;
    double z0 = 0.0;
};

struct HbarU {
    double value = 0.0;
    double grad_u = 0.0;
};

double vbar(double x0, double x1, double y, double z0, double u, const ModelParams& model);
double vbar(double x0, double x1, double y, double z0, double u, const Coefficients& c);

// Limit Hamiltonian. X^1_s is independent of W^0 in the weak formulation, so the
// conditional expectation over it is a Gaussian expectation with mean xbar and
// variance s - t, evaluated by Gauss-Hermite quadrature.
class LimitHamiltonian {
public:
    explicit LimitHamiltonian(const Scenario& s);
    LimitHamiltonian(const Scenario& s, std::shared_ptr<const Coefficients> c);

    HbarU eval_u(const LimitPoint& pt, double u) const;
    double ubar(const LimitPoint& pt, double tol = 1e-12, int max_iter = 100) const;
    double reduced(const LimitPoint& pt) const;
    // Reduced value and maximizer together.
    double reduced(const LimitPoint& pt, double& u_out) const;
    // E[psi(vbar(x0, X^1_s, y, z0, u))] for bounded psi.
    template <class Psi>
    double expect_of_vbar(const LimitPoint& pt, double u, Psi psi) const;
    // E[Phi(x0, X^1_T)].
    double terminal(double x0) const;

    const Coefficients& coefficients() const { return *c_; }
    const GaussHermite& rule() const { return *gh_; }
    double sd_at(double s) const;
    double xbar() const { return xbar_; }

private:
    std::shared_ptr<const Coefficients> c_;
    const QuadraticTanhFamily* fam_;
    std::shared_ptr<const GaussHermite> gh_;
    double t_start_, t_end_, xbar_;
};

template <class Psi>
double LimitHamiltonian::expect_of_vbar(const LimitPoint& pt, double u, Psi psi) const {
    const double sd = sd_at(pt.s);
    if (sd == 0.0) return psi(vbar(pt.x0, xbar_, pt.y, pt.z0, u, *c_));
    double acc = 0.0;
    for (int q = 0; q < gh_->order(); ++q) {
        const double x1 = xbar_ + sd * gh_->nodes[static_cast<std::size_t>(q)];
        acc += gh_->weights[static_cast<std::size_t>(q)] * psi(vbar(pt.x0, x1, pt.y, pt.z0, u, *c_));
    }
    return acc;
}

HbarU eval_hbar_u(const LimitPoint& pt, double u, const Scenario& s);
double ubar(const LimitPoint& pt, const Scenario& s, double tol = 1e-12);
double eval_hbar_reduced(const LimitPoint& pt, const Scenario& s);

}  // namespace mfg
