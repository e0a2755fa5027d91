#include "mfg/limit.hpp"

#include <cmath>

#include "mfg/error.hpp"
#include "mfg/hamiltonian.hpp"

namespace mfg {

double vbar(double x0, double x1, double y, double z0, double u, const ModelParams& model) {
    (void)x0;
    (void)x1;
    (void)y;
    (void)z0;
    return -(model.c_lin + model.beta * u) / model.gamma;
}

double vbar(double x0, double x1, double y, double z0, double u, const Coefficients& c) {
    if (c.quadratic_in_controls()) return vbar(x0, x1, y, z0, u, static_cast<const QuadraticTanhFamily&>(c).params());
    int it = 0;
    return solve_increasing_root([&](double v) { return c.dv_f(x0, x1, y, z0, 0.0, u, v); },
                                 [&](double v) { return c.dvv_f(x0, x1, y, z0, 0.0, u, v); }, 0.0, 1e-12, 200, it);
}

LimitHamiltonian::LimitHamiltonian(const Scenario& s)
    : LimitHamiltonian(s, std::make_shared<QuadraticTanhFamily>(s.model)) {}

LimitHamiltonian::LimitHamiltonian(const Scenario& s, std::shared_ptr<const Coefficients> c)
    : c_(std::move(c)),
      fam_(dynamic_cast<const QuadraticTanhFamily*>(c_.get())),
      gh_(gauss_hermite(s.quad_order)),
      t_start_(s.t_start),
      t_end_(s.t_end),
      xbar_(s.xbar_init) {
    if (s.quad_order < 2) fail(ErrorKind::argument, "LimitHamiltonian: quad_order must be >= 2");
}

double LimitHamiltonian::sd_at(double s) const {
    if (s < t_start_) fail(ErrorKind::argument, "limit Hamiltonian: s < t_start");
    return std::sqrt(s - t_start_);
}

HbarU LimitHamiltonian::eval_u(const LimitPoint& pt, double u) const {
    const double sd = sd_at(pt.s);
    const Coefficients& c = *c_;
    auto term = [&](double x1, HbarU& acc, double w) {
        const double v = vbar(pt.x0, x1, pt.y, pt.z0, u, c);
        const double b0z = c.b0(pt.x0, x1, pt.z0) * pt.z0;
        acc.value += w * (c.f(pt.x0, x1, pt.y, pt.z0, 0.0, u, v) + b0z * u);
        acc.grad_u += w * (c.du_f(pt.x0, x1, pt.y, pt.z0, 0.0, u, v) + b0z);
    };
    HbarU out;
    if (sd == 0.0) {
        term(xbar_, out, 1.0);
        return out;
    }
    for (int q = 0; q < gh_->order(); ++q) {
        term(xbar_ + sd * gh_->nodes[static_cast<std::size_t>(q)], out, gh_->weights[static_cast<std::size_t>(q)]);
    }
    return out;
}

double LimitHamiltonian::ubar(const LimitPoint& pt, double tol, int max_iter) const {
    if (!(tol > 0.0)) fail(ErrorKind::argument, "ubar: tol must be > 0");
    double curvature = 0.0;
    if (fam_) {
        const ModelParams& m = fam_->params();
        curvature = -(m.alpha + m.beta * m.beta / m.gamma);
    }
    double u = 0.0;
    double g = eval_u(pt, u).grad_u;
    int it = 0;
    while (std::fabs(g) > tol && it < max_iter) {
        double d = curvature;
        if (d == 0.0) {
            const double h = 1e-5 * (1.0 + std::fabs(u));
            d = (eval_u(pt, u + h).grad_u - eval_u(pt, u - h).grad_u) / (2.0 * h);
        }
        if (!(d < 0.0)) fail(ErrorKind::numerical, "ubar: non-negative curvature");
        const double un = u - g / d;
        const double gn = eval_u(pt, un).grad_u;
        ++it;
        if (un == u || (fam_ && std::fabs(gn) >= std::fabs(g))) {
            u = un;
            g = gn;
            break;
        }
        u = un;
        g = gn;
    }
    // The linear case converges in one step; the remainder is rounding.
    if (std::fabs(g) > std::max(tol, 1e-12 * (1.0 + std::fabs(u)))) {
        fail(ErrorKind::numerical, "ubar: Newton did not converge, residual " + std::to_string(std::fabs(g)));
    }
    return u;
}

double LimitHamiltonian::reduced(const LimitPoint& pt) const {
    double u = 0.0;
    return reduced(pt, u);
}

double LimitHamiltonian::reduced(const LimitPoint& pt, double& u_out) const {
    u_out = ubar(pt);
    return eval_u(pt, u_out).value;
}

double LimitHamiltonian::terminal(double x0) const {
    const double sd = std::sqrt(t_end_ - t_start_);
    double acc = 0.0;
    for (int q = 0; q < gh_->order(); ++q) {
        acc += gh_->weights[static_cast<std::size_t>(q)] * c_->phi(x0, xbar_ + sd * gh_->nodes[static_cast<std::size_t>(q)]);
    }
    return acc;
}

HbarU eval_hbar_u(const LimitPoint& pt, double u, const Scenario& s) { return LimitHamiltonian(s).eval_u(pt, u); }

double ubar(const LimitPoint& pt, const Scenario& s, double tol) { return LimitHamiltonian(s).ubar(pt, tol); }

double eval_hbar_reduced(const LimitPoint& pt, const Scenario& s) { return LimitHamiltonian(s).reduced(pt); }

}  // namespace mfg
