#include "mfg/hamiltonian.hpp"

#include <algorithm>
#include <cmath>

#include "mfg/error.hpp"

namespace mfg {

void HamiltonianPoint::check() const {
    if (n_minor < 1) fail(ErrorKind::argument, "HamiltonianPoint: n_minor must be >= 1");
    if (static_cast<int>(x.size()) != n_minor + 1 || static_cast<int>(z.size()) != n_minor + 1) {
        fail(ErrorKind::argument, "HamiltonianPoint: x and z must have N + 1 entries");
    }
    auto finite = [](double a) { return std::isfinite(a); };
    if (!std::all_of(x.begin(), x.end(), finite) || !std::all_of(z.begin(), z.end(), finite) || !std::isfinite(y) ||
        !std::isfinite(eps)) {
        fail(ErrorKind::numerical, "HamiltonianPoint: non-finite input");
    }
}

double minor_aggregate(const HamiltonianPoint& p, int ell, const Coefficients& c) {
    const int N = p.n_minor;
    double acc = 0.0;
    for (int i = 1; i <= N; ++i) acc += c.b1(p.x[0], p.x[static_cast<std::size_t>(ell)], p.z[static_cast<std::size_t>(i)]) * p.z[static_cast<std::size_t>(i)];
    return p.eps * acc;
}

double eval_hamiltonian_n(const HamiltonianPoint& p, double u, const std::vector<double>& v, const ModelParams& model) {
    return eval_hamiltonian_n(p, u, v, QuadraticTanhFamily(model));
}

double eval_hamiltonian_n(const HamiltonianPoint& p, double u, const std::vector<double>& v, const Coefficients& c) {
    p.check();
    const int N = p.n_minor;
    if (static_cast<int>(v.size()) != N) fail(ErrorKind::argument, "eval_hamiltonian_n: v must have N entries");
    const double x0 = p.x[0], z0 = p.z[0];
    double sf = 0.0, sb0 = 0.0;
    for (int l = 1; l <= N; ++l) {
        const std::size_t lu = static_cast<std::size_t>(l);
        sf += c.f(x0, p.x[lu], p.y, z0, p.z[lu], u, v[lu - 1]);
        sb0 += c.b0(x0, p.x[lu], z0);
    }
    double coupling = 0.0;
    if (c.b1_separable()) {
        double sz = 0.0, sg = 0.0;
        for (int i = 1; i <= N; ++i) sz += c.b1_z(p.z[static_cast<std::size_t>(i)]) * p.z[static_cast<std::size_t>(i)];
        for (int l = 1; l <= N; ++l) sg += c.b1_x(x0, p.x[static_cast<std::size_t>(l)]) * v[static_cast<std::size_t>(l) - 1];
        coupling = sz * sg / N;
    } else {
        for (int i = 1; i <= N; ++i) {
            double inner = 0.0;
            for (int l = 1; l <= N; ++l) {
                inner += c.b1(x0, p.x[static_cast<std::size_t>(l)], p.z[static_cast<std::size_t>(i)]) * v[static_cast<std::size_t>(l) - 1];
            }
            coupling += inner / N * p.z[static_cast<std::size_t>(i)];
        }
    }
    return sf / N + (sb0 / N * u) * z0 + p.eps * coupling;
}

double du_hamiltonian_n(const HamiltonianPoint& p, double u, const std::vector<double>& v, const Coefficients& c) {
    const int N = p.n_minor;
    const double x0 = p.x[0], z0 = p.z[0];
    double s = 0.0, sb0 = 0.0;
    for (int l = 1; l <= N; ++l) {
        const std::size_t lu = static_cast<std::size_t>(l);
        s += c.du_f(x0, p.x[lu], p.y, z0, p.z[lu], u, v[lu - 1]);
        sb0 += c.b0(x0, p.x[lu], z0);
    }
    return s / N + sb0 / N * z0;
}

double solve_increasing_root(const std::function<double(double)>& g, const std::function<double(double)>& dg,
                             double start, double tol, int max_iter, int& iters) {
    iters = 0;
    double x = start;
    double gx = g(x);
    if (!std::isfinite(gx)) fail(ErrorKind::numerical, "root solver: non-finite function value");
    if (std::fabs(gx) <= tol) return x;
    // Bracket [lo, hi] with g(lo) < 0 < g(hi).
    double lo = x, hi = x;
    double step = 1.0;
    if (gx < 0.0) {
        hi = x + step;
        while (g(hi) < 0.0) {
            if (++iters > max_iter) fail(ErrorKind::numerical, "root solver: bracketing failed");
            lo = hi;
            step *= 2.0;
            hi = lo + step;
        }
    } else {
        lo = x - step;
        while (g(lo) > 0.0) {
            if (++iters > max_iter) fail(ErrorKind::numerical, "root solver: bracketing failed");
            hi = lo;
            step *= 2.0;
            lo = hi - step;
        }
    }
    x = 0.5 * (lo + hi);
    for (; iters < max_iter; ++iters) {
        gx = g(x);
        if (std::fabs(gx) <= tol) return x;
        if (gx < 0.0)
            lo = x;
        else
            hi = x;
        const double d = dg(x);
        double xn = (d > 0.0 && std::isfinite(d)) ? x - gx / d : 0.5 * (lo + hi);
        if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
        if (xn == x) return x;
        x = xn;
    }
    gx = g(x);
    if (std::fabs(gx) <= tol) return x;
    fail(ErrorKind::numerical, "root solver: max_iter exceeded, residual " + std::to_string(std::fabs(gx)));
}

double inner_min_v(const HamiltonianPoint& p, int ell, double u, const ModelParams& model, double tol) {
    return inner_min_v(p, ell, u, QuadraticTanhFamily(model), tol);
}

namespace {

double inner_solve(const Coefficients& c, double x0, double xl, double y, double z0, double zl, double u, double agg,
                   double tol) {
    if (c.quadratic_in_controls()) {
        const auto& m = static_cast<const QuadraticTanhFamily&>(c).params();
        return -(m.c_lin + m.beta * u + agg) / m.gamma;
    }
    int it = 0;
    return solve_increasing_root([&](double v) { return c.dv_f(x0, xl, y, z0, zl, u, v) + agg; },
                                 [&](double v) { return c.dvv_f(x0, xl, y, z0, zl, u, v); }, 0.0, tol, 200, it);
}

}  // namespace

double inner_min_v(const HamiltonianPoint& p, int ell, double u, const Coefficients& c, double tol) {
    p.check();
    if (ell < 1 || ell > p.n_minor) fail(ErrorKind::argument, "inner_min_v: minor index out of range");
    if (!(tol > 0.0)) fail(ErrorKind::argument, "inner_min_v: tol must be > 0");
    if (!std::isfinite(u)) fail(ErrorKind::numerical, "inner_min_v: non-finite u");
    const std::size_t lu = static_cast<std::size_t>(ell);
    const double agg = minor_aggregate(p, ell, c);
    return inner_solve(c, p.x[0], p.x[lu], p.y, p.z[0], p.z[lu], u, agg, tol);
}

SaddlePoint saddle_point_n(const HamiltonianPoint& p, const ModelParams& model, double tol, int max_iter) {
    return saddle_point_n(p, QuadraticTanhFamily(model), tol, max_iter);
}

SaddlePoint saddle_point_n(const HamiltonianPoint& p, const Coefficients& c, double tol, int max_iter) {
    p.check();
    if (!(c.mu_mod() < c.lambda_mod())) fail(ErrorKind::config, "saddle_point_n: mu >= lambda");
    const int N = p.n_minor;
    const double x0 = p.x[0], z0 = p.z[0];
    std::vector<double> agg(static_cast<std::size_t>(N));
    double dbar = 0.0;
    for (int l = 1; l <= N; ++l) {
        agg[static_cast<std::size_t>(l) - 1] = minor_aggregate(p, l, c);
        dbar += c.b0(x0, p.x[static_cast<std::size_t>(l)], z0) * z0;
    }
    dbar /= N;
    const double inner_tol = std::min(tol, 1e-10);
    std::vector<double> v(static_cast<std::size_t>(N));
    auto best_response = [&](double u) {
        for (int l = 1; l <= N; ++l) {
            const std::size_t lu = static_cast<std::size_t>(l);
            v[lu - 1] = inner_solve(c, x0, p.x[lu], p.y, z0, p.z[lu], u, agg[lu - 1], inner_tol);
        }
    };
    // Envelope derivative of u -> H_N(xi, u, v~(xi, u)).
    auto envelope = [&](double u) {
        best_response(u);
        double s = 0.0;
        for (int l = 1; l <= N; ++l) {
            const std::size_t lu = static_cast<std::size_t>(l);
            s += c.du_f(x0, p.x[lu], p.y, z0, p.z[lu], u, v[lu - 1]);
        }
        return s / N + dbar;
    };
    double curvature = 0.0;
    if (c.quadratic_in_controls()) {
        const auto& m = static_cast<const QuadraticTanhFamily&>(c).params();
        curvature = -(m.alpha + m.beta * m.beta / m.gamma);
    }
    auto slope = [&](double u) {
        if (curvature != 0.0) return curvature;
        const double h = 1e-5 * (1.0 + std::fabs(u));
        return (envelope(u + h) - envelope(u - h)) / (2.0 * h);
    };

    SaddlePoint sp;
    double u = 0.0;
    double r = envelope(u);
    int it = 0;
    while (std::fabs(r) > tol && it < max_iter) {
        const double d = slope(u);
        if (!(d < 0.0)) break;
        u -= r / d;
        r = envelope(u);
        ++it;
    }
    if (std::fabs(r) > tol) {
        // Fall back to the bracketed solver on the decreasing envelope derivative.
        int extra = 0;
        u = solve_increasing_root([&](double w) { return -envelope(w); }, [&](double w) { return -slope(w); }, u, tol,
                                  max_iter, extra);
        it += extra;
        r = envelope(u);
    }
    best_response(u);
    sp.u = u;
    sp.v = v;
    sp.iterations = it;
    sp.residual_u = std::fabs(r);
    double rv = 0.0;
    for (int l = 1; l <= N; ++l) {
        const std::size_t lu = static_cast<std::size_t>(l);
        rv = std::max(rv, std::fabs(c.dv_f(x0, p.x[lu], p.y, z0, p.z[lu], u, v[lu - 1]) + agg[lu - 1]));
    }
    sp.residual_v = rv;
    if (sp.residual_u > tol) {
        fail(ErrorKind::numerical, "saddle_point_n: max_iter exceeded, residual_u = " + std::to_string(sp.residual_u));
    }
    return sp;
}

double eval_hbar_n(const HamiltonianPoint& p, const ModelParams& model) { return eval_hbar_n(p, QuadraticTanhFamily(model)); }

double eval_hbar_n(const HamiltonianPoint& p, const Coefficients& c) {
    const SaddlePoint sp = saddle_point_n(p, c);
    return eval_hamiltonian_n(p, sp.u, sp.v, c);
}

SaddleKernel::SaddleKernel(const Coefficients& c, int n_minor, double eps)
    : c_(c), n_(n_minor), eps_(eps), fam_(dynamic_cast<const QuadraticTanhFamily*>(&c)) {
    if (n_minor < 1) fail(ErrorKind::argument, "SaddleKernel: n_minor must be >= 1");
    agg_.resize(static_cast<std::size_t>(n_minor));
    scratch_.n_minor = n_minor;
    scratch_.eps = eps;
    scratch_.x.resize(static_cast<std::size_t>(n_minor) + 1);
    scratch_.z.resize(static_cast<std::size_t>(n_minor) + 1);
}

double SaddleKernel::solve(const double* x, double y, const double* z, double* v_out, double* value) {
    const int N = n_;
    if (!fam_) {
        std::copy(x, x + N + 1, scratch_.x.begin());
        std::copy(z, z + N + 1, scratch_.z.begin());
        scratch_.y = y;
        const SaddlePoint sp = saddle_point_n(scratch_, c_);
        std::copy(sp.v.begin(), sp.v.end(), v_out);
        if (value) *value = eval_hamiltonian_n(scratch_, sp.u, sp.v, c_);
        return sp.u;
    }
    const ModelParams& m = fam_->params();
    const double x0 = x[0], z0 = z[0];
    double sz = 0.0;
    for (int i = 1; i <= N; ++i) sz += z[i] / (1.0 + std::fabs(z[i]));
    double st = 0.0, sagg = 0.0;
    for (int l = 1; l <= N; ++l) {
        const double th = std::tanh(x0 + x[l]);
        st += th;
        agg_[static_cast<std::size_t>(l) - 1] = eps_ * m.kappa_b1 * th * sz;
        sagg += agg_[static_cast<std::size_t>(l) - 1];
    }
    const double dbar = m.kappa_b0 * (st / N) * z0 / (1.0 + std::fabs(z0));
    // One Newton step on the linear envelope derivative from u = 0.
    const double r0 = m.a_lin - m.beta * (m.c_lin + sagg / N) / m.gamma + dbar;
    const double u = r0 / (m.alpha + m.beta * m.beta / m.gamma);
    for (int l = 0; l < N; ++l) v_out[l] = -(m.c_lin + m.beta * u + agg_[static_cast<std::size_t>(l)]) / m.gamma;
    if (value) {
        double sf = 0.0, sav = 0.0;
        for (int l = 1; l <= N; ++l) {
            const double vl = v_out[l - 1];
            sf += m.kappa_g * std::tanh(x0 + x[l] + y + z0 + z[l]) + m.c_lin * vl + 0.5 * m.gamma * vl * vl + m.beta * u * vl;
            sav += agg_[static_cast<std::size_t>(l) - 1] * vl;
        }
        *value = sf / N + m.a_lin * u - 0.5 * m.alpha * u * u + dbar * u + sav / N;
    }
    return u;
}

double SaddleKernel::value(const double* x, double y, const double* z, double u, const double* v) const {
    const int N = n_;
    if (!fam_) {
        HamiltonianPoint p;
        p.n_minor = N;
        p.eps = eps_;
        p.x.assign(x, x + N + 1);
        p.z.assign(z, z + N + 1);
        p.y = y;
        return eval_hamiltonian_n(p, u, std::vector<double>(v, v + N), c_);
    }
    const ModelParams& m = fam_->params();
    const double x0 = x[0], z0 = z[0];
    double sz = 0.0;
    for (int i = 1; i <= N; ++i) sz += z[i] / (1.0 + std::fabs(z[i]));
    double sf = 0.0, st = 0.0, sgv = 0.0;
    for (int l = 1; l <= N; ++l) {
        const double th = std::tanh(x0 + x[l]);
        const double vl = v[l - 1];
        st += th;
        sgv += th * vl;
        sf += m.kappa_g * std::tanh(x0 + x[l] + y + z0 + z[l]) + m.c_lin * vl + 0.5 * m.gamma * vl * vl + m.beta * u * vl;
    }
    const double dbar = m.kappa_b0 * (st / N) * z0 / (1.0 + std::fabs(z0));
    return sf / N + m.a_lin * u - 0.5 * m.alpha * u * u + dbar * u + eps_ * m.kappa_b1 * sz * sgv / N;
}

}  // namespace mfg
