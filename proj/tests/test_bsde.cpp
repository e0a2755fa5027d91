#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mfg/bsde.hpp"
#include "mfg/error.hpp"
#include "mfg/hamiltonian.hpp"
#include "mfg/quadrature.hpp"

using namespace mfg;

namespace {

Scenario base(int n_steps = 8) {
    Scenario s;
    s.n_steps = n_steps;
    s.mc_outer = 400;
    return s;
}

Scenario full(int n_steps = 8) {
    Scenario s = base(n_steps);
    s.model.a_lin = 0.5;
    s.model.c_lin = 0.2;
    s.model.kappa_g = 0.5;
    s.model.kappa_b0 = 0.5;
    s.model.kappa_b1 = 0.5;
    s.model.kappa_phi = 1.0;
    return s;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double std_error(const std::vector<double>& v) {
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / (v.size() - 1) / v.size());
}

BsdeSolution solve_scalar(int n_steps, int samples, const Driver& f, const std::function<double(const PathBundle&, int)>& terminal,
                          PathBundle& bundle_out) {
    const Scenario s = base(n_steps);
    bundle_out = sample_brownian_bundle(TimeGrid::from(s), 0, samples, RandomStream(1, "scalar"));
    const ParticlePaths x = brownian_states(s, 0, bundle_out);
    const BasisSpec basis = polynomial_basis(x, 2);
    const PathBundle& b = bundle_out;
    return solve_bsde_regression([f] { return f; }, [&](int smp) { return terminal(b, smp); }, b, basis);
}

}  // namespace

TEST_SUITE("bsde") {

TEST_CASE("constant driver and terminal are reproduced exactly") {
    PathBundle b;
    const BsdeSolution sol = solve_scalar(
        8, 200, [](int, int, double, const double*) { return 1.0; }, [](const PathBundle&, int) { return 2.0; }, b);
    for (int smp = 0; smp < 200; ++smp) {
        CHECK(sol.y_at(smp, 0) == doctest::Approx(3.0).epsilon(1e-13));
        for (int i = 0; i < 8; ++i) CHECK(std::fabs(sol.z_at(smp, 0, i)) <= 1e-13);
    }
    CHECK(sol.y_start() == doctest::Approx(3.0).epsilon(1e-13));
}

TEST_CASE("martingale representation of W^0 is exact with a linear basis") {
    PathBundle b;
    const BsdeSolution sol = solve_scalar(
        8, 200, [](int, int, double, const double*) { return 0.0; },
        [](const PathBundle& bb, int smp) {
            double w = 0.0;
            for (int i = 0; i < bb.grid.n_steps; ++i) w += bb.dw(smp, 0, i);
            return w;
        },
        b);
    for (int smp = 0; smp < 200; ++smp) {
        double w = 0.0;
        for (int i = 0; i < 8; ++i) {
            CHECK(sol.y_at(smp, i) == doctest::Approx(w).epsilon(1e-12).scale(1.0));
            CHECK(sol.z_at(smp, 0, i) == doctest::Approx(1.0).epsilon(1e-12));
            w += b.dw(smp, 0, i);
        }
    }
}

TEST_CASE("linear driver converges at first order") {
    auto run = [](int n, double sign) {
        PathBundle b;
        const BsdeSolution sol = solve_scalar(
            n, 50, [sign](int, int, double y, const double*) { return sign * y; }, [](const PathBundle&, int) { return 1.0; },
            b);
        return sol.y_start();
    };
    for (double sign : {-1.0, 1.0}) {
        const double exact = std::exp(sign);
        const double e16 = std::fabs(run(16, sign) - exact);
        const double e32 = std::fabs(run(32, sign) - exact);
        CHECK(e16 < 0.1);
        const double ratio = e16 / e32;
        CHECK(ratio > 1.8);
        CHECK(ratio < 2.2);
    }
}

TEST_CASE("comparison principle for a shifted driver") {
    const Scenario s = base(16);
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), 0, 500, RandomStream(13, "cmp"));
    const ParticlePaths x = brownian_states(s, 0, b);
    const BasisSpec basis = polynomial_basis(x, 3);
    auto f1 = [&x](int smp, int i, double y, const double* z) { return -0.5 * y + std::tanh(z[0] + x.at(smp, 0, i)); };
    auto f2 = [f1](int smp, int i, double y, const double* z) { return f1(smp, i, y, z) + 0.1; };
    auto terminal = [&x](int smp) { return std::sin(x.at(smp, 0, 16)); };
    const BsdeSolution y1 = solve_bsde_regression([f1] { return Driver(f1); }, terminal, b, basis);
    const BsdeSolution y2 = solve_bsde_regression([f2] { return Driver(f2); }, terminal, b, basis);
    for (int smp = 0; smp < 500; ++smp) {
        for (int i = 0; i <= 16; ++i) CHECK(y2.y_at(smp, i) >= y1.y_at(smp, i) - 1e-12);
    }
    CHECK(y2.y_start() > y1.y_start());
}

TEST_CASE("zero driver game BSDE is a martingale") {
    Scenario s = base(8);
    s.model.kappa_phi = 1.0;
    s.xbar_init = 0.2;
    const int N = 4;
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), N, 2000, RandomStream(2, "mart"));
    const BsdeSolution sol = solve_controlled_bsde(s, N, b, ControlPaths::zeros(2000, N, 8));
    std::vector<double> term(2000);
    for (int smp = 0; smp < 2000; ++smp) {
        double x0 = s.x0_init;
        std::vector<double> xl(N, s.xbar_init);
        for (int i = 0; i < 8; ++i) {
            x0 += b.dw(smp, 0, i);
            for (int l = 0; l < N; ++l) xl[l] += b.dw(smp, l + 1, i);
        }
        double acc = 0.0;
        for (double v : xl) acc += std::tanh(x0 + v);
        term[smp] = acc / N;
    }
    CHECK(std::fabs(sol.y_start() - mean(term)) <= 3.0 * std_error(term));
}

TEST_CASE("one backward step by hand") {
    Scenario s = full(1);
    s.model.kappa_g = 0.0;
    s.minor_inits = std::vector<double>{-0.3, 0.4};
    const int N = 2, S = 300;
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), N, S, RandomStream(3, "hand"));
    ControlPaths c = ControlPaths::zeros(S, N, 1);
    for (int smp = 0; smp < S; ++smp) {
        c.u_at(smp, 0) = 0.3;
        c.v_at(smp, 1, 0) = -0.1;
        c.v_at(smp, 2, 0) = 0.25;
    }
    const BsdeSolution sol = solve_controlled_bsde(s, N, b, c);

    Eigen::MatrixXd A(S, 4);
    Eigen::VectorXd y(S);
    for (int smp = 0; smp < S; ++smp) {
        A(smp, 0) = 1.0;
        for (int j = 0; j <= N; ++j) A(smp, j + 1) = b.dw(smp, j, 0);
        const double x0 = s.x0_init + b.dw(smp, 0, 0);
        y(smp) = 0.5 * (std::tanh(x0 - 0.3 + b.dw(smp, 1, 0)) + std::tanh(x0 + 0.4 + b.dw(smp, 2, 0)));
    }
    const Eigen::VectorXd coef = A.householderQr().solve(y);
    HamiltonianPoint p;
    p.n_minor = N;
    p.eps = s.eps_n(N);
    p.x = {s.x0_init, -0.3, 0.4};
    p.z = {coef(1), coef(2), coef(3)};
    const double expect = coef(0) + eval_hamiltonian_n(p, 0.3, {-0.1, 0.25}, s.model);
    CHECK(sol.z_at(0, 0, 0) == doctest::Approx(coef(1)).epsilon(1e-10));
    CHECK(sol.z_at(0, 1, 0) == doctest::Approx(coef(2)).epsilon(1e-10));
    CHECK(sol.z_at(0, 2, 0) == doctest::Approx(coef(3)).epsilon(1e-10));
    CHECK(std::fabs(sol.y_start() - expect) <= 1e-12);
}

TEST_CASE("relabelling minors leaves Y unchanged sample by sample") {
    Scenario s = full(6);
    s.minor_inits = std::vector<double>{-0.5, 0.0, 0.1, 0.3, 0.8};
    const int N = 5, S = 200;
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), N, S, RandomStream(4, "perm"));
    ControlPaths c = ControlPaths::zeros(S, N, 6);
    StreamReader r(RandomStream(4, "ctrl"));
    for (double& u : c.u) u = r.uniform(-1, 1);
    for (double& v : c.v) v = r.uniform(-1, 1);
    const int j1 = 1, j2 = 4;
    Scenario sp = s;
    std::swap((*sp.minor_inits)[j1 - 1], (*sp.minor_inits)[j2 - 1]);
    PathBundle bp = b;
    ControlPaths cp = c;
    for (int smp = 0; smp < S; ++smp) {
        std::swap_ranges(bp.row(smp, j1), bp.row(smp, j1) + 6, bp.row(smp, j2));
        for (int i = 0; i < 6; ++i) std::swap(cp.v_at(smp, j1, i), cp.v_at(smp, j2, i));
    }
    const BsdeSolution a = solve_controlled_bsde(s, N, b, c);
    const BsdeSolution d = solve_controlled_bsde(sp, N, bp, cp);
    for (int smp = 0; smp < S; ++smp) {
        for (int i = 0; i <= 6; ++i) CHECK(a.y_at(smp, i) == d.y_at(smp, i));
        for (int i = 0; i < 6; ++i) {
            CHECK(a.z_at(smp, j1, i) == d.z_at(smp, j2, i));
            CHECK(a.z_at(smp, 0, i) == d.z_at(smp, 0, i));
        }
    }
    const BsdeSolution sa = solve_saddle_bsde(s, N, b);
    const BsdeSolution sd = solve_saddle_bsde(sp, N, bp);
    for (int smp = 0; smp < S; ++smp) {
        CHECK(sa.y_at(smp, 0) == sd.y_at(smp, 0));
        CHECK(sa.u_at(smp, 2) == sd.u_at(smp, 2));
        CHECK(sa.v_at(smp, j1, 2) == sd.v_at(smp, j2, 2));
    }
}

TEST_CASE("null game is identically zero") {
    const Scenario s = base(8);
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), 4, 100, RandomStream(5, "null"));
    const BsdeSolution sol = solve_saddle_bsde(s, 4, b);
    for (double y : sol.y) CHECK(y == 0.0);
    for (double z : sol.z) CHECK(z == 0.0);
    for (double u : sol.u) CHECK(u == 0.0);
    for (double v : sol.v) CHECK(v == 0.0);
    CHECK(sol.diagnostics.sweeps <= 2);
    CHECK(sol.diagnostics.picard_converged);
}

TEST_CASE("quadratic no-coupling game has the constant driver 0.2") {
    Scenario s = base(8);
    s.model.a_lin = 1.0;
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), 4, 100, RandomStream(6, "q"));
    const BsdeSolution sol = solve_saddle_bsde(s, 4, b);
    CHECK(sol.y_start() == doctest::Approx(0.2).epsilon(1e-12));
    for (double u : sol.u) CHECK(u == doctest::Approx(0.4).epsilon(1e-12));
    for (double v : sol.v) CHECK(v == doctest::Approx(-0.2).epsilon(1e-12));
    for (int i = 0; i <= 8; ++i) CHECK(sol.y_at(3, i) == doctest::Approx(0.2 * (1.0 - i / 8.0)).epsilon(1e-12).scale(1.0));
}

TEST_CASE("uncontrolled pair without driver compares terminal averages") {
    Scenario s = base(8);
    s.model.kappa_phi = 1.0;
    s.model.kappa_b0 = 0.5;
    s.model.kappa_b1 = 0.5;
    s.mc_cloud = 512;
    const int N = 64;
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), N, 400, RandomStream(7, "pair"));
    const UncontrolledPair p = solve_uncontrolled_pair(s, N, b);
    CHECK(std::fabs(p.y_n_t - mean(p.terminal_n)) <= 3.0 * std_error(p.terminal_n));
    CHECK(std::fabs(p.y_bar_t - mean(p.terminal_bar)) <= 3.0 * std_error(p.terminal_bar));
    std::vector<double> d(p.terminal_n.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = p.terminal_n[k] - p.terminal_bar[k];
    CHECK(std::fabs(p.y_n_t - p.y_bar_t) <= 3.0 * std_error(d) + 1e-9);
}

TEST_CASE("coupled difference is stable under step refinement") {
    Scenario s = full(8);
    s.mc_cloud = 256;
    const int N = 16;
    double gap[2], yn[2];
    for (int k = 0; k < 2; ++k) {
        Scenario sk = s;
        sk.n_steps = k == 0 ? 8 : 16;
        const PathBundle b = sample_brownian_bundle(TimeGrid::from(sk), N, 400, RandomStream(8, "refine"));
        const UncontrolledPair p = solve_uncontrolled_pair(sk, N, b);
        gap[k] = p.y_n_t - p.y_bar_t;
        yn[k] = p.y_n_t;
    }
    CHECK(std::fabs(yn[0] - yn[1]) <= 0.1);
    CHECK(std::fabs(gap[0] - gap[1]) <= 0.01);
}

TEST_CASE("limit grid solver closed forms") {
    Scenario s = base(16);
    s.model.a_lin = 1.0;
    const LimitBsdeSolution g = solve_limit_bsde(s);
    for (int i = 0; i <= 16; ++i) {
        for (double x : {-1.0, 0.0, 0.7}) CHECK(g.y_at(i, x) == doctest::Approx(0.2 * (1.0 - i / 16.0)).epsilon(1e-12).scale(1.0));
    }
    const LimitBsdeSolution z = solve_limit_bsde(base(8));
    for (double y : z.y_grid) CHECK(y == 0.0);
    for (double v : z.z_grid) CHECK(v == 0.0);
}

TEST_CASE("limit grid solver reproduces the heat semigroup") {
    Scenario s = base(8);
    s.model.kappa_phi = 1.0;
    s.xbar_init = 0.2;
    const LimitBsdeSolution g = solve_limit_bsde(s);
    const auto gh = gauss_hermite(80);
    for (int i : {0, 3, 6}) {
        const double t = g.times[i];
        const double sd = std::sqrt((1.0 - t) + 1.0);
        for (double x : {-1.0, 0.0, 0.5, 1.5}) {
            double e = 0.0;
            for (int q = 0; q < gh->order(); ++q) e += gh->weights[q] * std::tanh(x + s.xbar_init + sd * gh->nodes[q]);
            CHECK(std::fabs(g.y_at(i, x) - e) <= 1e-6);
        }
    }
}

TEST_CASE("limit game BSDE closed forms") {
    Scenario s = base(8);
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), 0, 100, RandomStream(9, "lg"));
    LimitControls c;
    c.u.assign(100 * 8, 0.0);
    c.v_closed = [](int, double, double, double, double, double) { return 0.0; };
    const BsdeSolution z = solve_limit_game_bsde(s, c, b);
    for (double y : z.y) CHECK(y == 0.0);

    s.model.a_lin = 1.0;
    s.model.c_lin = 0.3;
    const double u0 = 0.7;
    const double v0 = vbar(0, 0, 0, 0, u0, s.model);
    const double F = u0 + 0.3 * v0 - u0 * u0 + v0 * v0 + u0 * v0;
    c.u.assign(100 * 8, u0);
    Scenario cs = s;
    c.v_closed = [cs](int, double x0, double x1, double y, double z0, double u) { return vbar(x0, x1, y, z0, u, cs.model); };
    const BsdeSolution q = solve_limit_game_bsde(s, c, b);
    for (int i = 0; i <= 8; ++i) CHECK(q.y_at(5, i) == doctest::Approx(F * (1.0 - i / 8.0)).epsilon(1e-12).scale(1.0));
}

TEST_CASE("limit game at the saddle agrees with the grid solver") {
    Scenario s = full(16);
    s.mc_outer = 500;
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), 0, 500, RandomStream(10, "cross"));
    const LimitBsdeSolution g = solve_limit_bsde(s);
    const BsdeSolution y = solve_limit_game_bsde(s, limit_saddle_controls(s, g, b), b);
    CHECK(std::fabs(y.y_start() - g.y_start(s.x0_init)) <= 3.0 * (y.pathwise_std_error() + 2.0 * s.step()));
}

TEST_CASE("diagnostics and argument errors") {
    const Scenario s = full(8);
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), 4, 200, RandomStream(11, "diag"));
    const BsdeSolution sol = solve_saddle_bsde(s, 4, b);
    CHECK(sol.diagnostics.picard_converged);
    CHECK(sol.diagnostics.last_residual() <= 1e-6);
    CHECK(sol.diagnostics.stability < 0.5);
    CHECK_FALSE(sol.diagnostics.stability_flag);
    CHECK(sol.pathwise.size() == 200u);
    CHECK_THROWS_AS(solve_saddle_bsde(s, 5, b), Error);
    CHECK_THROWS_AS(solve_controlled_bsde(s, 4, b, ControlPaths::zeros(10, 4, 8)), Error);
    Scenario bad = s;
    bad.model.beta = 3.0;
    CHECK_THROWS_AS(solve_saddle_bsde(bad, 4, b), Error);
}

TEST_CASE("diverging Picard iteration is reported") {
    const Scenario s = base(2);
    const PathBundle b = sample_brownian_bundle(TimeGrid::from(s), 0, 50, RandomStream(12, "div"));
    const ParticlePaths x = brownian_states(s, 0, b);
    const BasisSpec basis = polynomial_basis(x, 1);
    // h * L = 1.5 > 1: the fixed-point map expands.
    const Driver f = [](int, int, double y, const double*) { return -3.0 * y; };
    CHECK_THROWS_AS(solve_bsde_regression([f] { return f; }, [](int) { return 1.0; }, b, basis), Error);
}

}  // TEST_SUITE
