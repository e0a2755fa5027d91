#include <doctest.h>

#include <cmath>
#include <vector>

#include "mfg/error.hpp"
#include "mfg/hamiltonian.hpp"
#include "mfg/rng.hpp"

using namespace mfg;

namespace {

ModelParams quad(double a, double c, double alpha = 2.0, double gamma = 2.0, double beta = 1.0) {
    ModelParams m;
    m.alpha = alpha;
    m.gamma = gamma;
    m.beta = beta;
    m.a_lin = a;
    m.c_lin = c;
    return m;
}

ModelParams full() {
    ModelParams m = quad(0.5, 0.2);
    m.kappa_g = 0.5;
    m.kappa_b0 = 0.5;
    m.kappa_b1 = 0.5;
    m.kappa_phi = 1.0;
    return m;
}

HamiltonianPoint point(int n, double eps, StreamReader& r, double zscale = 1.0) {
    HamiltonianPoint p;
    p.n_minor = n;
    p.eps = eps;
    p.y = r.uniform(-1.0, 1.0);
    for (int j = 0; j <= n; ++j) {
        p.x.push_back(r.uniform(-2.0, 2.0));
        p.z.push_back(zscale * r.uniform(-2.0, 2.0));
    }
    return p;
}

HamiltonianPoint zero_point(int n) {
    HamiltonianPoint p;
    p.n_minor = n;
    p.eps = epsilon_n(n, 1.0);
    p.x.assign(n + 1, 0.0);
    p.z.assign(n + 1, 0.0);
    for (int j = 0; j <= n; ++j) p.x[j] = 0.1 * j - 0.2;
    return p;
}

// Term-by-term evaluation in extended precision.
long double reference_h(const HamiltonianPoint& p, double u, const std::vector<double>& v, const ModelParams& m) {
    const int N = p.n_minor;
    long double acc = 0.0L;
    for (int l = 1; l <= N; ++l) {
        const long double vl = v[l - 1];
        acc += m.kappa_g * std::tanh(static_cast<long double>(p.x[0]) + p.x[l] + p.y + p.z[0] + p.z[l]) + m.a_lin * u +
               m.c_lin * vl - 0.5L * m.alpha * u * u + 0.5L * m.gamma * vl * vl + m.beta * u * vl;
        acc += m.kappa_b0 * std::tanh(static_cast<long double>(p.x[0]) + p.x[l]) / (1.0L + std::fabs(p.z[0])) * p.z[0] * u;
        for (int i = 1; i <= N; ++i) {
            acc += p.eps * m.kappa_b1 * std::tanh(static_cast<long double>(p.x[0]) + p.x[l]) /
                   (1.0L + std::fabs(p.z[i])) * p.z[i] * vl;
        }
    }
    return acc / N;
}

// u* = (a - beta c/gamma - (beta/gamma) Bbar + Dbar) / (alpha + beta^2/gamma), v_l = -(c + beta u + B_l)/gamma.
void closed_form(const HamiltonianPoint& p, const ModelParams& m, double& u, std::vector<double>& v) {
    const int N = p.n_minor;
    long double S = 0.0L, D = 0.0L;
    for (int i = 1; i <= N; ++i) S += p.z[i] / (1.0L + std::fabs(p.z[i]));
    std::vector<long double> B(N);
    long double Bbar = 0.0L;
    for (int l = 1; l <= N; ++l) {
        B[l - 1] = p.eps * m.kappa_b1 * std::tanh(static_cast<long double>(p.x[0]) + p.x[l]) * S;
        Bbar += B[l - 1] / N;
        D += m.kappa_b0 * std::tanh(static_cast<long double>(p.x[0]) + p.x[l]) / (1.0L + std::fabs(p.z[0])) * p.z[0] / N;
    }
    const long double uu =
        (m.a_lin - m.beta * m.c_lin / m.gamma - m.beta / m.gamma * Bbar + D) / (m.alpha + m.beta * m.beta / m.gamma);
    u = static_cast<double>(uu);
    v.resize(N);
    for (int l = 0; l < N; ++l) v[l] = static_cast<double>(-(m.c_lin + m.beta * uu + B[l]) / m.gamma);
}

}  // namespace

TEST_SUITE("hamiltonian") {

TEST_CASE("vanishing couplings reduce H_N to the quadratic part") {
    const ModelParams m = quad(0.0, 0.0);
    HamiltonianPoint p = zero_point(3);
    const std::vector<double> v = {0.3, -0.7, 1.1};
    const double u = 0.45;
    const double vm = (0.3 - 0.7 + 1.1) / 3.0, v2 = (0.09 + 0.49 + 1.21) / 3.0;
    CHECK(eval_hamiltonian_n(p, u, v, m) == doctest::Approx(-u * u + v2 + u * vm).epsilon(1e-14));
}

TEST_CASE("controls off leave the tanh average") {
    ModelParams m = full();
    HamiltonianPoint p = zero_point(4);
    p.y = 0.3;
    double expect = 0.0;
    for (int l = 1; l <= 4; ++l) expect += m.kappa_g * std::tanh(p.x[0] + p.x[l] + p.y);
    CHECK(eval_hamiltonian_n(p, 0.0, {0, 0, 0, 0}, m) == doctest::Approx(expect / 4).epsilon(1e-14));
}

TEST_CASE("H_N matches an extended-precision evaluation") {
    StreamReader r(RandomStream(1, "hn"));
    const ModelParams m = full();
    for (int k = 0; k < 50; ++k) {
        const HamiltonianPoint p = point(2, 0.7, r);
        const double u = r.uniform(-1, 1);
        const std::vector<double> v = {r.uniform(-1, 1), r.uniform(-1, 1)};
        CHECK(eval_hamiltonian_n(p, u, v, m) == doctest::Approx(static_cast<double>(reference_h(p, u, v, m))).epsilon(1e-13));
    }
}

TEST_CASE("inner minimizer closed forms") {
    HamiltonianPoint p = zero_point(1);
    CHECK(inner_min_v(p, 1, 0.4, quad(0.0, 0.0), 1e-12) == doctest::Approx(-0.2).epsilon(1e-14));
    CHECK(inner_min_v(p, 1, 0.0, quad(0.0, 0.0), 1e-12) == 0.0);

    // B_1 = eps kappa_b1 tanh(x0 + x1) z1 / (1 + |z1|) = 1 * 1 * 0.5 * 0.5 = 0.25.
    ModelParams m = quad(0.0, 1.0, 2.0, 2.0, 0.5);
    m.kappa_b1 = 1.0;
    p.eps = 1.0;
    p.x = {0.0, std::atanh(0.5)};
    p.z = {0.0, 1.0};
    CHECK(minor_aggregate(p, 1, QuadraticTanhFamily(m)) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(inner_min_v(p, 1, 1.0, m, 1e-12) == doctest::Approx(-0.875).epsilon(1e-14));
}

TEST_CASE("saddle point closed forms") {
    ModelParams m = quad(1.0, 0.0);
    for (double kg : {0.0, 0.8, -1.5}) {
        m.kappa_g = kg;
        const SaddlePoint sp = saddle_point_n(zero_point(5), m);
        CHECK(std::fabs(sp.u - 0.4) <= 1e-8);
        for (double v : sp.v) CHECK(std::fabs(v + 0.2) <= 1e-8);
    }
    const SaddlePoint z = saddle_point_n(zero_point(3), quad(0.0, 0.0));
    CHECK(z.u == 0.0);
    for (double v : z.v) CHECK(v == 0.0);
}

TEST_CASE("generic saddle point matches the closed form") {
    StreamReader r(RandomStream(2, "saddle"));
    const ModelParams m = full();
    for (int k = 0; k < 50; ++k) {
        const HamiltonianPoint p = point(4, epsilon_n(4, 1.0), r);
        const SaddlePoint sp = saddle_point_n(p, m);
        double u;
        std::vector<double> v;
        closed_form(p, m, u, v);
        CHECK(std::fabs(sp.residual_u) <= 1e-10);
        CHECK(std::fabs(sp.residual_v) <= 1e-10);
        CHECK(sp.u == doctest::Approx(u).epsilon(1e-12));
        for (int l = 0; l < 4; ++l) CHECK(sp.v[l] == doctest::Approx(v[l]).epsilon(1e-12));
        CHECK(std::fabs(eval_hamiltonian_n(p, sp.u, sp.v, m) - static_cast<double>(reference_h(p, u, v, m))) <= 1e-10);
    }
}

TEST_CASE("saddle inequalities hold pointwise") {
    StreamReader r(RandomStream(3, "ineq"));
    const ModelParams m = full();
    for (int k = 0; k < 100; ++k) {
        const HamiltonianPoint p = point(3, epsilon_n(3, 1.0), r);
        const SaddlePoint sp = saddle_point_n(p, m);
        const double h = eval_hamiltonian_n(p, sp.u, sp.v, m);
        std::vector<double> v = sp.v;
        for (double& x : v) x += r.uniform(-1, 1);
        CHECK(eval_hamiltonian_n(p, sp.u + r.uniform(-1, 1), sp.v, m) <= h + 1e-12);
        CHECK(eval_hamiltonian_n(p, sp.u, v, m) >= h - 1e-12);
    }
}

TEST_CASE("reduced H_N closed forms") {
    ModelParams m = quad(0.0, 0.0);
    CHECK(eval_hbar_n(zero_point(4), m) == 0.0);
    m = quad(1.0, 0.0);
    CHECK(eval_hbar_n(zero_point(4), m) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("reduced H_N is bounded uniformly in N") {
    const ModelParams m = full();
    const QuadraticTanhFamily fam(m);
    double worst[3] = {0, 0, 0};
    const int ns[3] = {4, 16, 64};
    // max_u min_v lies between min_v H(0, v) and max_u of H with the v-part dropped.
    const double a_max = std::fabs(m.a_lin) + std::fabs(m.kappa_b0);
    const double upper = std::fabs(m.kappa_g) + a_max * a_max / (2.0 * m.alpha);
    for (int k = 0; k < 3; ++k) {
        StreamReader r(RandomStream(4, "bound"));
        for (int q = 0; q < 100; ++q) {
            const HamiltonianPoint p = point(ns[k], epsilon_n(ns[k], 1.0), r);
            const double hb = eval_hbar_n(p, m);
            double lower = 0.0;
            for (int l = 1; l <= ns[k]; ++l) {
                const double c = m.c_lin + minor_aggregate(p, l, fam);
                lower += c * c / (2.0 * m.gamma);
            }
            lower = -std::fabs(m.kappa_g) - lower / ns[k];
            CHECK(hb <= upper + 1e-12);
            CHECK(hb >= lower - 1e-12);
            worst[k] = std::max(worst[k], std::fabs(hb));
        }
    }
    CHECK(worst[0] == doctest::Approx(0.598741).epsilon(1e-5));
    CHECK(worst[2] <= worst[0]);
}

TEST_CASE("allocation-free kernel agrees with the reference solver") {
    StreamReader r(RandomStream(5, "kernel"));
    const ModelParams m = full();
    const QuadraticTanhFamily fam(m);
    const int N = 6;
    SaddleKernel kern(fam, N, epsilon_n(N, 1.0));
    for (int k = 0; k < 30; ++k) {
        const HamiltonianPoint p = point(N, epsilon_n(N, 1.0), r);
        std::vector<double> v(N);
        double val = 0.0;
        const double u = kern.solve(p.x.data(), p.y, p.z.data(), v.data(), &val);
        const SaddlePoint sp = saddle_point_n(p, m);
        CHECK(u == doctest::Approx(sp.u).epsilon(1e-12));
        for (int l = 0; l < N; ++l) CHECK(v[l] == doctest::Approx(sp.v[l]).epsilon(1e-12));
        CHECK(val == doctest::Approx(eval_hamiltonian_n(p, sp.u, sp.v, m)).epsilon(1e-12));
        CHECK(kern.value(p.x.data(), p.y, p.z.data(), u, v.data()) == doctest::Approx(val).epsilon(1e-13));
    }
}

TEST_CASE("bad points are rejected") {
    HamiltonianPoint p = zero_point(2);
    p.x.pop_back();
    CHECK_THROWS_AS(eval_hamiltonian_n(p, 0.0, {0, 0}, full()), Error);
    p = zero_point(2);
    p.y = NAN;
    CHECK_THROWS_AS(saddle_point_n(p, full()), Error);
    CHECK_THROWS_AS(eval_hamiltonian_n(zero_point(2), 0.0, {0}, full()), Error);
}

TEST_CASE("increasing root solver") {
    int it = 0;
    const double r = solve_increasing_root([](double x) { return x * x * x + x - 10.0; },
                                           [](double x) { return 3 * x * x + 1; }, 0.0, 1e-13, 100, it);
    CHECK(r * r * r + r == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(it > 0);
}

}  // TEST_SUITE
