#pragma once

#include <functional>
#include <vector>

#include "mfg/model.hpp"

namespace mfg {

struct HamiltonianPoint {
    std::vector<double> x;  // x_0..x_N
    double y = 0.0;
    std::vector<double> z;  // z_0..z_N
    int n_minor = 0;
    double eps = 0.0;

    void check() const;
};

struct SaddlePoint {
    double u = 0.0;
    std::vector<double> v;
    double residual_u = 0.0;
    double residual_v = 0.0;
    int iterations = 0;
};

double eval_hamiltonian_n(const HamiltonianPoint& p, double u, const std::vector<double>& v, const ModelParams& model);
double eval_hamiltonian_n(const HamiltonianPoint& p, double u, const std::vector<double>& v, const Coefficients& c);

// B_l = eps * sum_i b1(x0, x_l, z_i) z_i.
double minor_aggregate(const HamiltonianPoint& p, int ell, const Coefficients& c);

double inner_min_v(const HamiltonianPoint& p, int ell, double u, const ModelParams& model, double tol);
double inner_min_v(const HamiltonianPoint& p, int ell, double u, const Coefficients& c, double tol);

SaddlePoint saddle_point_n(const HamiltonianPoint& p, const ModelParams& model, double tol = 1e-10, int max_iter = 100);
SaddlePoint saddle_point_n(const HamiltonianPoint& p, const Coefficients& c, double tol = 1e-10, int max_iter = 100);

double eval_hbar_n(const HamiltonianPoint& p, const ModelParams& model);
double eval_hbar_n(const HamiltonianPoint& p, const Coefficients& c);

// Derivative of u -> H_N(xi, u, v) at fixed v.
double du_hamiltonian_n(const HamiltonianPoint& p, double u, const std::vector<double>& v, const Coefficients& c);

// Root of a strictly increasing scalar map with derivative bounded below by a
// positive constant: bracket by geometric growth, then Newton with bisection
// safeguard. Returns the root and sets `iters`.
double solve_increasing_root(const std::function<double(double)>& g, const std::function<double(double)>& dg,
                             double start, double tol, int max_iter, int& iters);

// Allocation-free saddle evaluation for the backward solvers. Arrays hold
// x_0..x_N and z_0..z_N; v_out receives v_1..v_N.
class SaddleKernel {
public:
    SaddleKernel(const Coefficients& c, int n_minor, double eps);

    // Returns u; writes v; optionally the value of H_N at the saddle.
    double solve(const double* x, double y, const double* z, double* v_out, double* value = nullptr);
    // H_N at given controls.
    double value(const double* x, double y, const double* z, double u, const double* v) const;

    int n_minor() const { return n_; }
    double eps() const { return eps_; }

private:
    const Coefficients& c_;
    int n_;
    double eps_;
    const QuadraticTanhFamily* fam_;
    std::vector<double> agg_;
    HamiltonianPoint scratch_;
};

}  // namespace mfg
