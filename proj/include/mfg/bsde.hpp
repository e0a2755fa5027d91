#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mfg/forward.hpp"
#include "mfg/limit.hpp"
#include "mfg/model.hpp"

namespace mfg {

struct RegressionDiagnostics {
    // Per step, from the last sweep.
    std::vector<double> condition;
    std::vector<int> rank;
    std::vector<char> rank_deficient;
    std::vector<char> ridge;
    // Max change of Y_t between consecutive sweeps, starting with sweep 2.
    std::vector<double> picard_residuals;
    int sweeps = 0;
    bool picard_converged = true;
    // Empirical driver Lipschitz constant in (y, z) and h times it.
    double lipschitz = 0.0;
    double stability = 0.0;
    bool stability_flag = false;
    std::vector<std::string> warnings;

    double last_residual() const { return picard_residuals.empty() ? 0.0 : picard_residuals.back(); }
};

struct BsdeSolution {
    TimeGrid grid;
    int n_minor = 0;
    int n_samples = 0;
    std::vector<double> y;       // [sample][n_steps + 1]
    std::vector<double> z;       // [sample][0..N][n_steps]
    std::vector<double> driver;  // [sample][n_steps], last sweep
    // Telescoped per-sample estimate of Y_t: Y_T + sum h f - sum Z dW.
    std::vector<double> pathwise;
    // Realized controls, filled by the saddle solver.
    std::vector<double> u;       // [sample][n_steps]
    std::vector<double> v;       // [sample][1..N][n_steps]
    RegressionDiagnostics diagnostics;

    int steps() const { return grid.n_steps; }
    double y_at(int smp, int i) const { return y[static_cast<std::size_t>(smp) * (steps() + 1) + i]; }
    double z_at(int smp, int j, int i) const {
        return z[(static_cast<std::size_t>(smp) * (n_minor + 1) + j) * steps() + i];
    }
    double u_at(int smp, int i) const { return u[static_cast<std::size_t>(smp) * steps() + i]; }
    double v_at(int smp, int ell, int i) const {
        return v[(static_cast<std::size_t>(smp) * n_minor + (ell - 1)) * steps() + i];
    }
    // Y_t; the scheme makes it identical across samples when the start is deterministic.
    double y_start() const;
    // Standard error of the mean of `pathwise`.
    double pathwise_std_error() const;
};

// Regression basis. Y and Z^0 are fitted on the y features (Z^0 through their
// products with dW^0); Z^1..Z^N share one pooled coefficient vector on the
// minor features. `minor_order`, when set, fixes the summation order over minors.
struct BasisSpec {
    int n_y = 0;
    int n_minor = 0;
    std::function<void(int smp, int step, double* out)> y_features;
    std::function<void(int smp, int step, int j, double* out)> minor_features;
    std::function<const int*(int smp, int step)> minor_order;
};

// Driver f(sample, step, y, z[0..N]). Instances are used by one thread at a time;
// the factory is called once per worker.
using Driver = std::function<double(int smp, int step, double y, const double* z)>;
using DriverFactory = std::function<Driver()>;

struct BsdeOptions {
    int picard_iters = 10;
    double picard_tol = 1e-6;
    double ridge = 1e-8;
    double rank_tol = 1e-10;
    double condition_limit = 1e10;
    bool probe_stability = true;
    // Degree of the X^0 polynomial in the Y/Z^0 basis.
    int x0_degree = 4;
};

BsdeSolution solve_bsde_regression(const DriverFactory& driver, const std::function<double(int smp)>& terminal,
                                   const PathBundle& bundle, const BasisSpec& basis, const BsdeOptions& opt = {});

// Canonical order of minors at every (sample, step): sorted by (X^j, dW^j).
class MinorOrder {
public:
    MinorOrder(const ParticlePaths& x, const PathBundle& bundle);
    const int* at(int smp, int step) const {
        return idx_.data() + (static_cast<std::size_t>(smp) * steps_ + step) * static_cast<std::size_t>(n_);
    }
    int n_minor() const { return n_; }

private:
    int n_ = 0;
    int steps_ = 0;
    std::vector<int> idx_;
};

// Y/Z^0: {1, X0, ..., X0^d, m1, m2, X0 m1}; Z^j: {1, X0, Xj, m1, Xj^2}, with m_k
// the empirical k-th moment of the minors. `x` and `order` must outlive the spec.
BasisSpec symmetric_basis(const ParticlePaths& x, const MinorOrder& order, int x0_degree = 4);

// Y/Z^0 on {1, X0, ..., X0^degree}; no minor Z.
BasisSpec polynomial_basis(const ParticlePaths& x, int degree);

// Open-loop controls along the samples of a bundle.
struct ControlPaths {
    int n_samples = 0;
    int n_minor = 0;
    int n_steps = 0;
    std::vector<double> u;  // [sample][n_steps]
    std::vector<double> v;  // [sample][1..N][n_steps]

    static ControlPaths zeros(int n_samples, int n_minor, int n_steps);
    static ControlPaths from_solution(const BsdeSolution& sol);
    double& u_at(int smp, int i) { return u[static_cast<std::size_t>(smp) * n_steps + i]; }
    double& v_at(int smp, int ell, int i) { return v[(static_cast<std::size_t>(smp) * n_minor + (ell - 1)) * n_steps + i]; }
    double u_at(int smp, int i) const { return u[static_cast<std::size_t>(smp) * n_steps + i]; }
    double v_at(int smp, int ell, int i) const {
        return v[(static_cast<std::size_t>(smp) * n_minor + (ell - 1)) * n_steps + i];
    }
};

// Weak-formulation game BSDE with driver H_N(X, y, z, u_s, v_s).
BsdeSolution solve_controlled_bsde(const Scenario& s, int n_minor, const PathBundle& bundle, const ControlPaths& ctrl,
                                   const BsdeOptions& opt = {});
BsdeSolution solve_controlled_bsde(const Scenario& s, const Coefficients& c, int n_minor, const PathBundle& bundle,
                                   const ControlPaths& ctrl, const BsdeOptions& opt = {});

// Saddle BSDE with driver H_N at its saddle point; fills the realized controls.
BsdeSolution solve_saddle_bsde(const Scenario& s, int n_minor, const PathBundle& bundle, const BsdeOptions& opt = {});
BsdeSolution solve_saddle_bsde(const Scenario& s, const Coefficients& c, int n_minor, const PathBundle& bundle,
                               const BsdeOptions& opt = {});

// Uncontrolled N-BSDE on the simulated forward system and the limit BSDE along
// the conditional clouds of the same W^0 paths.
struct UncontrolledPair {
    double y_n_t = 0.0;
    double y_bar_t = 0.0;
    std::vector<double> sup_y;      // per sample: max_i |Y^N_i - Ybar_i|^2
    std::vector<double> z0_diff;    // per sample: sum_i h |Z^0N_i - Zbar^0_i|^2
    std::vector<double> z_minor;    // per sample: sum_l sum_i h |Z^lN_i|^2
    std::vector<double> terminal_n;    // per sample terminal of the N side
    std::vector<double> terminal_bar;  // per sample terminal of the limit side
    RegressionDiagnostics diag_n;
    RegressionDiagnostics diag_bar;
};

UncontrolledPair solve_uncontrolled_pair(const Scenario& s, int n_minor, const PathBundle& bundle,
                                         const BsdeOptions& opt = {});

// Limit BSDE on a spatial grid for X^0.
struct SplineTable;

struct LimitBsdeSolution {
    std::vector<double> times;
    std::vector<double> x0_nodes;
    std::vector<double> y_grid;  // [n_steps + 1][n_nodes]
    std::vector<double> z_grid;  // [n_steps][n_nodes]
    long clamped = 0;            // quadrature points outside the node range during the solve

    int n_nodes() const { return static_cast<int>(x0_nodes.size()); }
    int n_steps() const { return static_cast<int>(times.size()) - 1; }
    // Natural cubic spline in x, clamped to the node range.
    double y_at(int i, double x) const;
    double z_at(int i, double x) const;
    double y_start(double x0) const { return y_at(0, x0); }

    std::shared_ptr<const SplineTable> y_spline;
    std::shared_ptr<const SplineTable> z_spline;
};

struct LimitGridOptions {
    int n_nodes = 201;
    double width_sd = 6.0;
};

LimitBsdeSolution solve_limit_bsde(const Scenario& s, const LimitGridOptions& opt = {});

// Controls of the limit game along W^0 paths. u is F^{W^0}-adapted and given per
// (sample, step). v is either closed loop in (s, x0, x1, y, z0, u), integrated by
// quadrature over X^1, or depends on the W^1 path of an independent copy, in
// which case mc_cloud copies per W^0 path are sub-sampled.
struct LimitControls {
    std::vector<double> u;  // [sample][n_steps]
    std::function<double(int step, double x0, double x1, double y, double z0, double u)> v_closed;
    std::function<double(int smp, int step, double x0, const double* w1_increments, double y, double z0, double u)>
        v_path;
};

// Regression over W^0 paths only; `bundle` supplies W^0 (coordinate 0).
BsdeSolution solve_limit_game_bsde(const Scenario& s, const LimitControls& ctrl, const PathBundle& bundle,
                                   const BsdeOptions& opt = {});

// (ubar, vbar) of the limit game realized along the W^0 paths of `bundle` from a grid solution.
LimitControls limit_saddle_controls(const Scenario& s, const LimitBsdeSolution& grid, const PathBundle& bundle);

}  // namespace mfg
