#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mfg/model.hpp"

namespace mfg {

struct PointStat {
    int n = 0;
    double err_mean = 0.0;
    double err_std = 0.0;
    int reps = 0;
    bool excluded = false;
};

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    double floor = 0.0;
    int used = 0;
};

// Least squares on (log N, log err). Points with err_mean below the floor
// (3 times the pooled standard error of the means) are marked excluded; at
// least 3 distinct N must remain. The band is slope +- 1.96 SE, where SE
// combines the residual scatter with the propagated per-point uncertainty.
RateFit fit_rate(std::vector<PointStat>& per_n);

// One statistic of a study across N. Asserted series decide `pass`.
struct StatSeries {
    std::string name;
    std::vector<PointStat> points;
    bool fitted = false;
    RateFit fit;
    std::string fit_error;
    bool asserted = false;
    double band_lo = 0.0;
    double band_hi = 0.0;
    bool require_decreasing = false;
    bool pass = true;
};

struct ConvergenceReport {
    std::string study;
    std::vector<int> n_list;
    int reps = 0;
    // Primary statistic.
    std::vector<PointStat> per_n;
    double slope = 0.0;
    std::pair<double, double> ci{0.0, 0.0};
    bool pass = false;
    double runtime_s = 0.0;
    std::vector<StatSeries> series;  // primary first
    std::vector<std::string> flags;
    std::vector<std::string> failures;
    std::map<std::string, double> extra;
};

ConvergenceReport run_forward_convergence(const Scenario& s, const std::vector<int>& n_list, int reps);
ConvergenceReport run_bsde_convergence(const Scenario& s, const std::vector<int>& n_list, int reps);
ConvergenceReport run_saddle_convergence(const Scenario& s, const std::vector<int>& n_list, int reps);
ConvergenceReport run_control_convergence(const Scenario& s, const std::vector<int>& n_list, int reps);
// Dispatch by name: forward, bsde, saddle, control.
ConvergenceReport run_study(const std::string& study, const Scenario& s, const std::vector<int>& n_list, int reps);
bool is_study_name(const std::string& study);

struct VerifyCheck {
    std::string game;  // "N" or "limit"
    std::string kind;  // saddle_u, saddle_v, unique_u, unique_v
    int index = 0;
    double delta = 0.0;
    double diff = 0.0;   // Y^{perturbed}_t - Y^{saddle}_t
    double bound = 0.0;  // required one-sided bound on diff
    double tol = 0.0;
    double margin = 0.0; // positive when satisfied
    bool ok = true;
};

struct VerifyReport {
    int n_minor = 0;
    int n_perturb = 0;
    double delta = 0.0;
    double y_saddle_n = 0.0;
    double y_saddle_limit = 0.0;
    double y_limit_grid = 0.0;
    double c_u = 0.0;
    double c_v = 0.0;
    std::vector<VerifyCheck> checks;
    std::vector<VerifyCheck> violations;
    bool pass = true;
    double runtime_s = 0.0;
};

// Perturbations are deterministic, piecewise constant on 4 time blocks with
// values in [-1, 1], scaled by delta; minors get independent draws.
VerifyReport verify_saddle_and_uniqueness(const Scenario& s, int n_minor, int n_perturb, double magnitude);

// Cross-check of the limit game BSDE at the saddle controls against the grid solver.
struct CrossCheck {
    double y_game = 0.0;
    double y_grid = 0.0;
    double mc_std = 0.0;
    double h = 0.0;
    double tol = 0.0;
    bool pass = false;
};
CrossCheck cross_check_limit(const Scenario& s);

struct RunInfo {
    std::uint64_t seed = 0;
    std::string config_digest;
    std::vector<std::string> overrides;
};

std::string report_json(const ConvergenceReport& r, const RunInfo& info);
std::string report_csv(const ConvergenceReport& r);
std::string verify_json(const VerifyReport& r, const RunInfo& info);
std::string verify_csv(const VerifyReport& r);

}  // namespace mfg
