#include "mfg/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mfg/bsde.hpp"
#include "mfg/error.hpp"
#include "mfg/forward.hpp"
#include "mfg/hamiltonian.hpp"
#include "mfg/limit.hpp"
#include "mfg/parallel.hpp"

namespace mfg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

PointStat summarize(int n, const std::vector<double>& v) {
    PointStat p;
    p.n = n;
    p.reps = static_cast<int>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    p.err_mean = m;
    p.err_std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return p;
}

void check_study_args(const std::vector<int>& n_list, int reps, int min_reps) {
    if (n_list.size() < 3) fail(ErrorKind::argument, "study needs at least 3 values of N");
    for (std::size_t k = 0; k < n_list.size(); ++k) {
        if (n_list[k] < 2) fail(ErrorKind::argument, "study: every N must be >= 2");
        if (k > 0 && n_list[k] <= n_list[k - 1]) fail(ErrorKind::argument, "study: n_list must be strictly ascending");
    }
    if (reps < min_reps) fail(ErrorKind::argument, "study: reps must be >= " + std::to_string(min_reps));
}

StatSeries make_series(const std::string& name, bool asserted, double lo, double hi) {
    StatSeries s;
    s.name = name;
    s.asserted = asserted;
    s.band_lo = lo;
    s.band_hi = hi;
    return s;
}

void finish_series(StatSeries& s) {
    try {
        s.fit = fit_rate(s.points);
        s.fitted = true;
    } catch (const Error& e) {
        s.fitted = false;
        s.fit_error = e.what();
    }
    bool ok = true;
    if (s.band_lo < s.band_hi) ok = s.fitted && s.fit.slope >= s.band_lo && s.fit.slope <= s.band_hi;
    if (s.require_decreasing) {
        for (std::size_t k = 1; k < s.points.size(); ++k) {
            if (!(s.points[k].err_mean < s.points[k - 1].err_mean)) ok = false;
        }
    }
    s.pass = ok;
}

void finish_report(ConvergenceReport& r, Clock::time_point t0) {
    for (StatSeries& s : r.series) {
        finish_series(s);
        if (!s.asserted) continue;
        if (!s.pass) {
            std::ostringstream os;
            os << s.name << ": ";
            if (!s.fitted && s.band_lo < s.band_hi) {
                os << s.fit_error;
            } else {
                if (s.band_lo < s.band_hi) os << "slope " << s.fit.slope << " outside [" << s.band_lo << ", " << s.band_hi << "]";
                if (s.require_decreasing) os << (s.band_lo < s.band_hi ? "; " : "") << "required strictly decreasing in N";
            }
            r.failures.push_back(os.str());
        }
    }
    const StatSeries& p = r.series.front();
    r.per_n = p.points;
    r.slope = p.fitted ? p.fit.slope : std::nan("");
    r.ci = p.fitted ? std::make_pair(p.fit.lo, p.fit.hi) : std::make_pair(std::nan(""), std::nan(""));
    r.pass = r.failures.empty();
    r.runtime_s = seconds_since(t0);
}

// Piecewise-constant perturbation on 4 blocks of steps, values in [-1, 1].
std::vector<double> perturbation(const RandomStream& rs, int n_steps) {
    constexpr int blocks = 4;
    StreamReader r(rs);
    double vals[blocks];
    for (double& v : vals) v = r.uniform(-1.0, 1.0);
    std::vector<double> eta(static_cast<std::size_t>(n_steps));
    for (int i = 0; i < n_steps; ++i) eta[static_cast<std::size_t>(i)] = vals[std::min(blocks - 1, i * blocks / n_steps)];
    return eta;
}

}  // namespace

RateFit fit_rate(std::vector<PointStat>& per_n) {
    double pooled = 0.0;
    int counted = 0;
    for (const PointStat& p : per_n) {
        if (p.reps > 0) {
            const double se = p.err_std / std::sqrt(static_cast<double>(p.reps));
            pooled += se * se;
            ++counted;
        }
    }
    RateFit fit;
    fit.floor = counted > 0 ? 3.0 * std::sqrt(pooled / counted) : 0.0;
    std::vector<double> xs, ys, vs;
    std::vector<int> ns;
    for (PointStat& p : per_n) {
        p.excluded = !(p.err_mean > fit.floor) || !(p.err_mean > 0.0) || !std::isfinite(p.err_mean);
        if (p.excluded) continue;
        xs.push_back(std::log(static_cast<double>(p.n)));
        ys.push_back(std::log(p.err_mean));
        const double rel = p.reps > 0 ? p.err_std / std::sqrt(static_cast<double>(p.reps)) / p.err_mean : 0.0;
        vs.push_back(rel * rel);
        if (std::find(ns.begin(), ns.end(), p.n) == ns.end()) ns.push_back(p.n);
    }
    if (ns.size() < 3) {
        fail(ErrorKind::numerical, "fit_rate: fewer than 3 usable points above the noise floor " + std::to_string(fit.floor));
    }
    const std::size_t k = xs.size();
    const double xm = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(k);
    const double ym = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(k);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        sxx += (xs[i] - xm) * (xs[i] - xm);
        sxy += (xs[i] - xm) * (ys[i] - ym);
    }
    fit.slope = sxy / sxx;
    fit.intercept = ym - fit.slope * xm;
    double rss = 0.0, prop = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double r = ys[i] - fit.intercept - fit.slope * xs[i];
        rss += r * r;
        const double w = (xs[i] - xm) / sxx;
        prop += w * w * vs[i];
    }
    const double se = std::sqrt(rss / static_cast<double>(k - 2) / sxx + prop);
    fit.lo = fit.slope - 1.96 * se;
    fit.hi = fit.slope + 1.96 * se;
    fit.used = static_cast<int>(k);
    return fit;
}

ConvergenceReport run_forward_convergence(const Scenario& s_in, const std::vector<int>& n_list, int reps) {
    const auto t0 = Clock::now();
    check_study_args(n_list, reps, 100);
    Scenario s = s_in;
    ConvergenceReport r;
    r.study = "forward";
    r.n_list = n_list;
    r.reps = reps;
    ForwardCoefficients fc = ForwardCoefficients::from(s);
    if (fc.degenerate()) {
        s.sigma_mode = SigmaMode::tanh;
        fc = ForwardCoefficients::from(s);
        r.flags.push_back("degenerate forward coefficients (b = 0, unit sigma): switched to tanh sigma");
    }
    r.series.push_back(make_series("coupled_sup", true, -1.35, -0.65));
    r.series.push_back(make_series("empirical_average", false, -1.35, -0.65));
    r.series.push_back(make_series("major_sup", false, 0.0, 0.0));
    const int n = s.n_steps;
    const TimeGrid grid = TimeGrid::from(s);
    for (int N : n_list) {
        const PathBundle b = sample_brownian_bundle(grid, N, reps, RandomStream(s.seed, "forward"));
        const ParticlePaths x = simulate_n_system(s, fc, N, b);
        const int M = s.cloud_size(N);
        std::vector<double> stat(static_cast<std::size_t>(reps)), emp(stat.size()), major(stat.size());
        parallel_for(static_cast<std::size_t>(reps), [&](std::size_t su) {
            const int smp = static_cast<int>(su);
            std::vector<const double*> rows(static_cast<std::size_t>(N));
            for (int j = 1; j <= N; ++j) rows[static_cast<std::size_t>(j) - 1] = b.row(smp, j);
            const ConditionalCloud c = simulate_conditional_mkv(s, fc, b.row(smp, 0), N, M, cloud_stream(s, smp), rows);
            double sup = 0.0, sup0 = 0.0;
            for (int i = 0; i <= n; ++i) {
                const double d0 = x.at(smp, 0, i) - c.x0_path[static_cast<std::size_t>(i)];
                double acc = 0.0;
                for (int j = 1; j <= N; ++j) {
                    const double d = x.at(smp, j, i) - c.tag(j - 1)[i];
                    acc += d * d;
                }
                sup = std::max(sup, d0 * d0 + acc / N);
                sup0 = std::max(sup0, d0 * d0);
            }
            // Empirical average of tanh(x0 + x1) at the horizon against the cloud average.
            std::vector<double> t(static_cast<std::size_t>(N));
            for (int j = 1; j <= N; ++j) t[static_cast<std::size_t>(j) - 1] = std::tanh(x.at(smp, j, n));
            std::sort(t.begin(), t.end());
            const double en = mean_tanh_shift(x.at(smp, 0, n), t.data(), t.size());
            std::vector<double> tc(static_cast<std::size_t>(M));
            for (int m = 0; m < M; ++m) tc[static_cast<std::size_t>(m)] = std::tanh(c.member_at(m, n));
            std::sort(tc.begin(), tc.end());
            const double ec = mean_tanh_shift(c.x0_path[static_cast<std::size_t>(n)], tc.data(), tc.size());
            stat[su] = sup;
            emp[su] = (en - ec) * (en - ec);
            major[su] = sup0;
        });
        r.series[0].points.push_back(summarize(N, stat));
        r.series[1].points.push_back(summarize(N, emp));
        r.series[2].points.push_back(summarize(N, major));
    }
    finish_report(r, t0);
    return r;
}

ConvergenceReport run_bsde_convergence(const Scenario& s, const std::vector<int>& n_list, int reps) {
    const auto t0 = Clock::now();
    check_study_args(n_list, reps, 100);
    ConvergenceReport r;
    r.study = "bsde";
    r.n_list = n_list;
    r.reps = reps;
    r.series.push_back(make_series("total", true, -1.35, -0.65));
    r.series.push_back(make_series("sup_y", false, 0.0, 0.0));
    r.series.push_back(make_series("z0", false, 0.0, 0.0));
    StatSeries zm = make_series("z_minor", false, 0.0, 0.0);
    zm.require_decreasing = true;
    r.series.push_back(zm);
    const TimeGrid grid = TimeGrid::from(s);
    for (int N : n_list) {
        const PathBundle b = sample_brownian_bundle(grid, N, reps, RandomStream(s.seed, "bsde"));
        const UncontrolledPair p = solve_uncontrolled_pair(s, N, b);
        std::vector<double> tot(static_cast<std::size_t>(reps));
        for (std::size_t k = 0; k < tot.size(); ++k) tot[k] = p.sup_y[k] + p.z0_diff[k] + p.z_minor[k];
        r.series[0].points.push_back(summarize(N, tot));
        r.series[1].points.push_back(summarize(N, p.sup_y));
        r.series[2].points.push_back(summarize(N, p.z0_diff));
        r.series[3].points.push_back(summarize(N, p.z_minor));
        r.extra["y_n_t@" + std::to_string(N)] = p.y_n_t;
        r.extra["y_bar_t@" + std::to_string(N)] = p.y_bar_t;
        if (p.diag_n.stability_flag || p.diag_bar.stability_flag) r.flags.push_back("stability flag at N=" + std::to_string(N));
    }
    finish_report(r, t0);
    return r;
}

namespace {

void check_conforming(const Scenario& s) {
    if (s.nonconforming || s.eps_exponent != 0.75) {
        fail(ErrorKind::config, "study requires the conforming eps_N = c N^-3/4 schedule");
    }
}

}  // namespace

ConvergenceReport run_saddle_convergence(const Scenario& s, const std::vector<int>& n_list, int reps) {
    const auto t0 = Clock::now();
    check_study_args(n_list, reps, 100);
    check_conforming(s);
    ConvergenceReport r;
    r.study = "saddle";
    r.n_list = n_list;
    r.reps = reps;
    // Statistic 1 is the pathwise sup over grid times; its value at s = t is logged separately.
    r.series.push_back(make_series("y_sup", true, -1.4, -0.6));
    r.series.push_back(make_series("y_initial", false, 0.0, 0.0));
    r.series.push_back(make_series("z_total", true, -1.4, -0.6));
    r.series.push_back(make_series("z0", false, 0.0, 0.0));
    StatSeries zm = make_series("z_minor", true, 0.0, 0.0);
    zm.require_decreasing = true;
    r.series.push_back(zm);
    const TimeGrid grid = TimeGrid::from(s);
    const LimitBsdeSolution lim = solve_limit_bsde(s);
    const int n = s.n_steps;
    const double h = grid.h();
    r.extra["y_limit_t"] = lim.y_start(s.x0_init);
    for (int N : n_list) {
        const PathBundle b = sample_brownian_bundle(grid, N, reps, RandomStream(s.seed, "saddle"));
        const BsdeSolution sol = solve_saddle_bsde(s, N, b);
        std::vector<double> sup(static_cast<std::size_t>(reps)), init(sup.size()), z0(sup.size()), zmin(sup.size()), zt(sup.size());
        parallel_for(static_cast<std::size_t>(reps), [&](std::size_t su) {
            const int smp = static_cast<int>(su);
            double x0 = s.x0_init, m = 0.0, a0 = 0.0, am = 0.0;
            for (int i = 0; i <= n; ++i) {
                const double d = sol.y_at(smp, i) - lim.y_at(i, x0);
                m = std::max(m, d * d);
                if (i == 0) init[su] = d * d;
                if (i < n) {
                    const double dz = sol.z_at(smp, 0, i) - lim.z_at(i, x0);
                    a0 += h * dz * dz;
                    // Index order here; the sum is a diagnostic, not an exchangeability check.
                    for (int l = 1; l <= N; ++l) am += h * sol.z_at(smp, l, i) * sol.z_at(smp, l, i);
                    x0 += b.dw(smp, 0, i);
                }
            }
            sup[su] = m;
            z0[su] = a0;
            zmin[su] = am;
            zt[su] = a0 + am;
        });
        r.series[0].points.push_back(summarize(N, sup));
        r.series[1].points.push_back(summarize(N, init));
        r.series[2].points.push_back(summarize(N, zt));
        r.series[3].points.push_back(summarize(N, z0));
        r.series[4].points.push_back(summarize(N, zmin));
        r.extra["y_n_t@" + std::to_string(N)] = sol.y_start();
        r.extra["picard_sweeps@" + std::to_string(N)] = sol.diagnostics.sweeps;
        r.extra["picard_residual@" + std::to_string(N)] = sol.diagnostics.last_residual();
        r.extra["stability@" + std::to_string(N)] = sol.diagnostics.stability;
        if (!sol.diagnostics.picard_converged) r.flags.push_back("Picard not converged at N=" + std::to_string(N));
        if (sol.diagnostics.stability_flag) r.flags.push_back("stability flag at N=" + std::to_string(N));
    }
    finish_report(r, t0);
    return r;
}

ConvergenceReport run_control_convergence(const Scenario& s, const std::vector<int>& n_list, int reps) {
    const auto t0 = Clock::now();
    check_study_args(n_list, reps, 100);
    check_conforming(s);
    ConvergenceReport r;
    r.study = "control";
    r.n_list = n_list;
    r.reps = reps;
    r.series.push_back(make_series("controls", true, -1.4, -0.6));
    r.series.push_back(make_series("weak_tanh", true, -1.4, -0.6));
    r.series.push_back(make_series("major_only", false, 0.0, 0.0));
    const TimeGrid grid = TimeGrid::from(s);
    const LimitBsdeSolution lim = solve_limit_bsde(s);
    const LimitHamiltonian lh(s);
    const int n = s.n_steps;
    const double h = grid.h();
    for (int N : n_list) {
        const PathBundle b = sample_brownian_bundle(grid, N, reps, RandomStream(s.seed, "control"));
        const BsdeSolution sol = solve_saddle_bsde(s, N, b);
        std::vector<double> ctl(static_cast<std::size_t>(reps)), weak(ctl.size()), maj(ctl.size());
        parallel_for(static_cast<std::size_t>(reps), [&](std::size_t su) {
            const int smp = static_cast<int>(su);
            double x0 = s.x0_init, a = 0.0, w = 0.0, mj = 0.0;
            std::vector<double> x1(static_cast<std::size_t>(N));
            for (int l = 1; l <= N; ++l) x1[static_cast<std::size_t>(l) - 1] = s.minor_starts(N)[static_cast<std::size_t>(l) - 1];
            for (int i = 0; i < n; ++i) {
                const double ti = grid.times[static_cast<std::size_t>(i)];
                const LimitPoint pt{ti, x0, lim.y_at(i, x0), lim.z_at(i, x0)};
                const double ub = lh.ubar(pt);
                const double du = std::fabs(sol.u_at(smp, i) - ub);
                double acc = 0.0, mt = 0.0;
                for (int l = 1; l <= N; ++l) {
                    const double vb = vbar(x0, x1[static_cast<std::size_t>(l) - 1], pt.y, pt.z0, ub, lh.coefficients());
                    const double vn = sol.v_at(smp, l, i);
                    const double e = du + std::fabs(vn - vb);
                    acc += e * e;
                    mt += std::tanh(vn);
                }
                a += h * acc / N;
                mj += h * du * du;
                const double ev = lh.expect_of_vbar(pt, ub, [](double v) { return std::tanh(v); });
                const double dw = mt / N - ev;
                w += h * dw * dw;
                x0 += b.dw(smp, 0, i);
                for (int l = 1; l <= N; ++l) x1[static_cast<std::size_t>(l) - 1] += b.dw(smp, l, i);
            }
            ctl[su] = a;
            weak[su] = w;
            maj[su] = mj;
        });
        r.series[0].points.push_back(summarize(N, ctl));
        r.series[1].points.push_back(summarize(N, weak));
        r.series[2].points.push_back(summarize(N, maj));
    }
    finish_report(r, t0);
    return r;
}

bool is_study_name(const std::string& study) {
    return study == "forward" || study == "bsde" || study == "saddle" || study == "control";
}

ConvergenceReport run_study(const std::string& study, const Scenario& s, const std::vector<int>& n_list, int reps) {
    if (study == "forward") return run_forward_convergence(s, n_list, reps);
    if (study == "bsde") return run_bsde_convergence(s, n_list, reps);
    if (study == "saddle") return run_saddle_convergence(s, n_list, reps);
    if (study == "control") return run_control_convergence(s, n_list, reps);
    fail(ErrorKind::argument, "unknown study '" + study + "' (expected forward, bsde, saddle or control)");
}

namespace {

double diff_std_error(const BsdeSolution& a, const BsdeSolution& b) {
    std::vector<double> d(a.pathwise.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = a.pathwise[k] - b.pathwise[k];
    const double m = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    double ss = 0.0;
    for (double x : d) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(d.size() - 1) / static_cast<double>(d.size()));
}

VerifyCheck make_check(const std::string& game, const std::string& kind, int idx, double delta, double diff, double bound,
                       double tol, bool upper) {
    VerifyCheck c;
    c.game = game;
    c.kind = kind;
    c.index = idx;
    c.delta = delta;
    c.diff = diff;
    c.bound = bound;
    c.tol = tol;
    // upper: diff <= bound + tol; lower: diff >= bound - tol.
    c.margin = upper ? bound + tol - diff : diff - (bound - tol);
    c.ok = c.margin >= 0.0;
    return c;
}

}  // namespace

VerifyReport verify_saddle_and_uniqueness(const Scenario& s, int n_minor, int n_perturb, double magnitude) {
    const auto t0 = Clock::now();
    if (n_perturb < 20) fail(ErrorKind::argument, "verify: n_perturb must be >= 20");
    if (!(magnitude >= 0.0)) fail(ErrorKind::argument, "verify: magnitude must be >= 0");
    if (n_minor < 2) fail(ErrorKind::argument, "verify: N must be >= 2");
    const QuadraticTanhFamily fam(s.model);
    const double lam = fam.lambda_mod(), mu = fam.mu_mod();
    const double disc = std::exp(-std::fabs(s.model.kappa_g) * s.horizon());
    VerifyReport rep;
    rep.n_minor = n_minor;
    rep.n_perturb = n_perturb;
    rep.delta = magnitude;
    rep.c_u = (lam * lam - mu * mu) / (2.0 * lam) * disc;
    rep.c_v = lam / 2.0 * disc;
    const TimeGrid grid = TimeGrid::from(s);
    const int n = s.n_steps, S = s.mc_outer, N = n_minor;
    const double h = grid.h(), d2 = magnitude * magnitude;
    const PathBundle b = sample_brownian_bundle(grid, N, S, RandomStream(s.seed, "verify"));

    // N game.
    const BsdeSolution sad = solve_saddle_bsde(s, N, b);
    const ControlPaths base = ControlPaths::from_solution(sad);
    const BsdeSolution y0 = solve_controlled_bsde(s, N, b, base);
    rep.y_saddle_n = y0.y_start();
    const double pic_n = sad.diagnostics.last_residual() + y0.diagnostics.last_residual();
    const double eps = s.eps_n(N);
    const ParticlePaths xs = brownian_states(s, N, b);
    for (int p = 0; p < n_perturb; ++p) {
        const RandomStream rs(s.seed, "perturb", static_cast<std::uint64_t>(p));
        const std::vector<double> eta = perturbation(rs.child("u", 0), n);
        std::vector<std::vector<double>> eta_v(static_cast<std::size_t>(N));
        for (int l = 1; l <= N; ++l) eta_v[static_cast<std::size_t>(l) - 1] = perturbation(rs.child("v", static_cast<std::uint64_t>(l)), n);
        double int_u = 0.0, int_v = 0.0;
        for (int i = 0; i < n; ++i) {
            int_u += h * eta[static_cast<std::size_t>(i)] * eta[static_cast<std::size_t>(i)];
            for (int l = 0; l < N; ++l) int_v += h * eta_v[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)] * eta_v[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)] / N;
        }
        auto run = [&](const ControlPaths& c) { return solve_controlled_bsde(s, N, b, c); };
        auto tol_of = [&](const BsdeSolution& y) { return 3.0 * (diff_std_error(y, y0) + pic_n + y.diagnostics.last_residual()); };

        ControlPaths cu = base;
        for (int smp = 0; smp < S; ++smp)
            for (int i = 0; i < n; ++i) cu.u_at(smp, i) += magnitude * eta[static_cast<std::size_t>(i)];
        const BsdeSolution yu = run(cu);
        rep.checks.push_back(make_check("N", "saddle_u", p, magnitude, yu.y_start() - y0.y_start(), 0.0, tol_of(yu), true));

        ControlPaths cv = base;
        for (int smp = 0; smp < S; ++smp)
            for (int l = 1; l <= N; ++l)
                for (int i = 0; i < n; ++i) cv.v_at(smp, l, i) += magnitude * eta_v[static_cast<std::size_t>(l) - 1][static_cast<std::size_t>(i)];
        const BsdeSolution yv = run(cv);
        rep.checks.push_back(make_check("N", "saddle_v", p, magnitude, yv.y_start() - y0.y_start(), 0.0, tol_of(yv), false));

        // Leader deviates, follower best-responds at the saddle state.
        ControlPaths cb = cu;
        parallel_for(static_cast<std::size_t>(S), [&](std::size_t su) {
            const int smp = static_cast<int>(su);
            HamiltonianPoint pt;
            pt.n_minor = N;
            pt.eps = eps;
            pt.x.resize(static_cast<std::size_t>(N) + 1);
            pt.z.resize(static_cast<std::size_t>(N) + 1);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j <= N; ++j) pt.x[static_cast<std::size_t>(j)] = xs.at(smp, j, i);
                for (int j = 0; j <= N; ++j) pt.z[static_cast<std::size_t>(j)] = sad.z_at(smp, j, i);
                pt.y = sad.y_at(smp, i);
                for (int l = 1; l <= N; ++l) cb.v_at(smp, l, i) = inner_min_v(pt, l, cb.u_at(smp, i), fam, 1e-12);
            }
        });
        const BsdeSolution yb = run(cb);
        rep.checks.push_back(make_check("N", "unique_u", p, magnitude, yb.y_start() - y0.y_start(), -rep.c_u * d2 * int_u,
                                        tol_of(yb), true));
        rep.checks.push_back(make_check("N", "unique_v", p, magnitude, yv.y_start() - y0.y_start(), rep.c_v * d2 * int_v,
                                        tol_of(yv), false));
    }

    // Limit game along the W^0 paths of the same bundle.
    const LimitBsdeSolution grid_sol = solve_limit_bsde(s);
    rep.y_limit_grid = grid_sol.y_start(s.x0_init);
    const LimitControls lc = limit_saddle_controls(s, grid_sol, b);
    const BsdeSolution g0 = solve_limit_game_bsde(s, lc, b);
    rep.y_saddle_limit = g0.y_start();
    const double pic_l = g0.diagnostics.last_residual();
    const LimitHamiltonian lh(s);
    const GaussHermite& gh = lh.rule();
    auto shared = std::make_shared<LimitBsdeSolution>(grid_sol);
    for (int p = 0; p < n_perturb; ++p) {
        const RandomStream rs(s.seed, "perturb-limit", static_cast<std::uint64_t>(p));
        const std::vector<double> eta = perturbation(rs.child("u", 0), n);
        const std::vector<double> eta_v = perturbation(rs.child("v", 0), n);
        StreamReader rd(rs.child("phase", 0));
        const double theta = rd.uniform(0.0, 2.0), phase = rd.uniform(0.0, 6.283185307179586);
        double int_u = 0.0, int_v = 0.0;
        for (int i = 0; i < n; ++i) {
            int_u += h * eta[static_cast<std::size_t>(i)] * eta[static_cast<std::size_t>(i)];
            const double sd = lh.sd_at(grid.times[static_cast<std::size_t>(i)]);
            double e2 = 0.0;
            for (int q = 0; q < gh.order(); ++q) {
                const double c = std::cos(theta * (s.xbar_init + sd * gh.nodes[static_cast<std::size_t>(q)]) + phase);
                e2 += gh.weights[static_cast<std::size_t>(q)] * c * c;
            }
            int_v += h * eta_v[static_cast<std::size_t>(i)] * eta_v[static_cast<std::size_t>(i)] * e2;
        }
        auto tol_of = [&](const BsdeSolution& y) { return 3.0 * (diff_std_error(y, g0) + pic_l + y.diagnostics.last_residual()); };

        LimitControls cu = lc;
        for (int smp = 0; smp < S; ++smp)
            for (int i = 0; i < n; ++i) cu.u[static_cast<std::size_t>(smp) * n + i] += magnitude * eta[static_cast<std::size_t>(i)];
        const BsdeSolution yu = solve_limit_game_bsde(s, cu, b);
        rep.checks.push_back(make_check("limit", "saddle_u", p, magnitude, yu.y_start() - g0.y_start(), 0.0, tol_of(yu), true));

        LimitControls cv = lc;
        const auto vbase = lc.v_closed;
        cv.v_closed = [vbase, eta_v, theta, phase, magnitude](int i, double x0, double x1, double y, double z0, double u) {
            return vbase(i, x0, x1, y, z0, u) + magnitude * eta_v[static_cast<std::size_t>(i)] * std::cos(theta * x1 + phase);
        };
        const BsdeSolution yv = solve_limit_game_bsde(s, cv, b);
        rep.checks.push_back(make_check("limit", "saddle_v", p, magnitude, yv.y_start() - g0.y_start(), 0.0, tol_of(yv), false));

        LimitControls cb = cu;
        auto coeff = std::make_shared<QuadraticTanhFamily>(s.model);
        cb.v_closed = [shared, coeff](int i, double x0, double x1, double, double, double u) {
            return vbar(x0, x1, shared->y_at(i, x0), shared->z_at(i, x0), u, *coeff);
        };
        const BsdeSolution yb = solve_limit_game_bsde(s, cb, b);
        rep.checks.push_back(make_check("limit", "unique_u", p, magnitude, yb.y_start() - g0.y_start(), -rep.c_u * d2 * int_u,
                                        tol_of(yb), true));
        rep.checks.push_back(make_check("limit", "unique_v", p, magnitude, yv.y_start() - g0.y_start(), rep.c_v * d2 * int_v,
                                        tol_of(yv), false));
    }
    for (const VerifyCheck& c : rep.checks) {
        if (!c.ok) rep.violations.push_back(c);
    }
    rep.pass = rep.violations.empty();
    rep.runtime_s = seconds_since(t0);
    return rep;
}

CrossCheck cross_check_limit(const Scenario& s) {
    const TimeGrid grid = TimeGrid::from(s);
    const PathBundle b = sample_brownian_bundle(grid, 0, s.mc_outer, RandomStream(s.seed, "crosscheck"));
    const LimitBsdeSolution g = solve_limit_bsde(s);
    const LimitControls lc = limit_saddle_controls(s, g, b);
    const BsdeSolution y = solve_limit_game_bsde(s, lc, b);
    CrossCheck c;
    c.y_game = y.y_start();
    c.y_grid = g.y_start(s.x0_init);
    c.mc_std = y.pathwise_std_error();
    c.h = grid.h();
    c.tol = 3.0 * (c.mc_std + 2.0 * c.h);
    c.pass = std::fabs(c.y_game - c.y_grid) <= c.tol;
    return c;
}

namespace {

using nlohmann::ordered_json;

ordered_json num(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

ordered_json points_json(const std::vector<PointStat>& pts) {
    ordered_json a = ordered_json::array();
    for (const PointStat& p : pts) {
        a.push_back({{"N", p.n}, {"reps", p.reps}, {"err_mean", num(p.err_mean)}, {"err_std", num(p.err_std)},
                     {"excluded", p.excluded}});
    }
    return a;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string report_json(const ConvergenceReport& r, const RunInfo& info) {
    ordered_json j;
    j["study"] = r.study;
    j["n_list"] = r.n_list;
    j["points"] = points_json(r.per_n);
    j["slope"] = num(r.slope);
    j["ci"] = {num(r.ci.first), num(r.ci.second)};
    j["pass"] = r.pass;
    j["runtime_s"] = r.runtime_s;
    j["seed"] = info.seed;
    j["config_digest"] = info.config_digest;
    j["overrides"] = info.overrides;
    j["reps"] = r.reps;
    ordered_json ser = ordered_json::array();
    for (const StatSeries& s : r.series) {
        ordered_json e;
        e["name"] = s.name;
        e["asserted"] = s.asserted;
        e["points"] = points_json(s.points);
        e["slope"] = s.fitted ? num(s.fit.slope) : ordered_json(nullptr);
        e["ci"] = s.fitted ? ordered_json{num(s.fit.lo), num(s.fit.hi)} : ordered_json(nullptr);
        e["floor"] = s.fitted ? num(s.fit.floor) : ordered_json(nullptr);
        if (!s.fitted) e["fit_error"] = s.fit_error;
        if (s.band_lo < s.band_hi) e["band"] = {s.band_lo, s.band_hi};
        e["require_decreasing"] = s.require_decreasing;
        e["pass"] = s.pass;
        ser.push_back(e);
    }
    j["series"] = ser;
    j["flags"] = r.flags;
    j["failures"] = r.failures;
    ordered_json ex = ordered_json::object();
    for (const auto& [k, v] : r.extra) ex[k] = num(v);
    j["extra"] = ex;
    return j.dump(2) + "\n";
}

std::string report_csv(const ConvergenceReport& r) {
    std::string out = "study,N,reps,err_mean,err_std,excluded\n";
    for (const PointStat& p : r.per_n) {
        out += r.study + "," + std::to_string(p.n) + "," + std::to_string(p.reps) + "," + fmt(p.err_mean) + "," +
               fmt(p.err_std) + "," + (p.excluded ? "true" : "false") + "\n";
    }
    return out;
}

std::string verify_json(const VerifyReport& r, const RunInfo& info) {
    auto check_json = [](const VerifyCheck& c) {
        return ordered_json{{"game", c.game},   {"kind", c.kind}, {"index", c.index},   {"delta", c.delta},
                            {"diff", num(c.diff)}, {"bound", num(c.bound)}, {"tol", num(c.tol)}, {"margin", num(c.margin)},
                            {"ok", c.ok}};
    };
    ordered_json j;
    j["study"] = "verify";
    j["n"] = r.n_minor;
    j["perturbations"] = r.n_perturb;
    j["delta"] = r.delta;
    j["pass"] = r.pass;
    j["runtime_s"] = r.runtime_s;
    j["seed"] = info.seed;
    j["config_digest"] = info.config_digest;
    j["overrides"] = info.overrides;
    j["y_saddle_n"] = num(r.y_saddle_n);
    j["y_saddle_limit"] = num(r.y_saddle_limit);
    j["y_limit_grid"] = num(r.y_limit_grid);
    j["c_u"] = num(r.c_u);
    j["c_v"] = num(r.c_v);
    ordered_json checks = ordered_json::array(), viol = ordered_json::array();
    for (const VerifyCheck& c : r.checks) checks.push_back(check_json(c));
    for (const VerifyCheck& c : r.violations) viol.push_back(check_json(c));
    j["checks"] = checks;
    j["failures"] = viol;
    return j.dump(2) + "\n";
}

std::string verify_csv(const VerifyReport& r) {
    std::string out = "game,kind,index,delta,diff,bound,tol,margin,ok\n";
    for (const VerifyCheck& c : r.checks) {
        out += c.game + "," + c.kind + "," + std::to_string(c.index) + "," + fmt(c.delta) + "," + fmt(c.diff) + "," +
               fmt(c.bound) + "," + fmt(c.tol) + "," + fmt(c.margin) + "," + (c.ok ? "true" : "false") + "\n";
    }
    return out;
}

}  // namespace mfg
