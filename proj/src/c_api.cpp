#include "mfg/mfg.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <new>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfg/bsde.hpp"
#include "mfg/error.hpp"
#include "mfg/experiments.hpp"
#include "mfg/forward.hpp"
#include "mfg/hamiltonian.hpp"
#include "mfg/limit.hpp"
#include "mfg/model.hpp"

struct mfg_scenario {
    mfg::Scenario s;
    std::vector<std::string> overrides;
    std::string text;
    std::string digest;
};

struct mfg_result {
    std::string json;
    std::string csv;
    bool pass = false;
    double value = std::nan("");
};

namespace {

using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

thread_local std::string last_error;

mfg_status status_of(mfg::ErrorKind k) {
    switch (k) {
        case mfg::ErrorKind::parse: return MFG_ERR_PARSE;
        case mfg::ErrorKind::config: return MFG_ERR_CONFIG;
        case mfg::ErrorKind::argument: return MFG_ERR_ARGUMENT;
        case mfg::ErrorKind::numerical: return MFG_ERR_NUMERICAL;
        case mfg::ErrorKind::io: return MFG_ERR_IO;
    }
    return MFG_ERR_INTERNAL;
}

template <class F>
mfg_status guarded(F&& f) {
    try {
        last_error.clear();
        f();
        return MFG_OK;
    } catch (const mfg::Error& e) {
        last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return MFG_ERR_INTERNAL;
    } catch (const std::exception& e) {
        last_error = e.what();
        return MFG_ERR_INTERNAL;
    } catch (...) {
        last_error = "unknown error";
        return MFG_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    if (!p) mfg::fail(mfg::ErrorKind::argument, std::string(what) + " is null");
}

ordered_json num(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

mfg::RunInfo info_of(const mfg_scenario* s) {
    return mfg::RunInfo{s->s.seed, mfg::config_digest(s->s), s->overrides};
}

ordered_json header(const char* study, const mfg_scenario* s) {
    ordered_json j;
    j["study"] = study;
    j["seed"] = s->s.seed;
    j["config_digest"] = mfg::config_digest(s->s);
    j["overrides"] = s->overrides;
    return j;
}

void finish(ordered_json& j, bool pass, Clock::time_point t0, std::string csv, double value, mfg_result** out) {
    j["pass"] = pass;
    j["runtime_s"] = std::chrono::duration<double>(Clock::now() - t0).count();
    auto* r = new mfg_result;
    r->json = j.dump(2) + "\n";
    r->csv = std::move(csv);
    r->pass = pass;
    r->value = value;
    *out = r;
}

mfg::HamiltonianPoint point_of(const mfg_scenario* s, int n_minor, const double* x, double y, const double* z) {
    need(x, "x");
    need(z, "z");
    if (n_minor < 1) mfg::fail(mfg::ErrorKind::argument, "n_minor must be >= 1");
    mfg::HamiltonianPoint p;
    p.n_minor = n_minor;
    p.eps = s->s.eps_n(n_minor);
    p.x.assign(x, x + n_minor + 1);
    p.z.assign(z, z + n_minor + 1);
    p.y = y;
    p.check();
    return p;
}

double mean_of(const std::vector<double>& v) {
    double a = 0.0;
    for (double x : v) a += x;
    return v.empty() ? 0.0 : a / static_cast<double>(v.size());
}

ordered_json diagnostics_json(const mfg::RegressionDiagnostics& d) {
    int deficient = 0, ridged = 0;
    double cond = 0.0;
    for (std::size_t i = 0; i < d.condition.size(); ++i) {
        deficient += d.rank_deficient[i] ? 1 : 0;
        ridged += d.ridge[i] ? 1 : 0;
        cond = std::max(cond, d.condition[i]);
    }
    ordered_json j;
    j["sweeps"] = d.sweeps;
    j["picard_converged"] = d.picard_converged;
    j["picard_residuals"] = d.picard_residuals;
    j["max_condition"] = num(cond);
    j["rank_deficient_steps"] = deficient;
    j["ridge_steps"] = ridged;
    j["lipschitz"] = num(d.lipschitz);
    j["stability"] = num(d.stability);
    j["stability_flag"] = d.stability_flag;
    j["warnings"] = d.warnings;
    return j;
}

}  // namespace

extern "C" {

const char* mfg_version(void) { return "1.0.0"; }

const char* mfg_last_error(void) { return last_error.c_str(); }

const char* mfg_status_name(mfg_status status) {
    switch (status) {
        case MFG_OK: return "ok";
        case MFG_ERR_PARSE: return "parse error";
        case MFG_ERR_CONFIG: return "config error";
        case MFG_ERR_ARGUMENT: return "argument error";
        case MFG_ERR_NUMERICAL: return "numerical error";
        case MFG_ERR_IO: return "io error";
        case MFG_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

mfg_status mfg_scenario_load_file(const char* path, mfg_scenario** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = nullptr;
        auto* h = new mfg_scenario;
        try {
            h->s = mfg::load_scenario_file(path);
        } catch (...) {
            delete h;
            throw;
        }
        *out = h;
    });
}

mfg_status mfg_scenario_load_text(const char* text, mfg_scenario** out) {
    return guarded([&] {
        need(text, "text");
        need(out, "out");
        *out = nullptr;
        auto* h = new mfg_scenario;
        try {
            h->s = mfg::load_scenario(text);
        } catch (...) {
            delete h;
            throw;
        }
        *out = h;
    });
}

mfg_status mfg_scenario_clone(const mfg_scenario* s, mfg_scenario** out) {
    return guarded([&] {
        need(s, "scenario");
        need(out, "out");
        *out = new mfg_scenario(*s);
    });
}

void mfg_scenario_free(mfg_scenario* s) { delete s; }

mfg_status mfg_scenario_override(mfg_scenario* s, const char* assignment) {
    return guarded([&] {
        need(s, "scenario");
        need(assignment, "assignment");
        mfg::Scenario copy = s->s;
        mfg::apply_override(copy, assignment);
        s->s = copy;
        s->overrides.emplace_back(assignment);
    });
}

mfg_status mfg_scenario_set_seed(mfg_scenario* s, uint64_t seed) {
    return guarded([&] {
        need(s, "scenario");
        s->s.seed = seed;
        s->overrides.push_back("seed=" + std::to_string(seed));
    });
}

uint64_t mfg_scenario_seed(const mfg_scenario* s) { return s ? s->s.seed : 0; }

const char* mfg_scenario_text(mfg_scenario* s) {
    if (!s) return "";
    s->text = mfg::to_config_text(s->s);
    return s->text.c_str();
}

const char* mfg_scenario_digest(mfg_scenario* s) {
    if (!s) return "";
    s->digest = mfg::config_digest(s->s);
    return s->digest.c_str();
}

double mfg_epsilon_n(int n_minor, double eps_coeff) {
    if (n_minor < 1) return std::nan("");
    return mfg::epsilon_n(n_minor, eps_coeff);
}

mfg_status mfg_saddle_point_n(const mfg_scenario* s, int n_minor, const double* x, double y, const double* z,
                              double* u_out, double* v_out) {
    return guarded([&] {
        need(s, "scenario");
        need(u_out, "u_out");
        need(v_out, "v_out");
        const mfg::HamiltonianPoint p = point_of(s, n_minor, x, y, z);
        const mfg::SaddlePoint sp = mfg::saddle_point_n(p, s->s.model);
        *u_out = sp.u;
        for (int l = 0; l < n_minor; ++l) v_out[l] = sp.v[static_cast<std::size_t>(l)];
    });
}

mfg_status mfg_hamiltonian_n(const mfg_scenario* s, int n_minor, const double* x, double y, const double* z, double u,
                             const double* v, double* value_out) {
    return guarded([&] {
        need(s, "scenario");
        need(v, "v");
        need(value_out, "value_out");
        const mfg::HamiltonianPoint p = point_of(s, n_minor, x, y, z);
        *value_out = mfg::eval_hamiltonian_n(p, u, std::vector<double>(v, v + n_minor), s->s.model);
    });
}

mfg_status mfg_ubar(const mfg_scenario* s, double time, double x0, double y, double z0, double* u_out) {
    return guarded([&] {
        need(s, "scenario");
        need(u_out, "u_out");
        *u_out = mfg::ubar(mfg::LimitPoint{time, x0, y, z0}, s->s);
    });
}

mfg_status mfg_vbar(const mfg_scenario* s, double x0, double x1, double y, double z0, double u, double* v_out) {
    return guarded([&] {
        need(s, "scenario");
        need(v_out, "v_out");
        *v_out = mfg::vbar(x0, x1, y, z0, u, s->s.model);
    });
}

mfg_status mfg_hbar_reduced(const mfg_scenario* s, double time, double x0, double y, double z0, double* value_out) {
    return guarded([&] {
        need(s, "scenario");
        need(value_out, "value_out");
        *value_out = mfg::eval_hbar_reduced(mfg::LimitPoint{time, x0, y, z0}, s->s);
    });
}

mfg_status mfg_run_validate(const mfg_scenario* s, int n_probe, mfg_result** out) {
    return guarded([&] {
        need(s, "scenario");
        need(out, "out");
        const auto t0 = Clock::now();
        const mfg::ValidationReport v = mfg::validate_assumptions(s->s, n_probe, mfg::RandomStream(s->s.seed, "validate"));
        ordered_json j = header("validate", s);
        j["n_probe"] = n_probe;
        ordered_json viol = ordered_json::array();
        std::string csv = "kind,name,value\n";
        for (const auto& x : v.violations) {
            viol.push_back({{"rule", x.rule}, {"witness", x.witness}});
            csv += "violation," + x.rule + ",\"" + x.witness + "\"\n";
        }
        ordered_json c = ordered_json::object();
        for (const auto& [k, val] : v.constants) {
            c[k] = num(val);
            csv += "constant," + k + "," + fmt(val) + "\n";
        }
        j["constants"] = c;
        j["failures"] = viol;
        finish(j, v.ok, t0, csv, std::nan(""), out);
    });
}

mfg_status mfg_run_forward(const mfg_scenario* s, int n_minor, mfg_result** out) {
    return guarded([&] {
        need(s, "scenario");
        need(out, "out");
        if (n_minor < 1) mfg::fail(mfg::ErrorKind::argument, "forward: N must be >= 1");
        const auto t0 = Clock::now();
        const mfg::Scenario& sc = s->s;
        const mfg::TimeGrid grid = mfg::TimeGrid::from(sc);
        const int S = sc.mc_outer, n = sc.n_steps;
        const mfg::PathBundle b = mfg::sample_brownian_bundle(grid, n_minor, S, mfg::RandomStream(sc.seed, "forward"));
        const mfg::ParticlePaths x = mfg::simulate_n_system(sc, n_minor, b);
        std::string csv = "i,t,x0_mean,x0_std,minor_mean,minor_std\n";
        for (int i = 0; i <= n; ++i) {
            double a0 = 0.0, q0 = 0.0, am = 0.0, qm = 0.0;
            for (int smp = 0; smp < S; ++smp) {
                const double v0 = x.at(smp, 0, i);
                a0 += v0;
                q0 += v0 * v0;
                for (int j = 1; j <= n_minor; ++j) {
                    const double v = x.at(smp, j, i);
                    am += v;
                    qm += v * v;
                }
            }
            const double c0 = static_cast<double>(S), cm = static_cast<double>(S) * n_minor;
            const double m0 = a0 / c0, mm = am / cm;
            csv += std::to_string(i) + "," + fmt(grid.times[static_cast<std::size_t>(i)]) + "," + fmt(m0) + "," +
                   fmt(std::sqrt(std::max(0.0, q0 / c0 - m0 * m0))) + "," + fmt(mm) + "," +
                   fmt(std::sqrt(std::max(0.0, qm / cm - mm * mm))) + "\n";
        }
        double xt = 0.0;
        for (int smp = 0; smp < S; ++smp) xt += x.at(smp, 0, n);
        ordered_json j = header("forward", s);
        j["n"] = n_minor;
        j["samples"] = S;
        j["x0_terminal_mean"] = num(xt / S);
        finish(j, true, t0, csv, xt / S, out);
    });
}

mfg_status mfg_run_bsde(const mfg_scenario* s, int n_minor, mfg_result** out) {
    return guarded([&] {
        need(s, "scenario");
        need(out, "out");
        if (n_minor < 2) mfg::fail(mfg::ErrorKind::argument, "bsde: N must be >= 2");
        const auto t0 = Clock::now();
        const mfg::Scenario& sc = s->s;
        const mfg::PathBundle b = mfg::sample_brownian_bundle(mfg::TimeGrid::from(sc), n_minor, sc.mc_outer,
                                                              mfg::RandomStream(sc.seed, "bsde"));
        const mfg::UncontrolledPair p = mfg::solve_uncontrolled_pair(sc, n_minor, b);
        ordered_json j = header("bsde", s);
        j["n"] = n_minor;
        j["samples"] = sc.mc_outer;
        j["y_n_t"] = num(p.y_n_t);
        j["y_bar_t"] = num(p.y_bar_t);
        j["sup_y"] = num(mean_of(p.sup_y));
        j["z0_diff"] = num(mean_of(p.z0_diff));
        j["z_minor"] = num(mean_of(p.z_minor));
        j["diagnostics_n"] = diagnostics_json(p.diag_n);
        j["diagnostics_limit"] = diagnostics_json(p.diag_bar);
        std::string csv = "quantity,value\n";
        csv += "y_n_t," + fmt(p.y_n_t) + "\n";
        csv += "y_bar_t," + fmt(p.y_bar_t) + "\n";
        csv += "sup_y," + fmt(mean_of(p.sup_y)) + "\n";
        csv += "z0_diff," + fmt(mean_of(p.z0_diff)) + "\n";
        csv += "z_minor," + fmt(mean_of(p.z_minor)) + "\n";
        finish(j, p.diag_n.picard_converged && p.diag_bar.picard_converged, t0, csv, p.y_n_t, out);
    });
}

mfg_status mfg_run_saddle(const mfg_scenario* s, int n_minor, mfg_result** out) {
    return guarded([&] {
        need(s, "scenario");
        need(out, "out");
        if (n_minor < 2) mfg::fail(mfg::ErrorKind::argument, "saddle: N must be >= 2");
        const auto t0 = Clock::now();
        const mfg::Scenario& sc = s->s;
        const mfg::TimeGrid grid = mfg::TimeGrid::from(sc);
        const int S = sc.mc_outer, n = sc.n_steps;
        const mfg::PathBundle b = mfg::sample_brownian_bundle(grid, n_minor, S, mfg::RandomStream(sc.seed, "saddle"));
        const mfg::BsdeSolution sol = mfg::solve_saddle_bsde(sc, n_minor, b);
        std::string csv = "i,t,y_mean,z0_mean,u_mean,v_mean\n";
        for (int i = 0; i <= n; ++i) {
            double y = 0.0, z0 = 0.0, u = 0.0, v = 0.0;
            for (int smp = 0; smp < S; ++smp) {
                y += sol.y_at(smp, i);
                if (i < n) {
                    z0 += sol.z_at(smp, 0, i);
                    u += sol.u_at(smp, i);
                    for (int l = 1; l <= n_minor; ++l) v += sol.v_at(smp, l, i);
                }
            }
            csv += std::to_string(i) + "," + fmt(grid.times[static_cast<std::size_t>(i)]) + "," + fmt(y / S);
            if (i < n) {
                csv += "," + fmt(z0 / S) + "," + fmt(u / S) + "," + fmt(v / S / n_minor) + "\n";
            } else {
                csv += ",,,\n";
            }
        }
        ordered_json j = header("saddle", s);
        j["n"] = n_minor;
        j["samples"] = S;
        j["eps_n"] = sc.eps_n(n_minor);
        j["y_t"] = num(sol.y_start());
        j["u_t"] = num(sol.u_at(0, 0));
        j["pathwise_std_error"] = num(sol.pathwise_std_error());
        j["diagnostics"] = diagnostics_json(sol.diagnostics);
        finish(j, sol.diagnostics.picard_converged, t0, csv, sol.y_start(), out);
    });
}

mfg_status mfg_run_limit(const mfg_scenario* s, mfg_result** out) {
    return guarded([&] {
        need(s, "scenario");
        need(out, "out");
        const auto t0 = Clock::now();
        const mfg::Scenario& sc = s->s;
        const mfg::LimitBsdeSolution g = mfg::solve_limit_bsde(sc);
        const double y_t = g.y_start(sc.x0_init);
        const double z_t = g.z_at(0, sc.x0_init);
        const double u_t = mfg::ubar(mfg::LimitPoint{sc.t_start, sc.x0_init, y_t, z_t}, sc);
        std::string csv = "i,t,x0,y,z0\n";
        for (int i = 0; i <= g.n_steps(); ++i) {
            for (int k = 0; k < g.n_nodes(); ++k) {
                const double x = g.x0_nodes[static_cast<std::size_t>(k)];
                csv += std::to_string(i) + "," + fmt(g.times[static_cast<std::size_t>(i)]) + "," + fmt(x) + "," +
                       fmt(g.y_grid[static_cast<std::size_t>(i) * g.n_nodes() + k]) + ",";
                if (i < g.n_steps()) csv += fmt(g.z_grid[static_cast<std::size_t>(i) * g.n_nodes() + k]);
                csv += "\n";
            }
        }
        ordered_json j = header("limit", s);
        j["y_t"] = num(y_t);
        j["z0_t"] = num(z_t);
        j["ubar_t"] = num(u_t);
        j["vbar_t_at_xbar"] = num(mfg::vbar(sc.x0_init, sc.xbar_init, y_t, z_t, u_t, sc.model));
        j["nodes"] = g.n_nodes();
        j["clamped"] = g.clamped;
        finish(j, true, t0, csv, y_t, out);
    });
}

mfg_status mfg_run_converge(const mfg_scenario* s, const char* study, const int* n_list, size_t n_count, int reps,
                            mfg_result** out) {
    return guarded([&] {
        need(s, "scenario");
        need(study, "study");
        need(n_list, "n_list");
        need(out, "out");
        if (!mfg::is_study_name(study)) {
            mfg::fail(mfg::ErrorKind::argument,
                      std::string("unknown study '") + study + "' (expected forward, bsde, saddle or control)");
        }
        const mfg::ConvergenceReport r = mfg::run_study(study, s->s, std::vector<int>(n_list, n_list + n_count), reps);
        auto* res = new mfg_result;
        res->json = mfg::report_json(r, info_of(s));
        res->csv = mfg::report_csv(r);
        res->pass = r.pass;
        res->value = r.slope;
        *out = res;
    });
}

mfg_status mfg_run_verify(const mfg_scenario* s, int n_minor, int n_perturb, double delta, mfg_result** out) {
    return guarded([&] {
        need(s, "scenario");
        need(out, "out");
        const mfg::VerifyReport r = mfg::verify_saddle_and_uniqueness(s->s, n_minor, n_perturb, delta);
        auto* res = new mfg_result;
        res->json = mfg::verify_json(r, info_of(s));
        res->csv = mfg::verify_csv(r);
        res->pass = r.pass;
        res->value = static_cast<double>(r.violations.size());
        *out = res;
    });
}

mfg_status mfg_run_crosscheck(const mfg_scenario* s, mfg_result** out) {
    return guarded([&] {
        need(s, "scenario");
        need(out, "out");
        const auto t0 = Clock::now();
        const mfg::CrossCheck c = mfg::cross_check_limit(s->s);
        ordered_json j = header("crosscheck", s);
        j["y_game"] = num(c.y_game);
        j["y_grid"] = num(c.y_grid);
        j["mc_std"] = num(c.mc_std);
        j["h"] = c.h;
        j["tol"] = num(c.tol);
        std::string csv = "y_game,y_grid,mc_std,h,tol,pass\n" + fmt(c.y_game) + "," + fmt(c.y_grid) + "," + fmt(c.mc_std) +
                          "," + fmt(c.h) + "," + fmt(c.tol) + "," + (c.pass ? "true" : "false") + "\n";
        finish(j, c.pass, t0, csv, c.y_game - c.y_grid, out);
    });
}

const char* mfg_result_json(const mfg_result* r) { return r ? r->json.c_str() : ""; }
const char* mfg_result_csv(const mfg_result* r) { return r ? r->csv.c_str() : ""; }
int mfg_result_pass(const mfg_result* r) { return r && r->pass ? 1 : 0; }
double mfg_result_value(const mfg_result* r) { return r ? r->value : std::nan(""); }
void mfg_result_free(mfg_result* r) { delete r; }

}  // extern "C"
