#include "mfg/bsde.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_interp.h>

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>

#include "mfg/error.hpp"
#include "mfg/hamiltonian.hpp"
#include "mfg/parallel.hpp"

namespace mfg {

namespace {

struct LsqResult {
    Eigen::VectorXd coef;
    double condition = 1.0;
    int rank = 0;
    bool deficient = false;
    bool ridge = false;
};

LsqResult least_squares(const Eigen::MatrixXd& A_in, const Eigen::VectorXd& b, const BsdeOptions& opt) {
    const Eigen::Index n = A_in.rows(), p = A_in.cols();
    Eigen::VectorXd scale(p);
    Eigen::MatrixXd A = A_in;
    for (Eigen::Index k = 0; k < p; ++k) {
        const double rms = std::sqrt(A.col(k).squaredNorm() / static_cast<double>(n));
        scale(k) = rms > 0.0 ? rms : 1.0;
        A.col(k) /= scale(k);
    }
    LsqResult out;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.rows(), A.cols());
    qr.setThreshold(opt.rank_tol);
    qr.compute(A);
    out.rank = static_cast<int>(qr.rank());
    out.deficient = out.rank < p;
    const auto& R = qr.matrixR();
    if (out.rank > 0) out.condition = std::fabs(R(0, 0)) / std::fabs(R(out.rank - 1, out.rank - 1));
    if (!out.deficient && out.condition > opt.condition_limit) {
        out.ridge = true;
        Eigen::MatrixXd G = A.transpose() * A;
        G.diagonal().array() += opt.ridge * static_cast<double>(n);
        out.coef = G.ldlt().solve(A.transpose() * b);
    } else {
        // Basic solution: coefficients of columns beyond the numerical rank are zero.
        // qr.solve() counts pivots with its own threshold, so truncate by hand.
        const Eigen::Index r = out.rank;
        Eigen::VectorXd qtb = b;
        qtb.applyOnTheLeft(qr.householderQ().setLength(qr.nonzeroPivots()).adjoint());
        Eigen::VectorXd head = Eigen::VectorXd::Zero(p);
        if (r > 0) {
            head.head(r) = qr.matrixR().topLeftCorner(r, r).template triangularView<Eigen::Upper>().solve(qtb.head(r));
        }
        out.coef = qr.colsPermutation() * head;
    }
    out.coef.array() /= scale.array();
    return out;
}

struct Chunks {
    std::size_t count;
    std::size_t size;
};

Chunks make_chunks(int n_samples) {
    const std::size_t n = static_cast<std::size_t>(n_samples);
    const std::size_t c = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, worker_count())) * 4);
    return {c, (n + c - 1) / c};
}

template <class Body>
void for_chunks(int n_samples, Body body) {
    const Chunks ch = make_chunks(n_samples);
    parallel_for(ch.count, [&](std::size_t c) {
        const int lo = static_cast<int>(c * ch.size);
        const int hi = std::min(n_samples, static_cast<int>((c + 1) * ch.size));
        if (lo < hi) body(lo, hi);
    });
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) fail(ErrorKind::numerical, std::string(what) + ": non-finite value");
}

}  // namespace

double BsdeSolution::y_start() const {
    double acc = 0.0;
    for (int smp = 0; smp < n_samples; ++smp) acc += y_at(smp, 0);
    return acc / n_samples;
}

double BsdeSolution::pathwise_std_error() const {
    const std::size_t n = pathwise.size();
    if (n < 2) return 0.0;
    const double mean = std::accumulate(pathwise.begin(), pathwise.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : pathwise) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
}

BsdeSolution solve_bsde_regression(const DriverFactory& make_driver, const std::function<double(int smp)>& terminal,
                                   const PathBundle& bundle, const BasisSpec& basis, const BsdeOptions& opt) {
    if (basis.n_y < 1 || !basis.y_features) fail(ErrorKind::argument, "solve_bsde_regression: empty basis");
    if (opt.picard_iters < 1) fail(ErrorKind::argument, "solve_bsde_regression: picard_iters must be >= 1");
    if (basis.n_minor > 0 && !basis.minor_features) {
        fail(ErrorKind::argument, "solve_bsde_regression: minor basis size set without features");
    }
    const int S = bundle.n_samples;
    const int n = bundle.grid.n_steps;
    const double h = bundle.grid.h();
    const int N = basis.n_minor > 0 ? bundle.n_minor : 0;
    const int W = N + 1;
    const int ny = basis.n_y;
    const int nm = N > 0 ? basis.n_minor : 0;
    const int p = 2 * ny + nm;
    if (S < 2) fail(ErrorKind::argument, "solve_bsde_regression: need at least 2 samples");

    BsdeSolution sol;
    sol.grid = bundle.grid;
    sol.n_minor = N;
    sol.n_samples = S;
    sol.y.assign(static_cast<std::size_t>(S) * (n + 1), 0.0);
    sol.z.assign(static_cast<std::size_t>(S) * W * n, 0.0);
    sol.driver.assign(static_cast<std::size_t>(S) * n, 0.0);
    RegressionDiagnostics& dg = sol.diagnostics;
    dg.condition.assign(static_cast<std::size_t>(n), 0.0);
    dg.rank.assign(static_cast<std::size_t>(n), 0);
    dg.rank_deficient.assign(static_cast<std::size_t>(n), 0);
    dg.ridge.assign(static_cast<std::size_t>(n), 0);

    auto Y = [&](int smp, int i) -> double& { return sol.y[static_cast<std::size_t>(smp) * (n + 1) + i]; };
    auto Zp = [&](int smp, int i) { return sol.z.data() + static_cast<std::size_t>(smp) * W * n + i; };
    for_chunks(S, [&](int lo, int hi) {
        for (int smp = lo; smp < hi; ++smp) {
            const double v = terminal(smp);
            check_finite(v, "terminal");
            Y(smp, n) = v;
        }
    });

    std::vector<double> y_prev;
    std::vector<int> order_id(static_cast<std::size_t>(N));
    std::iota(order_id.begin(), order_id.end(), 1);
    auto order_at = [&](int smp, int i) -> const int* {
        return basis.minor_order ? basis.minor_order(smp, i) : order_id.data();
    };

    Eigen::MatrixXd A(S, p);
    Eigen::VectorXd b(S);
    int growth = 0;
    for (int sweep = 1; sweep <= opt.picard_iters; ++sweep) {
        for (int i = n - 1; i >= 0; --i) {
            for_chunks(S, [&](int lo, int hi) {
                std::vector<double> phi(static_cast<std::size_t>(ny)), psi(static_cast<std::size_t>(std::max(nm, 1)));
                std::vector<double> pool(static_cast<std::size_t>(std::max(nm, 1)));
                for (int smp = lo; smp < hi; ++smp) {
                    basis.y_features(smp, i, phi.data());
                    const double dw0 = bundle.dw(smp, 0, i);
                    for (int k = 0; k < ny; ++k) {
                        A(smp, k) = phi[static_cast<std::size_t>(k)];
                        A(smp, ny + k) = phi[static_cast<std::size_t>(k)] * dw0;
                    }
                    if (nm > 0) {
                        std::fill(pool.begin(), pool.end(), 0.0);
                        const int* ord = order_at(smp, i);
                        for (int q = 0; q < N; ++q) {
                            const int j = ord[q];
                            basis.minor_features(smp, i, j, psi.data());
                            const double dw = bundle.dw(smp, j, i);
                            for (int k = 0; k < nm; ++k) pool[static_cast<std::size_t>(k)] += psi[static_cast<std::size_t>(k)] * dw;
                        }
                        for (int k = 0; k < nm; ++k) A(smp, 2 * ny + k) = pool[static_cast<std::size_t>(k)];
                    }
                    b(smp) = Y(smp, i + 1);
                }
            });
            const LsqResult fit = least_squares(A, b, opt);
            dg.condition[static_cast<std::size_t>(i)] = fit.condition;
            dg.rank[static_cast<std::size_t>(i)] = fit.rank;
            dg.rank_deficient[static_cast<std::size_t>(i)] = fit.deficient;
            dg.ridge[static_cast<std::size_t>(i)] = fit.ridge;
            const Eigen::VectorXd& c = fit.coef;

            for_chunks(S, [&](int lo, int hi) {
                Driver f = make_driver();
                std::vector<double> phi(static_cast<std::size_t>(ny)), psi(static_cast<std::size_t>(std::max(nm, 1)));
                std::vector<double> zc(static_cast<std::size_t>(W));
                for (int smp = lo; smp < hi; ++smp) {
                    basis.y_features(smp, i, phi.data());
                    double ey = 0.0, z0 = 0.0;
                    for (int k = 0; k < ny; ++k) {
                        ey += c(k) * phi[static_cast<std::size_t>(k)];
                        z0 += c(ny + k) * phi[static_cast<std::size_t>(k)];
                    }
                    double* z = Zp(smp, 0);
                    // z holds [j][step]; gather the step-i column for the driver.
                    zc[0] = z0;
                    for (int j = 1; j <= N; ++j) {
                        basis.minor_features(smp, i, j, psi.data());
                        double zj = 0.0;
                        for (int k = 0; k < nm; ++k) zj += c(2 * ny + k) * psi[static_cast<std::size_t>(k)];
                        zc[static_cast<std::size_t>(j)] = zj;
                    }
                    for (int j = 0; j < W; ++j) z[static_cast<std::size_t>(j) * n + i] = zc[static_cast<std::size_t>(j)];
                    double yhat;
                    if (sweep == 1) {
                        yhat = ey + h * f(smp, i, ey, zc.data());
                    } else {
                        yhat = y_prev[static_cast<std::size_t>(smp) * (n + 1) + i];
                    }
                    const double fv = f(smp, i, yhat, zc.data());
                    check_finite(fv, "driver");
                    sol.driver[static_cast<std::size_t>(smp) * n + i] = fv;
                    Y(smp, i) = ey + h * fv;
                }
            });
        }
        dg.sweeps = sweep;
        if (sweep >= 2) {
            double res = 0.0;
            for (int smp = 0; smp < S; ++smp) {
                res = std::max(res, std::fabs(Y(smp, 0) - y_prev[static_cast<std::size_t>(smp) * (n + 1)]));
            }
            if (!dg.picard_residuals.empty() && res > dg.picard_residuals.back()) {
                ++growth;
            } else {
                growth = 0;
            }
            dg.picard_residuals.push_back(res);
            if (growth >= 3) {
                fail(ErrorKind::numerical, "Picard iteration diverged: residual grew for 3 consecutive sweeps, last " +
                                               std::to_string(res));
            }
            if (res <= opt.picard_tol) break;
        }
        if (sweep == opt.picard_iters && opt.picard_iters > 1) {
            dg.picard_converged = false;
            dg.warnings.push_back("Picard iteration stopped at max sweeps with residual " +
                                  std::to_string(dg.last_residual()));
        }
        y_prev = sol.y;
    }

    // Telescoped estimate of Y_t along each sample.
    sol.pathwise.assign(static_cast<std::size_t>(S), 0.0);
    for_chunks(S, [&](int lo, int hi) {
        for (int smp = lo; smp < hi; ++smp) {
            double v = Y(smp, n);
            for (int i = 0; i < n; ++i) {
                const double* z = Zp(smp, 0);
                double mart = z[i] * bundle.dw(smp, 0, i);
                if (N > 0) {
                    const int* ord = order_at(smp, i);
                    for (int q = 0; q < N; ++q) {
                        const int j = ord[q];
                        mart += z[static_cast<std::size_t>(j) * n + i] * bundle.dw(smp, j, i);
                    }
                }
                v += h * sol.driver[static_cast<std::size_t>(smp) * n + i] - mart;
            }
            sol.pathwise[static_cast<std::size_t>(smp)] = v;
        }
    });

    if (opt.probe_stability) {
        Driver f = make_driver();
        std::vector<double> zc(static_cast<std::size_t>(W));
        double lip = 0.0;
        const int probes = std::min(S, 8);
        for (int i = 0; i < n; ++i) {
            for (int smp = 0; smp < probes; ++smp) {
                for (int j = 0; j < W; ++j) zc[static_cast<std::size_t>(j)] = Zp(smp, i)[static_cast<std::size_t>(j) * n];
                const double y = Y(smp, i);
                const double f0 = f(smp, i, y, zc.data());
                const double dy = 1e-6 * (1.0 + std::fabs(y));
                double l = std::fabs(f(smp, i, y + dy, zc.data()) - f0) / dy;
                for (int j = 0; j < W; ++j) {
                    const double keep = zc[static_cast<std::size_t>(j)];
                    const double dz = 1e-6 * (1.0 + std::fabs(keep));
                    zc[static_cast<std::size_t>(j)] = keep + dz;
                    l += std::fabs(f(smp, i, y, zc.data()) - f0) / dz;
                    zc[static_cast<std::size_t>(j)] = keep;
                }
                lip = std::max(lip, l);
            }
        }
        dg.lipschitz = lip;
        dg.stability = h * lip;
        dg.stability_flag = dg.stability > 0.5;
        if (dg.stability_flag) dg.warnings.push_back("h * C_N = " + std::to_string(dg.stability) + " exceeds 0.5");
    }
    return sol;
}

MinorOrder::MinorOrder(const ParticlePaths& x, const PathBundle& bundle) : n_(x.n_minor), steps_(x.grid.n_steps + 1) {
    if (bundle.n_samples != x.n_samples || bundle.n_minor < x.n_minor) {
        fail(ErrorKind::argument, "MinorOrder: paths and bundle do not match");
    }
    const int S = x.n_samples;
    const int n = x.grid.n_steps;
    idx_.resize(static_cast<std::size_t>(S) * steps_ * static_cast<std::size_t>(n_));
    parallel_for(static_cast<std::size_t>(S), [&](std::size_t su) {
        const int smp = static_cast<int>(su);
        for (int i = 0; i <= n; ++i) {
            int* o = idx_.data() + (su * steps_ + static_cast<std::size_t>(i)) * static_cast<std::size_t>(n_);
            std::iota(o, o + n_, 1);
            std::sort(o, o + n_, [&](int a, int c) {
                const double xa = x.at(smp, a, i), xc = x.at(smp, c, i);
                if (xa != xc) return xa < xc;
                const double da = i < n ? bundle.dw(smp, a, i) : 0.0;
                const double dc = i < n ? bundle.dw(smp, c, i) : 0.0;
                if (da != dc) return da < dc;
                return false;
            });
        }
    });
}

BasisSpec symmetric_basis(const ParticlePaths& x, const MinorOrder& order, int x0_degree) {
    if (x0_degree < 1) fail(ErrorKind::argument, "symmetric_basis: degree must be >= 1");
    const int S = x.n_samples;
    const int np1 = x.grid.n_steps + 1;
    const int N = x.n_minor;
    auto moments = std::make_shared<std::vector<double>>(static_cast<std::size_t>(S) * np1 * 2);
    parallel_for(static_cast<std::size_t>(S), [&](std::size_t su) {
        const int smp = static_cast<int>(su);
        for (int i = 0; i < np1; ++i) {
            const int* o = order.at(smp, i);
            double m1 = 0.0, m2 = 0.0;
            for (int q = 0; q < N; ++q) {
                const double v = x.at(smp, o[q], i);
                m1 += v;
                m2 += v * v;
            }
            (*moments)[(su * np1 + static_cast<std::size_t>(i)) * 2] = m1 / N;
            (*moments)[(su * np1 + static_cast<std::size_t>(i)) * 2 + 1] = m2 / N;
        }
    });
    const ParticlePaths* xp = &x;
    const MinorOrder* op = &order;
    BasisSpec b;
    const int deg = x0_degree;
    b.n_y = 4 + deg;
    b.n_minor = 5;
    b.y_features = [xp, moments, np1, deg](int smp, int i, double* out) {
        const double x0 = xp->at(smp, 0, i);
        const double* m = moments->data() + (static_cast<std::size_t>(smp) * np1 + i) * 2;
        out[0] = 1.0;
        for (int k = 1; k <= deg; ++k) out[k] = out[k - 1] * x0;
        out[deg + 1] = m[0];
        out[deg + 2] = m[1];
        out[deg + 3] = x0 * m[0];
    };
    b.minor_features = [xp, moments, np1](int smp, int i, int j, double* out) {
        const double x0 = xp->at(smp, 0, i);
        const double xj = xp->at(smp, j, i);
        out[0] = 1.0;
        out[1] = x0;
        out[2] = xj;
        out[3] = moments->data()[(static_cast<std::size_t>(smp) * np1 + i) * 2];
        out[4] = xj * xj;
    };
    b.minor_order = [op](int smp, int i) { return op->at(smp, i); };
    return b;
}

BasisSpec polynomial_basis(const ParticlePaths& x, int degree) {
    if (degree < 1) fail(ErrorKind::argument, "polynomial_basis: degree must be >= 1");
    const ParticlePaths* xp = &x;
    BasisSpec b;
    b.n_y = degree + 1;
    b.y_features = [xp, degree](int smp, int i, double* out) {
        const double x0 = xp->at(smp, 0, i);
        out[0] = 1.0;
        for (int k = 1; k <= degree; ++k) out[k] = out[k - 1] * x0;
    };
    return b;
}

ControlPaths ControlPaths::zeros(int n_samples, int n_minor, int n_steps) {
    ControlPaths c;
    c.n_samples = n_samples;
    c.n_minor = n_minor;
    c.n_steps = n_steps;
    c.u.assign(static_cast<std::size_t>(n_samples) * n_steps, 0.0);
    c.v.assign(static_cast<std::size_t>(n_samples) * n_minor * n_steps, 0.0);
    return c;
}

ControlPaths ControlPaths::from_solution(const BsdeSolution& sol) {
    if (sol.u.empty()) fail(ErrorKind::argument, "ControlPaths::from_solution: solution carries no controls");
    ControlPaths c;
    c.n_samples = sol.n_samples;
    c.n_minor = sol.n_minor;
    c.n_steps = sol.steps();
    c.u = sol.u;
    c.v = sol.v;
    return c;
}

namespace {

// Gathers (x, z) of one (sample, step) in canonical minor order.
struct GameGather {
    const ParticlePaths& x;
    const MinorOrder& order;
    std::vector<double> xc, zc, vc;

    GameGather(const ParticlePaths& xs, const MinorOrder& o)
        : x(xs), order(o), xc(static_cast<std::size_t>(xs.n_minor) + 1), zc(xc.size()), vc(xc.size()) {}

    const int* load(int smp, int i, const double* z) {
        const int* o = order.at(smp, i);
        xc[0] = x.at(smp, 0, i);
        zc[0] = z[0];
        for (int q = 0; q < x.n_minor; ++q) {
            xc[static_cast<std::size_t>(q) + 1] = x.at(smp, o[q], i);
            zc[static_cast<std::size_t>(q) + 1] = z[o[q]];
        }
        return o;
    }
};

double game_terminal(const Coefficients& c, const ParticlePaths& x, const MinorOrder& order, int smp) {
    const int n = x.grid.n_steps;
    const int* o = order.at(smp, n);
    const double x0 = x.at(smp, 0, n);
    double acc = 0.0;
    for (int q = 0; q < x.n_minor; ++q) acc += c.phi(x0, x.at(smp, o[q], n));
    return acc / x.n_minor;
}

void check_game_inputs(const Scenario& s, int n_minor, const PathBundle& bundle) {
    if (n_minor < 1) fail(ErrorKind::argument, "game BSDE: N must be >= 1");
    if (bundle.n_minor != n_minor) fail(ErrorKind::argument, "game BSDE: bundle N does not match");
    if (bundle.grid.n_steps != s.n_steps) fail(ErrorKind::argument, "game BSDE: bundle grid does not match scenario");
}

}  // namespace

BsdeSolution solve_controlled_bsde(const Scenario& s, int n_minor, const PathBundle& bundle, const ControlPaths& ctrl,
                                   const BsdeOptions& opt) {
    return solve_controlled_bsde(s, QuadraticTanhFamily(s.model), n_minor, bundle, ctrl, opt);
}

BsdeSolution solve_controlled_bsde(const Scenario& s, const Coefficients& c, int n_minor, const PathBundle& bundle,
                                   const ControlPaths& ctrl, const BsdeOptions& opt) {
    check_game_inputs(s, n_minor, bundle);
    if (ctrl.n_samples != bundle.n_samples || ctrl.n_minor != n_minor || ctrl.n_steps != bundle.grid.n_steps) {
        fail(ErrorKind::argument, "solve_controlled_bsde: control paths do not match the bundle");
    }
    const ParticlePaths x = brownian_states(s, n_minor, bundle);
    const MinorOrder order(x, bundle);
    const BasisSpec basis = symmetric_basis(x, order, opt.x0_degree);
    const double eps = s.eps_n(n_minor);
    DriverFactory make = [&]() -> Driver {
        auto kernel = std::make_shared<SaddleKernel>(c, n_minor, eps);
        auto g = std::make_shared<GameGather>(x, order);
        return [&, kernel, g](int smp, int i, double y, const double* z) {
            const int* o = g->load(smp, i, z);
            for (int q = 0; q < n_minor; ++q) g->vc[static_cast<std::size_t>(q)] = ctrl.v_at(smp, o[q], i);
            return kernel->value(g->xc.data(), y, g->zc.data(), ctrl.u_at(smp, i), g->vc.data());
        };
    };
    return solve_bsde_regression(make, [&](int smp) { return game_terminal(c, x, order, smp); }, bundle, basis, opt);
}

BsdeSolution solve_saddle_bsde(const Scenario& s, int n_minor, const PathBundle& bundle, const BsdeOptions& opt) {
    return solve_saddle_bsde(s, QuadraticTanhFamily(s.model), n_minor, bundle, opt);
}

BsdeSolution solve_saddle_bsde(const Scenario& s, const Coefficients& c, int n_minor, const PathBundle& bundle,
                               const BsdeOptions& opt) {
    check_game_inputs(s, n_minor, bundle);
    if (!(c.mu_mod() < c.lambda_mod())) fail(ErrorKind::config, "solve_saddle_bsde: mu >= lambda");
    const ParticlePaths x = brownian_states(s, n_minor, bundle);
    const MinorOrder order(x, bundle);
    const BasisSpec basis = symmetric_basis(x, order, opt.x0_degree);
    const double eps = s.eps_n(n_minor);
    DriverFactory make = [&]() -> Driver {
        auto kernel = std::make_shared<SaddleKernel>(c, n_minor, eps);
        auto g = std::make_shared<GameGather>(x, order);
        return [kernel, g](int smp, int i, double y, const double* z) {
            g->load(smp, i, z);
            double value = 0.0;
            kernel->solve(g->xc.data(), y, g->zc.data(), g->vc.data(), &value);
            return value;
        };
    };
    BsdeSolution sol =
        solve_bsde_regression(make, [&](int smp) { return game_terminal(c, x, order, smp); }, bundle, basis, opt);

    // Controls at the final (Y, Z).
    const int S = sol.n_samples, n = sol.steps();
    sol.u.assign(static_cast<std::size_t>(S) * n, 0.0);
    sol.v.assign(static_cast<std::size_t>(S) * n_minor * n, 0.0);
    for_chunks(S, [&](int lo, int hi) {
        SaddleKernel kernel(c, n_minor, eps);
        GameGather g(x, order);
        std::vector<double> z(static_cast<std::size_t>(n_minor) + 1);
        for (int smp = lo; smp < hi; ++smp) {
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j <= n_minor; ++j) z[static_cast<std::size_t>(j)] = sol.z_at(smp, j, i);
                const int* o = g.load(smp, i, z.data());
                const double u = kernel.solve(g.xc.data(), sol.y_at(smp, i), g.zc.data(), g.vc.data());
                sol.u[static_cast<std::size_t>(smp) * n + i] = u;
                for (int q = 0; q < n_minor; ++q) {
                    sol.v[(static_cast<std::size_t>(smp) * n_minor + (o[q] - 1)) * n + i] = g.vc[static_cast<std::size_t>(q)];
                }
            }
        }
    });
    return sol;
}

UncontrolledPair solve_uncontrolled_pair(const Scenario& s, int n_minor, const PathBundle& bundle,
                                         const BsdeOptions& opt) {
    check_game_inputs(s, n_minor, bundle);
    const QuadraticTanhFamily fam(s.model);
    const double kg = s.model.kappa_g;
    const ForwardCoefficients fc = ForwardCoefficients::from(s);
    const int S = bundle.n_samples, n = bundle.grid.n_steps;
    const double h = bundle.grid.h();
    const int M = s.cloud_size(n_minor);
    const std::size_t np1 = static_cast<std::size_t>(n) + 1;

    // N side on the simulated forward system.
    const ParticlePaths x = simulate_n_system(s, fc, n_minor, bundle);
    const MinorOrder order(x, bundle);
    const BasisSpec basis = symmetric_basis(x, order, opt.x0_degree);
    DriverFactory make_n = [&]() -> Driver {
        auto g = std::make_shared<GameGather>(x, order);
        return [g, kg, n_minor](int smp, int i, double y, const double* z) {
            if (kg == 0.0) return 0.0;
            g->load(smp, i, z);
            const double base = g->xc[0] + y + g->zc[0];
            double acc = 0.0;
            for (int q = 1; q <= n_minor; ++q) {
                acc += std::tanh(base + g->xc[static_cast<std::size_t>(q)] + g->zc[static_cast<std::size_t>(q)]);
            }
            return kg * acc / n_minor;
        };
    };
    UncontrolledPair out;
    out.terminal_n.resize(static_cast<std::size_t>(S));
    for (int smp = 0; smp < S; ++smp) out.terminal_n[static_cast<std::size_t>(smp)] = game_terminal(fam, x, order, smp);
    BsdeSolution yn = solve_bsde_regression(
        make_n, [&](int smp) { return out.terminal_n[static_cast<std::size_t>(smp)]; }, bundle, basis, opt);

    // Limit side: one conditional cloud per W^0 path. Keeps X^0, the cloud
    // moments and, when the driver needs it, the sorted tanh of the cloud.
    ParticlePaths xbar;
    xbar.grid = bundle.grid;
    xbar.n_minor = 0;
    xbar.n_samples = S;
    xbar.values.assign(static_cast<std::size_t>(S) * np1, 0.0);
    std::vector<double> mom(static_cast<std::size_t>(S) * np1 * 2);
    std::vector<double> tanh_cloud(kg != 0.0 ? static_cast<std::size_t>(S) * n * M : 0);
    out.terminal_bar.resize(static_cast<std::size_t>(S));
    parallel_for(static_cast<std::size_t>(S), [&](std::size_t su) {
        const int smp = static_cast<int>(su);
        const ConditionalCloud cc = simulate_conditional_mkv(s, fc, bundle.row(smp, 0), 0, M, cloud_stream(s, smp));
        std::vector<double> col(static_cast<std::size_t>(M));
        for (std::size_t i = 0; i < np1; ++i) {
            xbar.values[su * np1 + i] = cc.x0_path[i];
            for (int m = 0; m < M; ++m) col[static_cast<std::size_t>(m)] = cc.member_at(m, static_cast<int>(i));
            std::sort(col.begin(), col.end());
            double m1 = 0.0, m2 = 0.0;
            for (double v : col) {
                m1 += v;
                m2 += v * v;
            }
            mom[(su * np1 + i) * 2] = m1 / M;
            mom[(su * np1 + i) * 2 + 1] = m2 / M;
            if (i == np1 - 1) {
                double acc = 0.0;
                for (double v : col) acc += fam.phi(cc.x0_path[i], v);
                out.terminal_bar[su] = acc / M;
            } else if (kg != 0.0) {
                double* t = tanh_cloud.data() + (su * n + i) * static_cast<std::size_t>(M);
                for (int m = 0; m < M; ++m) t[m] = std::tanh(col[static_cast<std::size_t>(m)]);
            }
        }
    });
    const int deg = opt.x0_degree;
    BasisSpec lb;
    lb.n_y = 4 + deg;
    lb.y_features = [&, deg](int smp, int i, double* o) {
        const double x0 = xbar.at(smp, 0, i);
        const double* m = mom.data() + (static_cast<std::size_t>(smp) * np1 + i) * 2;
        o[0] = 1.0;
        for (int k = 1; k <= deg; ++k) o[k] = o[k - 1] * x0;
        o[deg + 1] = m[0];
        o[deg + 2] = m[1];
        o[deg + 3] = x0 * m[0];
    };
    DriverFactory make_bar = [&]() -> Driver {
        return [&](int smp, int i, double y, const double* z) {
            if (kg == 0.0) return 0.0;
            const double* t = tanh_cloud.data() + (static_cast<std::size_t>(smp) * n + i) * static_cast<std::size_t>(M);
            return kg * mean_tanh_shift(xbar.at(smp, 0, i) + y + z[0], t, static_cast<std::size_t>(M));
        };
    };
    BsdeSolution ybar = solve_bsde_regression(
        make_bar, [&](int smp) { return out.terminal_bar[static_cast<std::size_t>(smp)]; }, bundle, lb, opt);

    out.y_n_t = yn.y_start();
    out.y_bar_t = ybar.y_start();
    out.sup_y.assign(static_cast<std::size_t>(S), 0.0);
    out.z0_diff.assign(static_cast<std::size_t>(S), 0.0);
    out.z_minor.assign(static_cast<std::size_t>(S), 0.0);
    for (int smp = 0; smp < S; ++smp) {
        double sup = 0.0, z0 = 0.0, zm = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double d = yn.y_at(smp, i) - ybar.y_at(smp, i);
            sup = std::max(sup, d * d);
        }
        for (int i = 0; i < n; ++i) {
            const double d = yn.z_at(smp, 0, i) - ybar.z_at(smp, 0, i);
            z0 += h * d * d;
            const int* o = order.at(smp, i);
            for (int q = 0; q < n_minor; ++q) {
                const double zl = yn.z_at(smp, o[q], i);
                zm += h * zl * zl;
            }
        }
        out.sup_y[static_cast<std::size_t>(smp)] = sup;
        out.z0_diff[static_cast<std::size_t>(smp)] = z0;
        out.z_minor[static_cast<std::size_t>(smp)] = zm;
    }
    out.diag_n = std::move(yn.diagnostics);
    out.diag_bar = std::move(ybar.diagnostics);
    return out;
}

struct SplineTable {
    std::vector<gsl_interp*> rows;
    ~SplineTable() {
        for (gsl_interp* r : rows) gsl_interp_free(r);
    }
};

namespace {

void gsl_quiet() {
    static std::once_flag once;
    std::call_once(once, [] { gsl_set_error_handler_off(); });
}

std::shared_ptr<SplineTable> make_table(std::size_t rows, std::size_t nodes) {
    gsl_quiet();
    auto t = std::make_shared<SplineTable>();
    t->rows.reserve(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        gsl_interp* g = gsl_interp_alloc(gsl_interp_cspline, nodes);
        if (!g) fail(ErrorKind::numerical, "spline allocation failed");
        t->rows.push_back(g);
    }
    return t;
}

void init_row(SplineTable& t, std::size_t r, const double* xa, const double* ya, std::size_t nodes) {
    if (gsl_interp_init(t.rows[r], xa, ya, nodes) != GSL_SUCCESS) fail(ErrorKind::numerical, "spline setup failed");
}

double eval_row(const SplineTable& t, std::size_t r, const std::vector<double>& xa, const double* ya, double x) {
    x = std::clamp(x, xa.front(), xa.back());
    return gsl_interp_eval(t.rows[r], xa.data(), ya, x, nullptr);
}

}  // namespace

double LimitBsdeSolution::y_at(int i, double x) const {
    if (i < 0 || i > n_steps()) fail(ErrorKind::argument, "LimitBsdeSolution::y_at: step out of range");
    return eval_row(*y_spline, static_cast<std::size_t>(i), x0_nodes, y_grid.data() + static_cast<std::size_t>(i) * n_nodes(), x);
}

double LimitBsdeSolution::z_at(int i, double x) const {
    if (i < 0 || i >= n_steps()) fail(ErrorKind::argument, "LimitBsdeSolution::z_at: step out of range");
    return eval_row(*z_spline, static_cast<std::size_t>(i), x0_nodes, z_grid.data() + static_cast<std::size_t>(i) * n_nodes(), x);
}

LimitBsdeSolution solve_limit_bsde(const Scenario& s, const LimitGridOptions& opt) {
    if (opt.n_nodes < 5) fail(ErrorKind::argument, "solve_limit_bsde: need at least 5 nodes");
    const TimeGrid grid = TimeGrid::from(s);
    const int n = grid.n_steps;
    const double h = grid.h();
    const std::size_t K = static_cast<std::size_t>(opt.n_nodes);
    const LimitHamiltonian lh(s);
    const GaussHermite& gh = lh.rule();
    const double sq = std::sqrt(h);

    LimitBsdeSolution sol;
    sol.times = grid.times;
    sol.x0_nodes.resize(K);
    const double half = opt.width_sd * std::sqrt(s.horizon());
    for (std::size_t k = 0; k < K; ++k) {
        sol.x0_nodes[k] = s.x0_init - half + 2.0 * half * static_cast<double>(k) / static_cast<double>(K - 1);
    }
    sol.y_grid.assign((static_cast<std::size_t>(n) + 1) * K, 0.0);
    sol.z_grid.assign(static_cast<std::size_t>(n) * K, 0.0);
    auto ys = make_table(static_cast<std::size_t>(n) + 1, K);
    auto zs = make_table(static_cast<std::size_t>(n), K);

    double* yT = sol.y_grid.data() + static_cast<std::size_t>(n) * K;
    parallel_for(K, [&](std::size_t k) { yT[k] = lh.terminal(sol.x0_nodes[k]); });
    init_row(*ys, static_cast<std::size_t>(n), sol.x0_nodes.data(), yT, K);

    const double lo = sol.x0_nodes.front(), hi = sol.x0_nodes.back();
    std::vector<long> clamped(K, 0);
    for (int i = n - 1; i >= 0; --i) {
        const double* ynext = sol.y_grid.data() + static_cast<std::size_t>(i + 1) * K;
        double* yi = sol.y_grid.data() + static_cast<std::size_t>(i) * K;
        double* zi = sol.z_grid.data() + static_cast<std::size_t>(i) * K;
        const double ti = grid.times[static_cast<std::size_t>(i)];
        parallel_for(K, [&](std::size_t k) {
            const double x = sol.x0_nodes[k];
            double ey = 0.0, z = 0.0;
            for (int q = 0; q < gh.order(); ++q) {
                const double zeta = gh.nodes[static_cast<std::size_t>(q)];
                const double xq = x + sq * zeta;
                if (xq < lo || xq > hi) ++clamped[k];
                const double v = eval_row(*ys, static_cast<std::size_t>(i + 1), sol.x0_nodes, ynext, xq);
                ey += gh.weights[static_cast<std::size_t>(q)] * v;
                z += gh.weights[static_cast<std::size_t>(q)] * v * zeta;
            }
            z /= sq;
            const double pred = ey + h * lh.reduced(LimitPoint{ti, x, ey, z});
            yi[k] = ey + h * lh.reduced(LimitPoint{ti, x, pred, z});
            zi[k] = z;
        });
        init_row(*ys, static_cast<std::size_t>(i), sol.x0_nodes.data(), yi, K);
        init_row(*zs, static_cast<std::size_t>(i), sol.x0_nodes.data(), zi, K);
    }
    for (long c : clamped) sol.clamped += c;
    sol.y_spline = ys;
    sol.z_spline = zs;
    return sol;
}

BsdeSolution solve_limit_game_bsde(const Scenario& s, const LimitControls& ctrl, const PathBundle& bundle,
                                   const BsdeOptions& opt) {
    if (bundle.grid.n_steps != s.n_steps) fail(ErrorKind::argument, "solve_limit_game_bsde: bundle grid does not match");
    if (!ctrl.v_closed == !ctrl.v_path) {
        fail(ErrorKind::argument, "solve_limit_game_bsde: exactly one of v_closed and v_path must be set");
    }
    const int S = bundle.n_samples, n = bundle.grid.n_steps;
    if (ctrl.u.size() != static_cast<std::size_t>(S) * n) fail(ErrorKind::argument, "solve_limit_game_bsde: u has wrong size");
    const QuadraticTanhFamily fam(s.model);
    const LimitHamiltonian lh(s);
    const GaussHermite& gh = lh.rule();
    const std::size_t np1 = static_cast<std::size_t>(n) + 1;
    const double h = bundle.grid.h();

    ParticlePaths x;
    x.grid = bundle.grid;
    x.n_minor = 0;
    x.n_samples = S;
    x.values.resize(static_cast<std::size_t>(S) * np1);
    for (int smp = 0; smp < S; ++smp) {
        double* r = x.row(smp, 0);
        r[0] = s.x0_init;
        for (int i = 0; i < n; ++i) r[i + 1] = r[i] + bundle.dw(smp, 0, i);
    }

    // W^1 copies per W^0 path for path-dependent v.
    const int M = s.mc_cloud.value_or(256);
    std::vector<double> w1;
    if (ctrl.v_path) {
        w1.resize(static_cast<std::size_t>(S) * M * n);
        const double sq = std::sqrt(h);
        parallel_for(static_cast<std::size_t>(S), [&](std::size_t su) {
            const RandomStream rs(s.seed, "limit-w1", su);
            for (int m = 0; m < M; ++m) {
                double* r = w1.data() + (su * M + static_cast<std::size_t>(m)) * n;
                fill_normals(rs, static_cast<std::uint64_t>(m), r, static_cast<std::size_t>(n));
                for (int i = 0; i < n; ++i) r[i] *= sq;
            }
        });
    }

    auto F = [&](double x0, double x1, double y, double z0, double u, double v) {
        return fam.f(x0, x1, y, z0, 0.0, u, v) + fam.b0(x0, x1, z0) * z0 * u;
    };
    DriverFactory make = [&]() -> Driver {
        return [&](int smp, int i, double y, const double* z) {
            const double x0 = x.at(smp, 0, i);
            const double u = ctrl.u[static_cast<std::size_t>(smp) * n + i];
            const double ti = bundle.grid.times[static_cast<std::size_t>(i)];
            if (ctrl.v_closed) {
                const double sd = lh.sd_at(ti);
                if (sd == 0.0) return F(x0, s.xbar_init, y, z[0], u, ctrl.v_closed(i, x0, s.xbar_init, y, z[0], u));
                double acc = 0.0;
                for (int q = 0; q < gh.order(); ++q) {
                    const double x1 = s.xbar_init + sd * gh.nodes[static_cast<std::size_t>(q)];
                    acc += gh.weights[static_cast<std::size_t>(q)] * F(x0, x1, y, z[0], u, ctrl.v_closed(i, x0, x1, y, z[0], u));
                }
                return acc;
            }
            double acc = 0.0;
            for (int m = 0; m < M; ++m) {
                const double* inc = w1.data() + (static_cast<std::size_t>(smp) * M + static_cast<std::size_t>(m)) * n;
                double x1 = s.xbar_init;
                for (int k = 0; k < i; ++k) x1 += inc[k];
                acc += F(x0, x1, y, z[0], u, ctrl.v_path(smp, i, x0, inc, y, z[0], u));
            }
            return acc / M;
        };
    };
    const BasisSpec basis = polynomial_basis(x, opt.x0_degree);
    return solve_bsde_regression(make, [&](int smp) { return lh.terminal(x.at(smp, 0, n)); }, bundle, basis, opt);
}

LimitControls limit_saddle_controls(const Scenario& s, const LimitBsdeSolution& grid, const PathBundle& bundle) {
    const int S = bundle.n_samples, n = bundle.grid.n_steps;
    if (grid.n_steps() != n) fail(ErrorKind::argument, "limit_saddle_controls: grid and bundle steps differ");
    const LimitHamiltonian lh(s);
    LimitControls c;
    c.u.resize(static_cast<std::size_t>(S) * n);
    parallel_for(static_cast<std::size_t>(S), [&](std::size_t su) {
        double x0 = s.x0_init;
        for (int i = 0; i < n; ++i) {
            const double ti = bundle.grid.times[static_cast<std::size_t>(i)];
            c.u[su * n + static_cast<std::size_t>(i)] = lh.ubar(LimitPoint{ti, x0, grid.y_at(i, x0), grid.z_at(i, x0)});
            x0 += bundle.dw(static_cast<int>(su), 0, i);
        }
    });
    // vbar is a fixed process: it is evaluated at the saddle solution and at ubar,
    // not at the state or leader control of the BSDE being solved.
    auto shared = std::make_shared<LimitBsdeSolution>(grid);
    auto lhp = std::make_shared<LimitHamiltonian>(s);
    auto times = std::make_shared<std::vector<double>>(bundle.grid.times);
    static std::atomic<std::uint64_t> next_id{1};
    const std::uint64_t id = next_id++;
    c.v_closed = [shared, lhp, times, id](int i, double x0, double x1, double, double, double) {
        // The driver asks for many x1 at one (i, x0) in a row.
        thread_local std::uint64_t key_owner = 0;
        thread_local int key_i = -1;
        thread_local double key_x0 = 0.0, ub = 0.0, yb = 0.0, zb = 0.0;
        if (key_owner != id || key_i != i || key_x0 != x0) {
            yb = shared->y_at(i, x0);
            zb = shared->z_at(i, x0);
            ub = lhp->ubar(LimitPoint{(*times)[static_cast<std::size_t>(i)], x0, yb, zb});
            key_owner = id;
            key_i = i;
            key_x0 = x0;
        }
        return vbar(x0, x1, yb, zb, ub, lhp->coefficients());
    };
    return c;
}

}  // namespace mfg
