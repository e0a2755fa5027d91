#include "mfg/forward.hpp"

#include <algorithm>
#include <cmath>

#include "mfg/error.hpp"
#include "mfg/parallel.hpp"

namespace mfg {

TimeGrid::TimeGrid(double t0, double t1, int n) : t_start(t0), t_end(t1), n_steps(n) {
    if (!(t0 < t1) || n < 1) fail(ErrorKind::argument, "TimeGrid: need t_start < t_end and n_steps >= 1");
    times.resize(static_cast<std::size_t>(n) + 1);
    const double h = (t1 - t0) / n;
    for (int i = 0; i <= n; ++i) times[static_cast<std::size_t>(i)] = t0 + h * i;
    times.back() = t1;
}

double mean_tanh_shift(double a, const double* t, std::size_t n) {
    const double A = std::tanh(a);
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4) {
        s0 += (A + t[k]) / (1.0 + A * t[k]);
        s1 += (A + t[k + 1]) / (1.0 + A * t[k + 1]);
        s2 += (A + t[k + 2]) / (1.0 + A * t[k + 2]);
        s3 += (A + t[k + 3]) / (1.0 + A * t[k + 3]);
    }
    for (; k < n; ++k) s0 += (A + t[k]) / (1.0 + A * t[k]);
    return ((s0 + s1) + (s2 + s3)) / static_cast<double>(n);
}

PathBundle sample_brownian_bundle(const TimeGrid& grid, int n_minor, int n_samples, const RandomStream& stream) {
    if (n_minor < 0 || n_samples < 1) fail(ErrorKind::argument, "sample_brownian_bundle: need n_minor >= 0, n_samples >= 1");
    PathBundle b;
    b.grid = grid;
    b.n_minor = n_minor;
    b.n_samples = n_samples;
    b.increments.assign(static_cast<std::size_t>(n_samples) * (n_minor + 1) * grid.n_steps, 0.0);
    const double sq = std::sqrt(grid.h());
    parallel_for(static_cast<std::size_t>(n_samples), [&](std::size_t s) {
        const RandomStream rs = stream.with_index(s);
        for (int j = 0; j <= n_minor; ++j) {
            double* r = b.row(static_cast<int>(s), j);
            fill_normals(rs, static_cast<std::uint64_t>(j), r, static_cast<std::size_t>(grid.n_steps));
            for (int i = 0; i < grid.n_steps; ++i) r[i] *= sq;
        }
    });
    return b;
}

ParticlePaths brownian_states(const Scenario& s, int n_minor, const PathBundle& bundle) {
    if (bundle.n_minor < n_minor) fail(ErrorKind::argument, "brownian_states: bundle has fewer minors than requested");
    const std::vector<double> xs = s.minor_starts(n_minor);
    ParticlePaths p;
    p.grid = bundle.grid;
    p.n_minor = n_minor;
    p.n_samples = bundle.n_samples;
    const int n = bundle.grid.n_steps;
    p.values.assign(static_cast<std::size_t>(p.n_samples) * (n_minor + 1) * (n + 1), 0.0);
    for (int smp = 0; smp < p.n_samples; ++smp) {
        for (int j = 0; j <= n_minor; ++j) {
            double* r = p.row(smp, j);
            const double* dw = bundle.row(smp, j);
            r[0] = j == 0 ? s.x0_init : xs[static_cast<std::size_t>(j - 1)];
            for (int i = 0; i < n; ++i) r[i + 1] = r[i] + dw[i];
        }
    }
    return p;
}

ParticlePaths simulate_n_system(const Scenario& s, int n_minor, const PathBundle& bundle) {
    return simulate_n_system(s, ForwardCoefficients::from(s), n_minor, bundle);
}

ParticlePaths simulate_n_system(const Scenario& s, const ForwardCoefficients& c, int n_minor, const PathBundle& bundle) {
    if (n_minor < 2) fail(ErrorKind::argument, "simulate_n_system: N must be >= 2");
    if (bundle.n_minor != n_minor) fail(ErrorKind::argument, "simulate_n_system: bundle N does not match");
    const std::vector<double> xs = s.minor_starts(n_minor);
    const int n = bundle.grid.n_steps;
    const double h = bundle.grid.h();
    const bool sig = c.sigma == SigmaMode::tanh;
    const bool need_minor_mean = c.kappa_b1 != 0.0 || sig;
    ParticlePaths p;
    p.grid = bundle.grid;
    p.n_minor = n_minor;
    p.n_samples = bundle.n_samples;
    p.values.assign(static_cast<std::size_t>(p.n_samples) * (n_minor + 1) * (n + 1), 0.0);
    parallel_for(static_cast<std::size_t>(p.n_samples), [&](std::size_t smp_u) {
        const int smp = static_cast<int>(smp_u);
        std::vector<double> x(static_cast<std::size_t>(n_minor) + 1), xn(x.size()), t(static_cast<std::size_t>(n_minor));
        x[0] = s.x0_init;
        for (int j = 1; j <= n_minor; ++j) x[static_cast<std::size_t>(j)] = xs[static_cast<std::size_t>(j - 1)];
        for (int j = 0; j <= n_minor; ++j) p.row(smp, j)[0] = x[static_cast<std::size_t>(j)];
        for (int i = 0; i < n; ++i) {
            for (int l = 0; l < n_minor; ++l) t[static_cast<std::size_t>(l)] = std::tanh(x[static_cast<std::size_t>(l) + 1]);
            // Summands are monotone in t, so sorted order makes every mean independent of minor labels.
            std::sort(t.begin(), t.end());
            const double m0 = mean_tanh_shift(x[0], t.data(), t.size());
            xn[0] = x[0] + h * c.kappa_b0 * m0 + (sig ? 1.0 + 0.5 * m0 : 1.0) * bundle.dw(smp, 0, i);
            for (int j = 1; j <= n_minor; ++j) {
                const double xj = x[static_cast<std::size_t>(j)];
                const double mj = need_minor_mean ? mean_tanh_shift(x[0] + xj, t.data(), t.size()) : 0.0;
                xn[static_cast<std::size_t>(j)] = xj + h * c.kappa_b1 * mj + (sig ? 1.0 + 0.5 * mj : 1.0) * bundle.dw(smp, j, i);
            }
            x.swap(xn);
            for (int j = 0; j <= n_minor; ++j) p.row(smp, j)[i + 1] = x[static_cast<std::size_t>(j)];
        }
    });
    return p;
}

ConditionalCloud simulate_conditional_mkv(const Scenario& s, const double* w0_increments, int n_tagged, int m_cloud,
                                          const RandomStream& stream) {
    return simulate_conditional_mkv(s, ForwardCoefficients::from(s), w0_increments, n_tagged, m_cloud, stream);
}

ConditionalCloud simulate_conditional_mkv(const Scenario& s, const ForwardCoefficients& c, const double* w0_increments,
                                          int n_tagged, int m_cloud, const RandomStream& stream,
                                          const std::vector<const double*>& tagged_increments) {
    if (m_cloud < 2) fail(ErrorKind::argument, "simulate_conditional_mkv: m_cloud must be >= 2");
    if (n_tagged < 0) fail(ErrorKind::argument, "simulate_conditional_mkv: n_tagged must be >= 0");
    if (!tagged_increments.empty() && static_cast<int>(tagged_increments.size()) != n_tagged) {
        fail(ErrorKind::argument, "simulate_conditional_mkv: tagged increment count does not match n_tagged");
    }
    const TimeGrid grid = TimeGrid::from(s);
    const int n = grid.n_steps;
    const double h = grid.h();
    const double sq = std::sqrt(h);
    const bool sig = c.sigma == SigmaMode::tanh;
    const bool need_minor_mean = c.kappa_b1 != 0.0 || sig;
    const std::size_t M = static_cast<std::size_t>(m_cloud);
    const std::size_t np1 = static_cast<std::size_t>(n) + 1;

    ConditionalCloud out;
    out.grid = grid;
    out.m_cloud = m_cloud;
    out.n_tagged = n_tagged;
    out.w0_path.assign(w0_increments, w0_increments + n);
    out.x0_path.assign(np1, 0.0);
    out.cloud.assign(M * np1, 0.0);
    out.tagged.assign(static_cast<std::size_t>(n_tagged) * np1, 0.0);

    // Cloud increments [M][n], tagged increments [n_tagged][n].
    std::vector<double> dw_cloud(M * static_cast<std::size_t>(n));
    for (std::size_t m = 0; m < M; ++m) {
        fill_normals(stream, m, dw_cloud.data() + m * n, static_cast<std::size_t>(n));
    }
    for (double& d : dw_cloud) d *= sq;
    std::vector<double> dw_tag(static_cast<std::size_t>(n_tagged) * n);
    for (int j = 0; j < n_tagged; ++j) {
        double* r = dw_tag.data() + static_cast<std::size_t>(j) * n;
        if (!tagged_increments.empty()) {
            std::copy(tagged_increments[static_cast<std::size_t>(j)], tagged_increments[static_cast<std::size_t>(j)] + n, r);
        } else {
            const RandomStream ts = stream.child("tagged", 0);
            fill_normals(ts, static_cast<std::uint64_t>(j), r, static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) r[i] *= sq;
        }
    }

    std::vector<double> x(M, s.xbar_init), xn(M), t(M);
    std::vector<double> tag(static_cast<std::size_t>(n_tagged), s.xbar_init);
    double x0 = s.x0_init;
    out.x0_path[0] = x0;
    for (std::size_t m = 0; m < M; ++m) out.cloud[m * np1] = x[m];
    for (int j = 0; j < n_tagged; ++j) out.tagged[static_cast<std::size_t>(j) * np1] = tag[static_cast<std::size_t>(j)];

    for (int i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < M; ++m) t[m] = std::tanh(x[m]);
        std::sort(t.begin(), t.end());
        const double m0 = mean_tanh_shift(x0, t.data(), M);
        const double x0n = x0 + h * c.kappa_b0 * m0 + (sig ? 1.0 + 0.5 * m0 : 1.0) * w0_increments[i];
        for (std::size_t m = 0; m < M; ++m) {
            const double mm = need_minor_mean ? mean_tanh_shift(x0 + x[m], t.data(), M) : 0.0;
            xn[m] = x[m] + h * c.kappa_b1 * mm + (sig ? 1.0 + 0.5 * mm : 1.0) * dw_cloud[m * n + static_cast<std::size_t>(i)];
        }
        for (int j = 0; j < n_tagged; ++j) {
            const std::size_t ju = static_cast<std::size_t>(j);
            const double mj = need_minor_mean ? mean_tanh_shift(x0 + tag[ju], t.data(), M) : 0.0;
            tag[ju] = tag[ju] + h * c.kappa_b1 * mj + (sig ? 1.0 + 0.5 * mj : 1.0) * dw_tag[ju * n + static_cast<std::size_t>(i)];
        }
        x.swap(xn);
        x0 = x0n;
        out.x0_path[static_cast<std::size_t>(i) + 1] = x0;
        for (std::size_t m = 0; m < M; ++m) out.cloud[m * np1 + static_cast<std::size_t>(i) + 1] = x[m];
        for (int j = 0; j < n_tagged; ++j) {
            out.tagged[static_cast<std::size_t>(j) * np1 + static_cast<std::size_t>(i) + 1] = tag[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

RandomStream cloud_stream(const Scenario& s, int sample) {
    return RandomStream(s.seed, "cloud", static_cast<std::uint64_t>(sample));
}

double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) fail(ErrorKind::argument, "wasserstein2_1d: empty input");
    if (a.size() != b.size()) fail(ErrorKind::argument, "wasserstein2_1d: unequal sample sizes");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

}  // namespace mfg
