#pragma once

#include <cstddef>
#include <vector>

#include "mfg/model.hpp"
#include "mfg/rng.hpp"

namespace mfg {

struct TimeGrid {
    double t_start = 0.0;
    double t_end = 1.0;
    int n_steps = 1;
    std::vector<double> times;

    TimeGrid() = default;
    TimeGrid(double t0, double t1, int n);
    static TimeGrid from(const Scenario& s) { return TimeGrid(s.t_start, s.t_end, s.n_steps); }
    double h() const { return (t_end - t_start) / n_steps; }
};

// Increments laid out as [sample][coordinate 0..N][step].
struct PathBundle {
    TimeGrid grid;
    int n_minor = 0;
    int n_samples = 0;
    std::vector<double> increments;

    int width() const { return n_minor + 1; }
    const double* row(int sample, int j) const {
        return increments.data() + (static_cast<std::size_t>(sample) * width() + j) * grid.n_steps;
    }
    double* row(int sample, int j) {
        return increments.data() + (static_cast<std::size_t>(sample) * width() + j) * grid.n_steps;
    }
    double dw(int sample, int j, int step) const { return row(sample, j)[step]; }
};

// Values laid out as [sample][particle 0..N][time index 0..n_steps].
struct ParticlePaths {
    TimeGrid grid;
    int n_minor = 0;
    int n_samples = 0;
    std::vector<double> values;

    int width() const { return n_minor + 1; }
    const double* row(int sample, int j) const {
        return values.data() + (static_cast<std::size_t>(sample) * width() + j) * (grid.n_steps + 1);
    }
    double* row(int sample, int j) {
        return values.data() + (static_cast<std::size_t>(sample) * width() + j) * (grid.n_steps + 1);
    }
    double at(int sample, int j, int i) const { return row(sample, j)[i]; }
};

struct ConditionalCloud {
    TimeGrid grid;
    std::vector<double> w0_path;   // [n_steps]
    std::vector<double> x0_path;   // [n_steps + 1]
    int m_cloud = 0;
    int n_tagged = 0;
    std::vector<double> cloud;     // [M][n_steps + 1]
    std::vector<double> tagged;    // [n_tagged][n_steps + 1]

    const double* member(int m) const { return cloud.data() + static_cast<std::size_t>(m) * (grid.n_steps + 1); }
    const double* tag(int j) const { return tagged.data() + static_cast<std::size_t>(j) * (grid.n_steps + 1); }
    double member_at(int m, int i) const { return member(m)[i]; }
};

// Sample s uses stream index s and counter slot j for coordinate j, so W^0 and
// the first minors of a bundle do not depend on N.
PathBundle sample_brownian_bundle(const TimeGrid& grid, int n_minor, int n_samples, const RandomStream& stream);

// Weak-formulation states X^j = x_j + W^j - W^j_t on the grid.
ParticlePaths brownian_states(const Scenario& s, int n_minor, const PathBundle& bundle);

ParticlePaths simulate_n_system(const Scenario& s, int n_minor, const PathBundle& bundle);
ParticlePaths simulate_n_system(const Scenario& s, const ForwardCoefficients& c, int n_minor, const PathBundle& bundle);

// Tagged particles take their increments from `tagged_increments` ([n_tagged][n_steps])
// when given, otherwise from the stream.
ConditionalCloud simulate_conditional_mkv(const Scenario& s, const ForwardCoefficients& c, const double* w0_increments,
                                          int n_tagged, int m_cloud, const RandomStream& stream,
                                          const std::vector<const double*>& tagged_increments = {});
ConditionalCloud simulate_conditional_mkv(const Scenario& s, const double* w0_increments, int n_tagged, int m_cloud,
                                          const RandomStream& stream);

// Stream of the conditional cloud attached to outer sample `sample`; shared by
// every study so clouds coincide across N.
RandomStream cloud_stream(const Scenario& s, int sample);

double wasserstein2_1d(std::vector<double> a, std::vector<double> b);

// (1/n) sum tanh(a + x_k) from t_k = tanh(x_k) by the addition formula.
double mean_tanh_shift(double a, const double* t, std::size_t n);

}  // namespace mfg
