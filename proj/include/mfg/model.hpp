#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfg/rng.hpp"

namespace mfg {

struct ModelParams {
    double alpha = 2.0;
    double gamma = 2.0;
    double beta = 1.0;
    double a_lin = 0.0;
    double c_lin = 0.0;
    double kappa_g = 0.0;
    double kappa_b0 = 0.0;
    double kappa_b1 = 0.0;
    double kappa_phi = 0.0;

    double lambda_mod() const;
    double mu_mod() const;
};

// Diffusion of the uncontrolled forward system: unit, or 1 + tanh(sum of arguments)/2.
enum class SigmaMode { unit, tanh };

struct Scenario {
    double t_start = 0.0;
    double t_end = 1.0;
    int n_steps = 16;
    double x0_init = 0.0;
    double xbar_init = 0.0;
    std::optional<std::vector<double>> minor_inits;
    ModelParams model;
    double eps_coeff = 1.0;
    double eps_exponent = 0.75;
    bool nonconforming = false;
    SigmaMode sigma_mode = SigmaMode::tanh;
    int mc_outer = 1000;
    std::optional<int> mc_cloud;  // absent: max(256, 16 N)
    int quad_order = 40;
    std::uint64_t seed = 1;

    double horizon() const { return t_end - t_start; }
    double step() const { return horizon() / n_steps; }
    int cloud_size(int n_minor) const;
    double eps_n(int n_minor) const;
    // x_1..x_N; checks the length of minor_inits when present.
    std::vector<double> minor_starts(int n_minor) const;
};

Scenario load_scenario(const std::string& config_text);
Scenario load_scenario_file(const std::string& path);
// Applies "key=value" or "section.key=value"; throws on unknown keys.
void apply_override(Scenario& s, const std::string& assignment);
// Range and assumption checks performed at load time.
void check_scenario(const Scenario& s);
// Canonical text form, loadable by load_scenario.
std::string to_config_text(const Scenario& s);
std::string config_digest(const Scenario& s);

double epsilon_n(int n_minor, double eps_coeff);

// Coefficient set of the game. The quadratic-tanh family is the built-in one.
class Coefficients {
public:
    virtual ~Coefficients() = default;

    virtual double f(double x0, double x1, double y, double z0, double z1, double u, double v) const = 0;
    virtual double du_f(double x0, double x1, double y, double z0, double z1, double u, double v) const = 0;
    virtual double dv_f(double x0, double x1, double y, double z0, double z1, double u, double v) const = 0;
    virtual double dvv_f(double x0, double x1, double y, double z0, double z1, double u, double v) const = 0;
    virtual double b0(double x0, double x1, double z) const = 0;
    virtual double b1(double x0, double x1, double z) const = 0;
    virtual double phi(double x0, double x1) const = 0;

    // b1(x0,x1,z) = b1_x(x0,x1) * b1_z(z) when separable.
    virtual bool b1_separable() const { return false; }
    virtual double b1_x(double, double) const { return 0.0; }
    virtual double b1_z(double) const { return 0.0; }

    // Closed-form inner minimizer exists: v = -(c + beta u + B) / gamma.
    virtual bool quadratic_in_controls() const { return false; }
    virtual double lambda_mod() const = 0;
    virtual double mu_mod() const = 0;
};

class QuadraticTanhFamily final : public Coefficients {
public:
    explicit QuadraticTanhFamily(const ModelParams& m) : m_(m) {}

    const ModelParams& params() const { return m_; }

    double f(double x0, double x1, double y, double z0, double z1, double u, double v) const override;
    double du_f(double, double, double, double, double, double u, double v) const override {
        return m_.a_lin - m_.alpha * u + m_.beta * v;
    }
    double dv_f(double, double, double, double, double, double u, double v) const override {
        return m_.c_lin + m_.gamma * v + m_.beta * u;
    }
    double dvv_f(double, double, double, double, double, double, double) const override { return m_.gamma; }
    double b0(double x0, double x1, double z) const override;
    double b1(double x0, double x1, double z) const override;
    double phi(double x0, double x1) const override;

    bool b1_separable() const override { return true; }
    double b1_x(double x0, double x1) const override;
    double b1_z(double z) const override;

    bool quadratic_in_controls() const override { return true; }
    double lambda_mod() const override { return m_.lambda_mod(); }
    double mu_mod() const override { return m_.mu_mod(); }

private:
    ModelParams m_;
};

// Coefficients of the uncontrolled forward system and its BSDE (controls frozen at 0).
struct ForwardCoefficients {
    double kappa_b0 = 0.0;
    double kappa_b1 = 0.0;
    SigmaMode sigma = SigmaMode::tanh;

    static ForwardCoefficients from(const Scenario& s);
    bool degenerate() const { return kappa_b0 == 0.0 && kappa_b1 == 0.0 && sigma == SigmaMode::unit; }
};

struct Violation {
    std::string rule;
    std::string witness;
};

struct ValidationReport {
    bool ok = true;
    std::vector<Violation> violations;
    std::map<std::string, double> constants;
};

ValidationReport validate_assumptions(const Scenario& s, int n_probe, const RandomStream& stream);

}  // namespace mfg
