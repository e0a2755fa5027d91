#include "mfg/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mfg/error.hpp"

namespace mfg {

double ModelParams::lambda_mod() const { return std::min(alpha, gamma); }
double ModelParams::mu_mod() const { return std::fabs(beta); }

int Scenario::cloud_size(int n_minor) const {
    if (mc_cloud) return *mc_cloud;
    return std::max(256, 16 * n_minor);
}

double Scenario::eps_n(int n_minor) const {
    if (n_minor < 1) fail(ErrorKind::argument, "eps_n: n_minor must be >= 1");
    return eps_coeff * std::pow(static_cast<double>(n_minor), -eps_exponent);
}

std::vector<double> Scenario::minor_starts(int n_minor) const {
    if (minor_inits) {
        if (static_cast<int>(minor_inits->size()) != n_minor) {
            fail(ErrorKind::argument, "minor_inits has length " + std::to_string(minor_inits->size()) +
                                          " but N = " + std::to_string(n_minor));
        }
        return *minor_inits;
    }
    return std::vector<double>(static_cast<std::size_t>(n_minor), xbar_init);
}

double epsilon_n(int n_minor, double eps_coeff) {
    if (n_minor < 1) fail(ErrorKind::argument, "epsilon_n: n_minor must be >= 1");
    return eps_coeff * std::pow(static_cast<double>(n_minor), -0.75);
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Location {
    int line = 0;
    std::string key;
    std::string where() const {
        return line > 0 ? "line " + std::to_string(line) + ", key '" + key + "'" : "key '" + key + "'";
    }
};

double parse_real(const std::string& v, const Location& loc) {
    double out = 0.0;
    const char* b = v.data();
    const char* e = v.data() + v.size();
    auto r = std::from_chars(b, e, out);
    if (r.ec != std::errc() || r.ptr != e || !std::isfinite(out)) {
        fail(ErrorKind::parse, loc.where() + ": expected a finite real, got '" + v + "'");
    }
    return out;
}

long long parse_int(const std::string& v, const Location& loc) {
    long long out = 0;
    const char* b = v.data();
    const char* e = v.data() + v.size();
    auto r = std::from_chars(b, e, out);
    if (r.ec != std::errc() || r.ptr != e) {
        fail(ErrorKind::parse, loc.where() + ": expected an integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& v, const Location& loc) {
    std::uint64_t out = 0;
    const char* b = v.data();
    const char* e = v.data() + v.size();
    auto r = std::from_chars(b, e, out);
    if (r.ec != std::errc() || r.ptr != e) {
        fail(ErrorKind::parse, loc.where() + ": expected an unsigned 64-bit integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& v, const Location& loc) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorKind::parse, loc.where() + ": expected true or false, got '" + v + "'");
}

int parse_positive_int(const std::string& v, const Location& loc) {
    const long long x = parse_int(v, loc);
    if (x < 1 || x > 100000000) fail(ErrorKind::config, loc.where() + ": value out of range (" + v + ")");
    return static_cast<int>(x);
}

struct KeySpec {
    const char* section;
    const char* name;
    bool required;
    std::function<void(Scenario&, const std::string&, const Location&)> set;
};

const std::vector<KeySpec>& schema() {
    static const std::vector<KeySpec> keys = {
        {"time", "t_start", false, [](Scenario& s, const std::string& v, const Location& l) { s.t_start = parse_real(v, l); }},
        {"time", "t_end", true, [](Scenario& s, const std::string& v, const Location& l) { s.t_end = parse_real(v, l); }},
        {"time", "n_steps", true,
         [](Scenario& s, const std::string& v, const Location& l) { s.n_steps = parse_positive_int(v, l); }},
        {"init", "x0_init", false, [](Scenario& s, const std::string& v, const Location& l) { s.x0_init = parse_real(v, l); }},
        {"init", "xbar_init", false,
         [](Scenario& s, const std::string& v, const Location& l) { s.xbar_init = parse_real(v, l); }},
        {"init", "minor_inits", false,
         [](Scenario& s, const std::string& v, const Location& l) {
             std::vector<double> xs;
             std::stringstream ss(v);
             std::string item;
             while (std::getline(ss, item, ',')) xs.push_back(parse_real(trim(item), l));
             if (xs.empty()) fail(ErrorKind::config, l.where() + ": empty list");
             s.minor_inits = std::move(xs);
         }},
        {"model", "dim", false,
         [](Scenario&, const std::string& v, const Location& l) {
             if (parse_int(v, l) != 1) fail(ErrorKind::config, l.where() + ": only dimension 1 is supported");
         }},
        {"model", "alpha", true, [](Scenario& s, const std::string& v, const Location& l) { s.model.alpha = parse_real(v, l); }},
        {"model", "gamma", true, [](Scenario& s, const std::string& v, const Location& l) { s.model.gamma = parse_real(v, l); }},
        {"model", "beta", true, [](Scenario& s, const std::string& v, const Location& l) { s.model.beta = parse_real(v, l); }},
        {"model", "a_lin", false, [](Scenario& s, const std::string& v, const Location& l) { s.model.a_lin = parse_real(v, l); }},
        {"model", "c_lin", false, [](Scenario& s, const std::string& v, const Location& l) { s.model.c_lin = parse_real(v, l); }},
        {"model", "kappa_g", false,
         [](Scenario& s, const std::string& v, const Location& l) { s.model.kappa_g = parse_real(v, l); }},
        {"model", "kappa_b0", false,
         [](Scenario& s, const std::string& v, const Location& l) { s.model.kappa_b0 = parse_real(v, l); }},
        {"model", "kappa_b1", false,
         [](Scenario& s, const std::string& v, const Location& l) { s.model.kappa_b1 = parse_real(v, l); }},
        {"model", "kappa_phi", false,
         [](Scenario& s, const std::string& v, const Location& l) { s.model.kappa_phi = parse_real(v, l); }},
        {"model", "eps_coeff", false,
         [](Scenario& s, const std::string& v, const Location& l) { s.eps_coeff = parse_real(v, l); }},
        {"model", "eps_exponent", false,
         [](Scenario& s, const std::string& v, const Location& l) { s.eps_exponent = parse_real(v, l); }},
        {"model", "nonconforming", false,
         [](Scenario& s, const std::string& v, const Location& l) { s.nonconforming = parse_bool(v, l); }},
        {"model", "sigma_mode", false,
         [](Scenario& s, const std::string& v, const Location& l) {
             if (v == "tanh")
                 s.sigma_mode = SigmaMode::tanh;
             else if (v == "unit")
                 s.sigma_mode = SigmaMode::unit;
             else
                 fail(ErrorKind::parse, l.where() + ": expected tanh or unit, got '" + v + "'");
         }},
        {"mc", "mc_outer", false,
         [](Scenario& s, const std::string& v, const Location& l) { s.mc_outer = parse_positive_int(v, l); }},
        {"mc", "mc_cloud", false,
         [](Scenario& s, const std::string& v, const Location& l) {
             if (v == "auto")
                 s.mc_cloud.reset();
             else
                 s.mc_cloud = parse_positive_int(v, l);
         }},
        {"mc", "quad_order", false,
         [](Scenario& s, const std::string& v, const Location& l) { s.quad_order = parse_positive_int(v, l); }},
        {"seed", "seed", false, [](Scenario& s, const std::string& v, const Location& l) { s.seed = parse_u64(v, l); }},
    };
    return keys;
}

const KeySpec* find_key(const std::string& section, const std::string& key) {
    for (const auto& k : schema()) {
        if (key == k.name && (section.empty() || section == k.section)) return &k;
    }
    return nullptr;
}

std::string fmt_real(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

void check_scenario(const Scenario& s) {
    if (!(s.t_start < s.t_end)) fail(ErrorKind::config, "t_start must be < t_end");
    if (s.n_steps < 1) fail(ErrorKind::config, "n_steps must be >= 1");
    if (s.mc_outer < 2) fail(ErrorKind::config, "mc_outer must be >= 2");
    if (s.mc_cloud && *s.mc_cloud < 2) fail(ErrorKind::config, "mc_cloud must be >= 2");
    if (s.quad_order < 2) fail(ErrorKind::config, "quad_order must be >= 2");
    if (s.quad_order > 200) fail(ErrorKind::config, "quad_order must be <= 200");
    if (!(s.model.alpha > 0.0)) fail(ErrorKind::config, "alpha must be > 0");
    if (!(s.model.gamma > 0.0)) fail(ErrorKind::config, "gamma must be > 0");
    if (!(s.eps_coeff > 0.0)) fail(ErrorKind::config, "eps_coeff must be > 0");
    if (!(s.model.mu_mod() < s.model.lambda_mod())) {
        fail(ErrorKind::config, "mu >= lambda (mu = |beta| = " + fmt_real(s.model.mu_mod()) +
                                    ", lambda = min(alpha, gamma) = " + fmt_real(s.model.lambda_mod()) + ")");
    }
    if (s.eps_exponent != 0.75 && !s.nonconforming) {
        fail(ErrorKind::config, "eps_exponent other than 0.75 requires nonconforming = true");
    }
}

Scenario load_scenario(const std::string& config_text) {
    Scenario s;
    std::set<std::string> seen;
    std::set<std::string> sections = {"time", "init", "model", "mc", "seed"};
    std::string section;
    std::istringstream in(config_text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!sections.count(section)) {
                fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        Location loc{line_no, key};
        if (section.empty()) fail(ErrorKind::parse, loc.where() + ": key outside of any section");
        const KeySpec* spec = find_key(section, key);
        if (!spec) fail(ErrorKind::parse, loc.where() + ": unknown key in section [" + section + "]");
        if (!seen.insert(key).second) fail(ErrorKind::parse, loc.where() + ": duplicate key");
        if (value.empty()) fail(ErrorKind::parse, loc.where() + ": missing value");
        spec->set(s, value, loc);
    }
    for (const auto& k : schema()) {
        if (k.required && !seen.count(k.name)) {
            fail(ErrorKind::config, std::string("missing required key '") + k.name + "' in section [" + k.section + "]");
        }
    }
    check_scenario(s);
    return s;
}

Scenario load_scenario_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::io, "cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return load_scenario(ss.str());
}

void apply_override(Scenario& s, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) fail(ErrorKind::argument, "override '" + assignment + "' is not key=value");
    std::string key = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));
    std::string section;
    const auto dot = key.find('.');
    if (dot != std::string::npos) {
        section = key.substr(0, dot);
        key = key.substr(dot + 1);
    }
    const KeySpec* spec = find_key(section, key);
    if (!spec) fail(ErrorKind::argument, "override references unknown key '" + assignment.substr(0, eq) + "'");
    if (value.empty()) fail(ErrorKind::argument, "override '" + assignment + "' has an empty value");
    spec->set(s, value, Location{0, key});
    check_scenario(s);
}

std::string to_config_text(const Scenario& s) {
    std::ostringstream o;
    o << "[time]\n";
    o << "t_start = " << fmt_real(s.t_start) << "\n";
    o << "t_end = " << fmt_real(s.t_end) << "\n";
    o << "n_steps = " << s.n_steps << "\n";
    o << "[init]\n";
    o << "x0_init = " << fmt_real(s.x0_init) << "\n";
    o << "xbar_init = " << fmt_real(s.xbar_init) << "\n";
    if (s.minor_inits) {
        o << "minor_inits = ";
        for (std::size_t i = 0; i < s.minor_inits->size(); ++i) o << (i ? "," : "") << fmt_real((*s.minor_inits)[i]);
        o << "\n";
    }
    const ModelParams& m = s.model;
    o << "[model]\n";
    o << "alpha = " << fmt_real(m.alpha) << "\n";
    o << "gamma = " << fmt_real(m.gamma) << "\n";
    o << "beta = " << fmt_real(m.beta) << "\n";
    o << "a_lin = " << fmt_real(m.a_lin) << "\n";
    o << "c_lin = " << fmt_real(m.c_lin) << "\n";
    o << "kappa_g = " << fmt_real(m.kappa_g) << "\n";
    o << "kappa_b0 = " << fmt_real(m.kappa_b0) << "\n";
    o << "kappa_b1 = " << fmt_real(m.kappa_b1) << "\n";
    o << "kappa_phi = " << fmt_real(m.kappa_phi) << "\n";
    o << "eps_coeff = " << fmt_real(s.eps_coeff) << "\n";
    o << "eps_exponent = " << fmt_real(s.eps_exponent) << "\n";
    o << "nonconforming = " << (s.nonconforming ? "true" : "false") << "\n";
    o << "sigma_mode = " << (s.sigma_mode == SigmaMode::tanh ? "tanh" : "unit") << "\n";
    o << "[mc]\n";
    o << "mc_outer = " << s.mc_outer << "\n";
    o << "mc_cloud = " << (s.mc_cloud ? std::to_string(*s.mc_cloud) : std::string("auto")) << "\n";
    o << "quad_order = " << s.quad_order << "\n";
    o << "[seed]\n";
    o << "seed = " << s.seed << "\n";
    return o.str();
}

std::string config_digest(const Scenario& s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_config_text(s))));
    return buf;
}

double QuadraticTanhFamily::f(double x0, double x1, double y, double z0, double z1, double u, double v) const {
    return m_.kappa_g * std::tanh(x0 + x1 + y + z0 + z1) + m_.a_lin * u + m_.c_lin * v - 0.5 * m_.alpha * u * u +
           0.5 * m_.gamma * v * v + m_.beta * u * v;
}

double QuadraticTanhFamily::b0(double x0, double x1, double z) const {
    return m_.kappa_b0 * std::tanh(x0 + x1) / (1.0 + std::fabs(z));
}

double QuadraticTanhFamily::b1(double x0, double x1, double z) const {
    return m_.kappa_b1 * std::tanh(x0 + x1) / (1.0 + std::fabs(z));
}

double QuadraticTanhFamily::b1_x(double x0, double x1) const { return m_.kappa_b1 * std::tanh(x0 + x1); }
double QuadraticTanhFamily::b1_z(double z) const { return 1.0 / (1.0 + std::fabs(z)); }

double QuadraticTanhFamily::phi(double x0, double x1) const { return m_.kappa_phi * std::tanh(x0 + x1); }

ForwardCoefficients ForwardCoefficients::from(const Scenario& s) {
    ForwardCoefficients c;
    c.kappa_b0 = s.model.kappa_b0;
    c.kappa_b1 = s.model.kappa_b1;
    c.sigma = s.sigma_mode;
    return c;
}

ValidationReport validate_assumptions(const Scenario& s, int n_probe, const RandomStream& stream) {
    if (n_probe < 10) fail(ErrorKind::argument, "validate_assumptions: n_probe must be >= 10");
    const QuadraticTanhFamily fam(s.model);
    const double lambda = s.model.lambda_mod();
    const double mu = s.model.mu_mod();
    ValidationReport rep;
    auto add = [&](const std::string& rule, const std::string& witness) {
        // One witness per rule keeps the report readable.
        for (const auto& v : rep.violations)
            if (v.rule == rule) return;
        rep.violations.push_back({rule, witness});
    };
    if (!(lambda > 0.0)) {
        add(s.model.alpha > 0.0 ? "Ai v-monotonicity" : "Ai u-monotonicity", "lambda = min(alpha, gamma) = " + fmt_real(lambda));
        if (!(s.model.gamma > 0.0)) add("Ai v-monotonicity", "gamma = " + fmt_real(s.model.gamma));
    }
    if (!(mu < lambda)) add("Aii mu < lambda", "mu = " + fmt_real(mu) + ", lambda = " + fmt_real(lambda));

    StreamReader rd(stream);
    double min_u_mod = INFINITY, min_v_mod = INFINITY, max_cross_u = 0.0, max_cross_v = 0.0;
    double max_f00 = 0.0, max_duf00 = 0.0, max_dvf00 = 0.0, max_f_lip = 0.0;
    double max_b0z = 0.0, max_b1z = 0.0, max_phi_lip = 0.0;
    const double slack = 1e-9;
    for (int k = 0; k < n_probe; ++k) {
        double xi[5], xj[5];
        for (double& c : xi) c = rd.uniform(-5.0, 5.0);
        for (double& c : xj) c = rd.uniform(-5.0, 5.0);
        const double u = rd.uniform(-5.0, 5.0), v = rd.uniform(-5.0, 5.0);
        const double u2 = rd.uniform(-5.0, 5.0), v2 = rd.uniform(-5.0, 5.0);
        auto F = [&](const double* p, double uu, double vv) { return fam.f(p[0], p[1], p[2], p[3], p[4], uu, vv); };
        auto Du = [&](const double* p, double uu, double vv) { return fam.du_f(p[0], p[1], p[2], p[3], p[4], uu, vv); };
        auto Dv = [&](const double* p, double uu, double vv) { return fam.dv_f(p[0], p[1], p[2], p[3], p[4], uu, vv); };

        const double du = u - u2, dv = v - v2;
        const double mono_u = (Du(xi, u, v) - Du(xi, u2, v)) * du;
        const double mono_v = (Dv(xi, u, v) - Dv(xi, u, v2)) * dv;
        min_u_mod = std::min(min_u_mod, -mono_u / (du * du));
        min_v_mod = std::min(min_v_mod, mono_v / (dv * dv));
        if (mono_u > -lambda * du * du + slack * (1.0 + du * du) || !(-mono_u > 0.0)) {
            add("Ai u-monotonicity", "u = " + fmt_real(u) + ", u' = " + fmt_real(u2) + ", <dDu f, du> = " + fmt_real(mono_u));
        }
        if (mono_v < lambda * dv * dv - slack * (1.0 + dv * dv) || !(mono_v > 0.0)) {
            add("Ai v-monotonicity", "v = " + fmt_real(v) + ", v' = " + fmt_real(v2) + ", <dDv f, dv> = " + fmt_real(mono_v));
        }
        const double cross_u = std::fabs(Du(xi, u, v) - Du(xi, u, v2));
        const double cross_v = std::fabs(Dv(xi, u, v) - Dv(xi, u2, v));
        max_cross_u = std::max(max_cross_u, cross_u / std::fabs(dv));
        max_cross_v = std::max(max_cross_v, cross_v / std::fabs(du));
        if (cross_u > mu * std::fabs(dv) + slack * (1.0 + std::fabs(dv))) {
            add("Aii cross bound u", "|Du f(v) - Du f(v')| = " + fmt_real(cross_u) + " > mu |v - v'|");
        }
        if (cross_v > mu * std::fabs(du) + slack * (1.0 + std::fabs(du))) {
            add("Aii cross bound v", "|Dv f(u) - Dv f(u')| = " + fmt_real(cross_v) + " > mu |u - u'|");
        }

        max_f00 = std::max(max_f00, std::fabs(F(xi, 0.0, 0.0)));
        max_duf00 = std::max(max_duf00, std::fabs(Du(xi, 0.0, 0.0)));
        max_dvf00 = std::max(max_dvf00, std::fabs(Dv(xi, 0.0, 0.0)));
        double dxi = 0.0;
        for (int c = 0; c < 5; ++c) dxi += (xi[c] - xj[c]) * (xi[c] - xj[c]);
        dxi = std::sqrt(dxi);
        if (dxi > 0.0) max_f_lip = std::max(max_f_lip, std::fabs(F(xi, u, v) - F(xj, u, v)) / dxi);

        const double z = xi[3];
        const double b0z = std::fabs(fam.b0(xi[0], xi[1], z) * z);
        const double b1z = std::fabs(fam.b1(xi[0], xi[1], z) * z);
        max_b0z = std::max(max_b0z, b0z);
        max_b1z = std::max(max_b1z, b1z);
        if (b0z > std::fabs(s.model.kappa_b0) + slack) add("b0 z bounded", "|b0 z| = " + fmt_real(b0z));
        if (b1z > std::fabs(s.model.kappa_b1) + slack) add("b1 z bounded", "|b1 z| = " + fmt_real(b1z));

        const double dp = std::hypot(xi[0] - xj[0], xi[1] - xj[1]);
        if (dp > 0.0) {
            const double q = std::fabs(fam.phi(xi[0], xi[1]) - fam.phi(xj[0], xj[1])) / dp;
            max_phi_lip = std::max(max_phi_lip, q);
            if (q > std::fabs(s.model.kappa_phi) * std::sqrt(2.0) + slack) add("Phi Lipschitz", "quotient " + fmt_real(q));
        }
    }
    rep.constants["lambda"] = lambda;
    rep.constants["mu"] = mu;
    rep.constants["min_u_modulus"] = min_u_mod;
    rep.constants["min_v_modulus"] = min_v_mod;
    rep.constants["max_cross_u"] = max_cross_u;
    rep.constants["max_cross_v"] = max_cross_v;
    rep.constants["sup_f_at_zero_controls"] = max_f00;
    rep.constants["sup_du_f_at_zero"] = max_duf00;
    rep.constants["sup_dv_f_at_zero"] = max_dvf00;
    rep.constants["f_lipschitz_xi"] = max_f_lip;
    rep.constants["sup_b0_z"] = max_b0z;
    rep.constants["sup_b1_z"] = max_b1z;
    rep.constants["phi_lipschitz"] = max_phi_lip;
    rep.ok = rep.violations.empty();
    return rep;
}

}  // namespace mfg
