// mfg command-line front end. Exit codes: 0 success, 1 failed check, 2 usage or config error.
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfg/mfg.h"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failed = 1;
constexpr int exit_usage = 2;

struct Options {
    std::string config;
    int n = 16;
    std::string n_list = "8,16,32,64";
    int reps = 500;
    std::string study;
    int perturbations = 50;
    double delta = 0.1;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::string> overrides;
    int probes = 1000;
    bool crosscheck = false;
};

using ScenarioPtr = std::unique_ptr<mfg_scenario, decltype(&mfg_scenario_free)>;
using ResultPtr = std::unique_ptr<mfg_result, decltype(&mfg_result_free)>;

int status_exit(mfg_status st) {
    switch (st) {
        case MFG_OK: return exit_ok;
        case MFG_ERR_PARSE:
        case MFG_ERR_CONFIG:
        case MFG_ERR_ARGUMENT:
        case MFG_ERR_IO: return exit_usage;
        default: return exit_failed;
    }
}

int report_error(mfg_status st) {
    std::cerr << "mfg: " << mfg_status_name(st) << ": " << mfg_last_error() << "\n";
    return status_exit(st);
}

std::vector<int> parse_n_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        const int v = std::stoi(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument(text);
    return out;
}

// "r.json" -> r.json and r.csv; "r.csv" -> r.csv and r.json; anything else gains both suffixes.
std::pair<std::string, std::string> output_paths(const std::string& out) {
    auto ends = [&](const std::string& suf) {
        return out.size() >= suf.size() && out.compare(out.size() - suf.size(), suf.size(), suf) == 0;
    };
    std::string stem = out;
    if (ends(".json")) stem = out.substr(0, out.size() - 5);
    else if (ends(".csv")) stem = out.substr(0, out.size() - 4);
    return {stem + ".json", stem + ".csv"};
}

bool writable(const std::string& path) {
    std::ofstream f(path, std::ios::app);
    return static_cast<bool>(f);
}

bool write_file(const std::string& path, const char* text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << text;
    return static_cast<bool>(f);
}

void print_summary(const std::string& cmd, const mfg_result* r) {
    const auto j = nlohmann::json::parse(mfg_result_json(r));
    if (cmd == "validate") {
        if (mfg_result_pass(r)) {
            std::cout << "ok\n";
        } else {
            for (const auto& v : j["failures"]) {
                std::cout << "violation: " << v["rule"].get<std::string>() << ": " << v["witness"].get<std::string>() << "\n";
            }
        }
        for (const auto& [k, v] : j["constants"].items()) std::cout << k << " = " << v.dump() << "\n";
        return;
    }
    if (cmd == "converge") {
        std::cout << j["study"].get<std::string>() << ": slope " << j["slope"].dump() << " ci " << j["ci"].dump() << " "
                  << (mfg_result_pass(r) ? "PASS" : "FAIL") << "\n";
        for (const auto& f : j["failures"]) std::cout << "  failure: " << f.get<std::string>() << "\n";
        return;
    }
    if (cmd == "verify") {
        std::cout << "verify: " << j["checks"].size() << " checks, " << j["failures"].size() << " violations "
                  << (mfg_result_pass(r) ? "PASS" : "FAIL") << "\n";
        return;
    }
    std::cout << j.dump(2) << "\n";
}

int run(const std::string& cmd, const Options& o) {
    mfg_scenario* raw = nullptr;
    mfg_status st = mfg_scenario_load_file(o.config.c_str(), &raw);
    if (st != MFG_OK) return report_error(st);
    ScenarioPtr sc(raw, mfg_scenario_free);
    for (const std::string& ov : o.overrides) {
        st = mfg_scenario_override(sc.get(), ov.c_str());
        if (st != MFG_OK) return report_error(st);
    }
    if (o.seed_set) {
        st = mfg_scenario_set_seed(sc.get(), o.seed);
        if (st != MFG_OK) return report_error(st);
    }
    std::string json_path, csv_path;
    if (!o.out.empty()) {
        std::tie(json_path, csv_path) = output_paths(o.out);
        if (!writable(json_path) || !writable(csv_path)) {
            std::cerr << "mfg: cannot write output '" << o.out << "'\n";
            return exit_usage;
        }
    }

    mfg_result* res = nullptr;
    if (cmd == "validate") {
        st = mfg_run_validate(sc.get(), o.probes, &res);
    } else if (cmd == "forward") {
        st = mfg_run_forward(sc.get(), o.n, &res);
    } else if (cmd == "bsde") {
        st = mfg_run_bsde(sc.get(), o.n, &res);
    } else if (cmd == "saddle") {
        st = mfg_run_saddle(sc.get(), o.n, &res);
    } else if (cmd == "limit") {
        st = o.crosscheck ? mfg_run_crosscheck(sc.get(), &res) : mfg_run_limit(sc.get(), &res);
    } else if (cmd == "converge") {
        std::vector<int> ns;
        try {
            ns = parse_n_list(o.n_list);
        } catch (const std::exception&) {
            std::cerr << "mfg: --n-list must be a comma-separated list of integers\n";
            return exit_usage;
        }
        st = mfg_run_converge(sc.get(), o.study.c_str(), ns.data(), ns.size(), o.reps, &res);
    } else if (cmd == "verify") {
        st = mfg_run_verify(sc.get(), o.n, o.perturbations, o.delta, &res);
    }
    if (st != MFG_OK) return report_error(st);
    ResultPtr result(res, mfg_result_free);

    if (!o.out.empty()) {
        if (!write_file(json_path, mfg_result_json(res)) || !write_file(csv_path, mfg_result_csv(res))) {
            std::cerr << "mfg: failed writing '" << o.out << "'\n";
            return exit_usage;
        }
        print_summary(cmd, res);
    } else if (cmd == "validate" || cmd == "converge" || cmd == "verify") {
        print_summary(cmd, res);
    } else {
        std::cout << mfg_result_json(res);
    }
    return mfg_result_pass(res) ? exit_ok : exit_failed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Major-minor mean field game solver"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("config", o.config, "Scenario config file")->required();
        sub->add_option("--out", o.out, "Output path; JSON and CSV are written side by side");
        sub->add_option("--seed", o.seed, "Seed override")->each([&](const std::string&) { o.seed_set = true; });
        sub->add_option("--override", o.overrides, "key=value, applied after the file")->allow_extra_args(false);
    };

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"validate", "Check assumptions on random probes"},
        {"forward", "Simulate the uncontrolled N-particle system"},
        {"bsde", "Solve the uncontrolled N and limit BSDEs on shared paths"},
        {"saddle", "Solve the N-player saddle BSDE"},
        {"limit", "Solve the limit BSDE on a grid"},
        {"converge", "Run a convergence study"},
        {"verify", "Check saddle inequalities and uniqueness by perturbation"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        common(sub);
        if (name == "validate") sub->add_option("--probes", o.probes, "Number of random probes");
        if (name == "forward" || name == "bsde" || name == "saddle" || name == "verify") {
            sub->add_option("--n", o.n, "Number of minor players");
        }
        if (name == "limit") sub->add_flag("--crosscheck", o.crosscheck, "Compare the game BSDE at the saddle with the grid");
        if (name == "converge") {
            sub->add_option("--study", o.study, "forward, bsde, saddle or control")
                ->required()
                ->check(CLI::IsMember({"forward", "bsde", "saddle", "control"}));
            sub->add_option("--n-list", o.n_list, "Comma-separated ascending N values");
            sub->add_option("--reps", o.reps, "Outer samples per N");
        }
        if (name == "verify") {
            sub->add_option("--perturbations", o.perturbations, "Number of perturbations");
            sub->add_option("--delta", o.delta, "Perturbation magnitude");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    return run(cmd, o);
}
