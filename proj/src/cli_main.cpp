#include "runmax/analysis.hpp"
#include "runmax/config.hpp"
#include "runmax/lamperti.hpp"
#include "runmax/mc.hpp"
#include "runmax/model.hpp"
#include "runmax/series.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>

namespace {

using nlohmann::json;
using namespace runmax;

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config::ConfigError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

int cmd_density(const config::RunConfig& cfg, const std::string& out_dir) {
    auto res = config::compute_density(cfg);
    config::write_density_csv(res.field, out_dir + "/density.csv");

    json rep;
    rep["schema_version"] = "1";
    rep["mode"] = cfg.series_mode;
    json masses = json::array();
    for (int s = 1; s < res.field.grid->n_slices(); ++s)
        masses.push_back(res.field.integral(s));
    rep["slice_mass"] = masses;
    if (res.series) {
        const auto& sol = *res.series;
        json norms = json::array();
        for (std::size_t n = 0; n < sol.terms.size(); ++n)
            norms.push_back(sol.term_norms[n].back());
        rep["term_norms"] = norms;
        rep["fitted_C"] = sol.report.fitted_C;
        rep["term_bounds"] = sol.report.term_bounds;
        rep["next_term_bound"] = sol.report.next_term_bound;
        rep["tail_bound"] = sol.report.tail_bound;
    }
    write_json(rep, out_dir + "/density_report.json");
    return 0;
}

int cmd_simulate(const config::RunConfig& cfg, const std::string& out_dir) {
    auto ens = mc::simulate(cfg.model, cfg.T, cfg.mc.n_paths, cfg.mc.dt, cfg.mc.seed,
                            cfg.mc.bridge, {}, cfg.threads);
    mc::save_binary(ens, out_dir + "/ensemble.bin");
    mc::save_csv(ens, out_dir + "/ensemble.csv");

    json rep;
    rep["schema_version"] = "1";
    rep["n_paths"] = ens.n_paths;
    rep["seed"] = ens.seed;
    rep["bridge"] = ens.bridge;
    auto [em, ese] = mc::estimate_expectation(ens, [](double m, const double*) { return m; });
    rep["mean_max"] = em;
    rep["mean_max_se"] = ese;
    json levels = json::array();
    for (double a : cfg.summary_levels) {
        auto [p, se] = mc::estimate_expectation(
            ens, [a](double m, const double*) { return m >= a ? 1.0 : 0.0; });
        levels.push_back({{"level", a}, {"prob", p}, {"se", se}});
    }
    rep["exceedance"] = levels;
    write_json(rep, out_dir + "/simulate_report.json");
    return 0;
}

int cmd_hitting(const config::RunConfig& cfg, const std::string& out_dir) {
    auto res = config::compute_density(cfg);
    const auto& g = *res.field.grid;
    std::FILE* f = std::fopen((out_dir + "/hitting.csv").c_str(), "w");
    if (!f) throw config::ConfigError("cannot open for writing: " + out_dir + "/hitting.csv");
    std::fprintf(f, "t,value\n");
    double integral = 0.0, prev = 0.0;
    for (int s = 1; s < g.n_slices(); ++s) {
        double v = analysis::hitting_density(res.field, cfg.hitting_level, s);
        std::fprintf(f, "%.17g,%.17g\n", g.times[s], v);
        integral += 0.5 * (v + prev) * (g.times[s] - g.times[s - 1]);
        prev = v;
    }
    std::fclose(f);
    json rep;
    rep["schema_version"] = "1";
    rep["level"] = cfg.hitting_level;
    rep["integral"] = integral;
    write_json(rep, out_dir + "/hitting_report.json");
    return 0;
}

int cmd_slope(const config::RunConfig& cfg, const std::string& out_dir) {
    auto res = config::compute_density(cfg);
    auto rep = analysis::local_slope(cfg.model, cfg.slope_psi, cfg.T, cfg.slope_h, res.field,
                                     cfg.mc.n_paths, cfg.mc.dt, cfg.mc.seed, cfg.threads);
    json out;
    out["schema_version"] = "1";
    out["target"] = rep.target;
    json rows = json::array();
    for (const auto& r : rep.rows)
        rows.push_back({{"h", r.h}, {"estimate", r.estimate}, {"se", r.se}});
    out["rows"] = rows;
    write_json(out, out_dir + "/slope_report.json");
    return 0;
}

int cmd_check(const config::RunConfig& cfg, const std::string& out_dir) {
    json rep;
    rep["schema_version"] = "1";
    json checks = json::array();
    bool all_pass = true;
    auto add = [&](const std::string& name, bool pass, json detail) {
        detail["name"] = name;
        detail["pass"] = pass;
        checks.push_back(detail);
        all_pass = all_pass && pass;
    };

    auto res = config::compute_density(cfg);
    const auto& g = *res.field.grid;
    int last = g.n_slices() - 1;

    double mass = res.field.integral(last);
    add("mass_conservation", std::fabs(mass - 1.0) <= cfg.mass_tolerance,
        {{"mass", mass}, {"tolerance", cfg.mass_tolerance}});

    double min_v = 0.0;
    for (double v : res.field.slices[last]) min_v = std::min(min_v, v);
    add("near_nonnegative", min_v >= -5e-3, {{"min_value", min_v}});

    double hit_int = 0.0, prev = 0.0;
    for (int s = 1; s <= last; ++s) {
        double v = analysis::hitting_density(res.field, cfg.hitting_level, s);
        hit_int += 0.5 * (v + prev) * (g.times[s] - g.times[s - 1]);
        prev = v;
    }
    add("hitting_mass_bound", hit_int <= 1.0 + cfg.mass_tolerance,
        {{"integral", hit_int}, {"level", cfg.hitting_level}});

    if (cfg.model.identity_diffusion()) {
        // weak identity: allowance is MC 3 sigma + a series-accuracy budget
        const double truncation = 2e-3;
        auto w = mc::weak_identity_gap(cfg.model, cfg.check_observable, cfg.T, res.field,
                                       truncation, cfg.mc.n_paths, cfg.mc.dt, cfg.mc.seed,
                                       cfg.threads);
        double allow = 3.0 * w.mc_sigma + w.truncation + w.quad_tol;
        add("weak_identity", std::fabs(w.gap) <= allow,
            {{"gap", w.gap},
             {"allowance", allow},
             {"lhs", w.lhs},
             {"initial_term", w.init_term},
             {"generator_term", w.l_term},
             {"boundary_term", w.boundary_term}});

        if (cfg.model.drift_override.empty()) {
            auto ri = analysis::fp_interior_residual(res.field, last, cfg.model);
            auto rb = analysis::boundary_residual(res.field, last, cfg.model);
            rep["interior_residual"] = json::parse(ri.to_json());
            rep["boundary_residual"] = json::parse(rb.to_json());
        }
    }

    rep["checks"] = checks;
    rep["all_pass"] = all_pass;
    write_json(rep, out_dir + "/check_report.json");
    return all_pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint running-maximum density toolkit"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand name

    std::string config_path, out_dir = ".";
    int threads = -1;
    std::uint64_t seed_override = 0;
    bool have_seed_override = false;

    app.add_option("--config", config_path, "run configuration (JSON)")->required();
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads, "worker thread count (0: all cores)");
    app.add_option("--seed-override", seed_override, "replace the configured RNG seed")
        ->each([&](const std::string&) { have_seed_override = true; });

    auto* density = app.add_subcommand("density", "compute the joint density");
    auto* simulate = app.add_subcommand("simulate", "sample paths of (M, X)");
    auto* check = app.add_subcommand("check", "run the validation suite");
    auto* hitting = app.add_subcommand("hitting", "first-passage density at a level");
    auto* slope = app.add_subcommand("slope", "small-window slope estimator");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = config::load_config(config_path);
        if (threads >= 0) cfg.threads = threads;
        if (have_seed_override) cfg.mc.seed = seed_override;

        if (density->parsed()) return cmd_density(cfg, out_dir);
        if (simulate->parsed()) return cmd_simulate(cfg, out_dir);
        if (check->parsed()) return cmd_check(cfg, out_dir);
        if (hitting->parsed()) return cmd_hitting(cfg, out_dir);
        if (slope->parsed()) return cmd_slope(cfg, out_dir);
        return 2;
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const model::ModelError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const expr::ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
}
