#include "runmax/config.hpp"

#include "runmax/lamperti.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace runmax::config {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const char* where,
                    std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(std::string("unknown key \"") + key + "\" in " + where);
    }
}

} // namespace

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_json(text);
}

RunConfig parse_config_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    try {
        reject_unknown(j, "config root",
                       {"schema_version", "model", "grid", "series", "mc", "threads", "hitting",
                        "slope", "check", "simulate"});
        if (j.value("schema_version", "") != "1")
            throw ConfigError("schema_version must be \"1\"");

        RunConfig cfg;
        const auto& jm = j.at("model");
        reject_unknown(jm, "model", {"d", "drift", "diffusion", "initial"});
        cfg.model.d = jm.at("d").get<int>();
        for (const auto& s : jm.at("drift"))
            cfg.model.drift.push_back(expr::parse(s.get<std::string>()));
        std::string diff = jm.value("diffusion", "identity");
        if (diff != "identity") {
            cfg.diffusion_expr = diff;
            cfg.model.diffusion_kind = model::DiffusionKind::ScalarExpr;
            cfg.model.diffusion = expr::parse(diff);
        }
        for (const auto& p : jm.at("initial")) {
            reject_unknown(p, "initial point", {"x", "weight"});
            model::InitialPoint pt;
            pt.x = p.at("x").get<std::vector<double>>();
            pt.weight = p.value("weight", 1.0);
            cfg.model.initial.push_back(pt);
        }
        cfg.model.check_consistent();

        const auto& jg = j.at("grid");
        reject_unknown(jg, "grid", {"delta", "time_steps", "T", "eps_trunc"});
        cfg.grid.delta = jg.value("delta", 0.05);
        cfg.grid.time_steps = jg.value("time_steps", 16);
        cfg.T = jg.at("T").get<double>();
        cfg.eps_trunc = jg.value("eps_trunc", 1e-6);

        if (j.contains("series")) {
            const auto& js = j.at("series");
            reject_unknown(js, "series", {"n_terms", "mode"});
            cfg.n_terms = js.value("n_terms", 4);
            cfg.series_mode = js.value("mode", "volterra");
            if (cfg.series_mode != "volterra" && cfg.series_mode != "picard")
                throw ConfigError("series.mode must be \"volterra\" or \"picard\"");
        }
        if (j.contains("mc")) {
            const auto& jc = j.at("mc");
            reject_unknown(jc, "mc", {"n_paths", "dt", "seed", "bridge"});
            cfg.mc.n_paths = jc.value("n_paths", std::int64_t{100000});
            cfg.mc.dt = jc.value("dt", 1e-3);
            cfg.mc.seed = jc.value("seed", std::uint64_t{1});
            cfg.mc.bridge = jc.value("bridge", true);
            if (cfg.mc.n_paths < 1) throw ConfigError("mc.n_paths must be positive");
            if (!(cfg.mc.dt > 0.0)) throw ConfigError("mc.dt must be positive");
        }
        cfg.threads = j.value("threads", 0);
        if (j.contains("hitting")) {
            const auto& jh = j.at("hitting");
            reject_unknown(jh, "hitting", {"level"});
            cfg.hitting_level = jh.at("level").get<double>();
        }
        if (j.contains("slope")) {
            const auto& js = j.at("slope");
            reject_unknown(js, "slope", {"psi", "h_list"});
            cfg.slope_psi = js.value("psi", "1");
            expr::parse(cfg.slope_psi);
            if (js.contains("h_list")) cfg.slope_h = js.at("h_list").get<std::vector<double>>();
            if (cfg.slope_h.empty()) throw ConfigError("slope.h_list must not be empty");
        }
        if (j.contains("check")) {
            const auto& jk = j.at("check");
            reject_unknown(jk, "check", {"observable", "mass_tolerance"});
            cfg.check_observable = jk.value("observable", "x1");
            expr::parse(cfg.check_observable);
            cfg.mass_tolerance = jk.value("mass_tolerance", 0.02);
        }
        if (j.contains("simulate")) {
            const auto& js = j.at("simulate");
            reject_unknown(js, "simulate", {"levels"});
            if (js.contains("levels"))
                cfg.summary_levels = js.at("levels").get<std::vector<double>>();
        }
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config schema error: ") + e.what());
    } catch (const expr::ParseError& e) {
        throw ConfigError(std::string("config expression does not parse: ") + e.what());
    }
}

DensityResult compute_density(const RunConfig& cfg) {
    const bool volterra = cfg.series_mode == "volterra";
    DensityResult out;

    if (cfg.model.identity_diffusion()) {
        auto grid = std::make_shared<const model::WedgeGrid>(
            model::build_grid(cfg.grid, cfg.model, cfg.T, cfg.eps_trunc));
        if (volterra) {
            out.field = series::solve_volterra(cfg.model, grid, cfg.threads);
        } else {
            out.series = series::solve_series(cfg.model, grid, cfg.n_terms, cfg.threads);
            out.field = out.series->partial_sum;
        }
        return out;
    }

    if (cfg.model.d != 1)
        throw model::ModelError("non-identity diffusion requires d = 1");

    // coordinate-change route: solve with unit diffusion in y = phi(x),
    // pull the density back to x coordinates
    double sup_A = 0.0;
    bool constant_A = true;
    double a0 = cfg.model.diffusion->eval({cfg.model.initial.front().x[0]});
    {
        // provisional spatial extent to size the map domain
        for (int s = 0; s <= 64; ++s) {
            double x = -32.0 + s;
            double a = cfg.model.diffusion->eval({x});
            sup_A = std::max(sup_A, std::fabs(a));
            constant_A = constant_A && std::fabs(a - a0) < 1e-13;
        }
    }
    auto x_grid_raw =
        model::build_grid(cfg.grid, cfg.model, cfg.T * sup_A * sup_A, cfg.eps_trunc);
    double dom_lo = x_grid_raw.x(0) - 1.0, dom_hi = x_grid_raw.m(x_grid_raw.nm - 1) + 1.0;
    auto map = lamperti::build_map(*cfg.model.diffusion, dom_lo, dom_hi);
    auto ym = lamperti::transform_model(cfg.model, map);

    model::GridSpec y_spec = cfg.grid;
    if (constant_A) y_spec.delta = cfg.grid.delta / a0; // x nodes map onto y nodes
    auto y_grid = std::make_shared<const model::WedgeGrid>(
        model::build_grid(y_spec, ym, cfg.T, cfg.eps_trunc));

    model::DensityField pY;
    if (volterra) {
        pY = series::solve_volterra(ym, y_grid, cfg.threads);
    } else {
        out.series = series::solve_series(ym, y_grid, cfg.n_terms, cfg.threads);
        pY = out.series->partial_sum;
    }

    x_grid_raw.times = y_grid->times;
    auto x_grid = std::make_shared<const model::WedgeGrid>(std::move(x_grid_raw));
    out.field = lamperti::pullback_density(pY, map, x_grid);
    return out;
}

void write_density_csv(const model::DensityField& f, const std::string& path) {
    const auto& g = *f.grid;
    std::FILE* out = std::fopen(path.c_str(), "w");
    if (!out) throw ConfigError("cannot open for writing: " + path);
    std::fprintf(out, g.d == 1 ? "t,m,x1,value\n" : "t,m,x1,x2,value\n");
    for (int s = 1; s < g.n_slices(); ++s) {
        if (f.slices[s].empty()) continue;
        for (int i = 0; i < g.nm; ++i)
            for (int j = 0; j < g.nx; ++j) {
                if (!g.in_wedge(i, j)) continue;
                for (int k = 0; k < g.ny; ++k) {
                    if (g.d == 1)
                        std::fprintf(out, "%.17g,%.17g,%.17g,%.17g\n", g.times[s], g.m(i), g.x(j),
                                     f.value(s, i, j));
                    else
                        std::fprintf(out, "%.17g,%.17g,%.17g,%.17g,%.17g\n", g.times[s], g.m(i),
                                     g.x(j), g.y(k), f.value(s, i, j, k));
                }
            }
    }
    std::fclose(out);
}

model::DensityField read_density_csv(const std::string& path,
                                     std::shared_ptr<const model::WedgeGrid> grid) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open: " + path);
    const auto& g = *grid;
    model::DensityField f;
    f.grid = grid;
    f.tag = model::DensityField::Tag::PartialSum;
    f.slices.resize(g.times.size());
    for (int s = 1; s < g.n_slices(); ++s) f.slices[s].assign(g.slice_size(), 0.0);

    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        double t, m, x1, x2 = 0.0, v;
        int got = g.d == 1 ? std::sscanf(line.c_str(), "%lg,%lg,%lg,%lg", &t, &m, &x1, &v)
                           : std::sscanf(line.c_str(), "%lg,%lg,%lg,%lg,%lg", &t, &m, &x1, &x2, &v);
        if (got != (g.d == 1 ? 4 : 5)) throw ConfigError("malformed CSV row: " + line);
        int s = static_cast<int>(std::llround(t / (g.times[1] - g.times[0])));
        int i = static_cast<int>(std::llround((m - g.m_lo) / g.delta));
        int j = static_cast<int>(std::llround((x1 - g.x_lo) / g.delta));
        int k = g.d == 2 ? static_cast<int>(std::llround((x2 - g.y_lo) / g.delta)) : 0;
        if (s < 1 || s >= g.n_slices() || i < 0 || i >= g.nm || j < 0 || j >= g.nx || k < 0 ||
            k >= g.ny)
            throw ConfigError("CSV row outside the grid: " + line);
        f.slices[s][g.idx(i, j, k)] = v;
    }
    return f;
}

} // namespace runmax::config
