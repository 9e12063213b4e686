#pragma once

#include "runmax/model.hpp"
#include "runmax/series.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace runmax::config {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct McParams {
    std::int64_t n_paths = 100000;
    double dt = 1e-3;
    std::uint64_t seed = 1;
    bool bridge = true;
};

/// Fully validated run description: schema version "1", unknown keys are
/// rejected, all expressions parsed eagerly.
struct RunConfig {
    model::DiffusionModel model;
    std::string diffusion_expr; // empty: identity

    model::GridSpec grid;
    double T = 1.0;
    double eps_trunc = 1e-6;

    int n_terms = 4;
    std::string series_mode = "volterra"; // or "picard"

    McParams mc;
    int threads = 0;

    double hitting_level = 1.0;
    std::string slope_psi = "1";
    std::vector<double> slope_h = {1e-1, 1e-2, 1e-3};

    std::string check_observable = "x1";
    double mass_tolerance = 0.02;
    std::vector<double> summary_levels = {1.0};
};

RunConfig load_config(const std::string& path);
RunConfig parse_config_json(const std::string& text);

/// Density pipeline: identity models solve directly, scalar-A models route
/// through the coordinate change and pull the density back.
struct DensityResult {
    model::DensityField field;
    std::optional<series::SeriesSolution> series; // picard mode only
};

DensityResult compute_density(const RunConfig& cfg);

void write_density_csv(const model::DensityField& f, const std::string& path);

/// Re-load a density CSV onto its grid; %.17g round-trips doubles exactly.
model::DensityField read_density_csv(const std::string& path,
                                     std::shared_ptr<const model::WedgeGrid> grid);

} // namespace runmax::config
