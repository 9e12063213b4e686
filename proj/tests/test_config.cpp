#include "runmax/config.hpp"
#include "runmax/model.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>

using namespace runmax;

namespace {

const char* kBrownian = R"({
  "schema_version": "1",
  "model": {"d": 1, "drift": ["0"], "initial": [{"x": [0.0]}]},
  "grid": {"delta": 0.1, "time_steps": 4, "T": 1.0}
})";

} // namespace

TEST_CASE("minimal config parses with documented defaults") {
    auto cfg = config::parse_config_json(kBrownian);
    CHECK(cfg.model.d == 1);
    CHECK(cfg.model.identity_diffusion());
    CHECK(cfg.T == 1.0);
    CHECK(cfg.grid.delta == 0.1);
    CHECK(cfg.n_terms == 4);
    CHECK(cfg.series_mode == "volterra");
    CHECK(cfg.mc.n_paths == 100000);
    CHECK(cfg.mc.dt == 1e-3);
    CHECK(cfg.mc.bridge);
    CHECK(cfg.mass_tolerance == 0.02);
}

TEST_CASE("unknown keys are rejected wherever they appear") {
    CHECK_THROWS_AS(config::parse_config_json(R"({
      "schema_version": "1", "surprise": 1,
      "model": {"d": 1, "drift": ["0"], "initial": [{"x": [0.0]}]},
      "grid": {"T": 1.0}})"),
                    config::ConfigError);
    CHECK_THROWS_AS(config::parse_config_json(R"({
      "schema_version": "1",
      "model": {"d": 1, "drift": ["0"], "initial": [{"x": [0.0]}], "color": "red"},
      "grid": {"T": 1.0}})"),
                    config::ConfigError);
    CHECK_THROWS_AS(config::parse_config_json(R"({
      "schema_version": "1",
      "model": {"d": 1, "drift": ["0"], "initial": [{"x": [0.0]}]},
      "grid": {"T": 1.0, "Delta": 0.1}})"),
                    config::ConfigError);
}

TEST_CASE("schema version and expressions are validated eagerly") {
    CHECK_THROWS_AS(config::parse_config_json(R"({
      "schema_version": "2",
      "model": {"d": 1, "drift": ["0"], "initial": [{"x": [0.0]}]},
      "grid": {"T": 1.0}})"),
                    config::ConfigError);
    CHECK_THROWS_AS(config::parse_config_json(R"({
      "schema_version": "1",
      "model": {"d": 1, "drift": ["0 +"], "initial": [{"x": [0.0]}]},
      "grid": {"T": 1.0}})"),
                    config::ConfigError); // parse failures surface as config errors
    CHECK_THROWS_AS(config::parse_config_json("not json at all"), config::ConfigError);
}

TEST_CASE("density pipeline conserves mass for the direct route") {
    auto cfg = config::parse_config_json(kBrownian);
    auto res = config::compute_density(cfg);
    int s = res.field.grid->n_slices() - 1;
    CHECK(res.field.integral(s) == doctest::Approx(1.0).epsilon(1e-2));
    CHECK(!res.series.has_value()); // volterra mode carries no per-term data

    cfg.series_mode = "picard";
    auto res2 = config::compute_density(cfg);
    REQUIRE(res2.series.has_value());
    CHECK(res2.series->terms.size() == static_cast<std::size_t>(cfg.n_terms) + 1);
}

TEST_CASE("density CSV round-trips bit exactly") {
    auto cfg = config::parse_config_json(kBrownian);
    auto res = config::compute_density(cfg);
    std::string path = "/tmp/runmax_test_density.csv";
    config::write_density_csv(res.field, path);
    auto back = config::read_density_csv(path, res.field.grid);
    for (int s = 1; s < res.field.grid->n_slices(); ++s)
        CHECK(back.slices[s] == res.field.slices[s]);
    std::remove(path.c_str());
}

TEST_CASE("scalar diffusion routes through the coordinate change") {
    auto cfg = config::parse_config_json(R"({
      "schema_version": "1",
      "model": {"d": 1, "drift": ["0"], "diffusion": "2", "initial": [{"x": [0.0]}]},
      "grid": {"delta": 0.1, "time_steps": 4, "T": 0.5}
    })");
    auto res = config::compute_density(cfg);
    const auto& g = *res.field.grid;
    int s = g.n_slices() - 1;
    CHECK(res.field.integral(s) == doctest::Approx(1.0).epsilon(1e-2));
    // X = 2W: the density support is twice as wide as the Brownian one
    CHECK(g.m(g.nm - 1) > 2.5);
}
