#include "runmax/analysis.hpp"
#include "runmax/config.hpp"
#include "runmax/kernel.hpp"
#include "runmax/mc.hpp"
#include "runmax/model.hpp"
#include "runmax/series.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

namespace py = pybind11;
using namespace runmax;

namespace {

model::DiffusionModel make_model(int d, const std::vector<std::string>& drift,
                                 const std::string& diffusion,
                                 const std::vector<std::pair<std::vector<double>, double>>& initial) {
    model::DiffusionModel m;
    m.d = d;
    for (const auto& s : drift) m.drift.push_back(expr::parse(s));
    if (!diffusion.empty() && diffusion != "identity") {
        m.diffusion_kind = model::DiffusionKind::ScalarExpr;
        m.diffusion = expr::parse(diffusion);
    }
    for (const auto& [x, w] : initial) m.initial.push_back({x, w});
    m.check_consistent();
    return m;
}

py::array_t<double> slice_to_numpy(const model::DensityField& f, int s) {
    const auto& g = *f.grid;
    if (f.slices[s].empty()) throw std::invalid_argument("slice not populated");
    if (g.d == 1) {
        py::array_t<double> out({g.nm, g.nx});
        auto r = out.mutable_unchecked<2>();
        for (int i = 0; i < g.nm; ++i)
            for (int j = 0; j < g.nx; ++j) r(i, j) = f.value(s, i, j);
        return out;
    }
    py::array_t<double> out({g.nm, g.nx, g.ny});
    auto r = out.mutable_unchecked<3>();
    for (int i = 0; i < g.nm; ++i)
        for (int j = 0; j < g.nx; ++j)
            for (int k = 0; k < g.ny; ++k) r(i, j, k) = f.value(s, i, j, k);
    return out;
}

} // namespace

PYBIND11_MODULE(_core, mod) {
    mod.doc() = "joint law of a diffusion and the running maximum of its first coordinate";

    py::class_<model::DiffusionModel>(mod, "DiffusionModel")
        .def(py::init(&make_model), py::arg("d"), py::arg("drift"),
             py::arg("diffusion") = std::string("identity"), py::arg("initial"))
        .def_readonly("d", &model::DiffusionModel::d);

    py::class_<model::WedgeGrid, std::shared_ptr<model::WedgeGrid>>(mod, "WedgeGrid")
        .def_readonly("d", &model::WedgeGrid::d)
        .def_readonly("delta", &model::WedgeGrid::delta)
        .def_readonly("nm", &model::WedgeGrid::nm)
        .def_readonly("nx", &model::WedgeGrid::nx)
        .def_readonly("ny", &model::WedgeGrid::ny)
        .def_readonly("times", &model::WedgeGrid::times)
        .def("m", &model::WedgeGrid::m)
        .def("x", &model::WedgeGrid::x)
        .def("y", &model::WedgeGrid::y)
        .def("in_wedge", &model::WedgeGrid::in_wedge)
        .def("weight", &model::WedgeGrid::weight, py::arg("i"), py::arg("j"), py::arg("k") = 0);

    py::class_<model::DensityField>(mod, "DensityField")
        .def_property_readonly("grid",
                               [](const model::DensityField& f) {
                                   return std::const_pointer_cast<model::WedgeGrid>(f.grid);
                               })
        .def("value", &model::DensityField::value, py::arg("s"), py::arg("i"), py::arg("j"),
             py::arg("k") = 0)
        .def("integral", &model::DensityField::integral)
        .def("l1_norm", &model::DensityField::l1_norm)
        .def("slice", &slice_to_numpy, py::arg("s"));

    mod.def(
        "build_grid",
        [](const model::DiffusionModel& m, double delta, int time_steps, double T,
           double eps_trunc) {
            model::GridSpec spec{delta, time_steps};
            return std::make_shared<model::WedgeGrid>(model::build_grid(spec, m, T, eps_trunc));
        },
        py::arg("model"), py::arg("delta"), py::arg("time_steps"), py::arg("T"),
        py::arg("eps_trunc") = 1e-6);

    mod.def(
        "solve_volterra",
        [](const model::DiffusionModel& m, std::shared_ptr<model::WedgeGrid> g, int threads) {
            return series::solve_volterra(m, g, threads);
        },
        py::arg("model"), py::arg("grid"), py::arg("threads") = 0);

    mod.def(
        "assemble_p0",
        [](const model::DiffusionModel& m, std::shared_ptr<model::WedgeGrid> g) {
            return model::assemble_p0(m, g);
        },
        py::arg("model"), py::arg("grid"));

    mod.def(
        "wedge_kernel",
        [](double b, double a, double t) { return kernel::wedge_kernel_all_1d(b, a, t).value; },
        py::arg("b"), py::arg("a"), py::arg("t"));
    mod.def("h_function", &kernel::h_function);

    mod.def(
        "simulate",
        [](const model::DiffusionModel& m, double T, std::int64_t n_paths, double dt,
           std::uint64_t seed, bool bridge, int threads) {
            auto e = mc::simulate(m, T, n_paths, dt, seed, bridge, {}, threads);
            auto vec_to_numpy = [](const std::vector<double>& v,
                                   std::vector<py::ssize_t> shape) {
                py::array_t<double> arr(shape);
                std::memcpy(arr.mutable_data(), v.data(), v.size() * sizeof(double));
                return arr;
            };
            py::dict out;
            out["m"] = vec_to_numpy(e.m, {static_cast<py::ssize_t>(e.n_paths)});
            out["x"] = vec_to_numpy(e.x, {static_cast<py::ssize_t>(e.n_paths),
                                          static_cast<py::ssize_t>(e.d)});
            out["x01"] = vec_to_numpy(e.x01, {static_cast<py::ssize_t>(e.n_paths)});
            return out;
        },
        py::arg("model"), py::arg("T"), py::arg("n_paths"), py::arg("dt"), py::arg("seed"),
        py::arg("bridge") = true, py::arg("threads") = 0);

    mod.def("hitting_density", &analysis::hitting_density, py::arg("field"), py::arg("level"),
            py::arg("t_index"));

    mod.def(
        "density_from_config",
        [](const std::string& json_text) {
            return config::compute_density(config::parse_config_json(json_text)).field;
        },
        py::arg("config_json"));
}
