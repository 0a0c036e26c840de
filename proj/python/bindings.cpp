#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "ptmap/assimilation.hpp"
#include "ptmap/triangular_map.hpp"
#include "ptmap/wavy_study.hpp"

namespace py = pybind11;
using namespace ptmap;

namespace {

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

std::span<const double> as_span(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

py::dict report_dict(const FitReport& r) {
    nlohmann::json j = r;
    return to_python(j);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Adaptive P-spline triangular transport maps.";

    py::class_<SplineBasis>(m, "SplineBasis")
        .def(py::init([](const std::vector<double>& real_knots, int degree) {
                 return SplineBasis(KnotVector(real_knots, degree));
             }),
             py::arg("real_knots"), py::arg("degree") = 3)
        .def_property_readonly("size", &SplineBasis::size)
        .def_property_readonly("degree", &SplineBasis::degree)
        .def_property_readonly("real_knots", [](const SplineBasis& b) { return b.knots().real(); })
        .def("eval", &SplineBasis::eval, py::arg("x"))
        .def("eval_deriv", &SplineBasis::eval_deriv, py::arg("x"))
        .def("eval_matrix", [](const SplineBasis& b, const std::vector<double>& xs) { return b.eval_matrix(xs); })
        .def("deriv_matrix", [](const SplineBasis& b, const std::vector<double>& xs) { return b.deriv_matrix(xs); })
        .def("greville", &SplineBasis::greville);

    m.def(
        "make_knots",
        [](const std::vector<double>& samples, int degree, std::optional<int> num_knots) {
            return SplineBasis(make_knots(samples, degree, num_knots));
        },
        py::arg("samples"), py::arg("degree") = 3, py::arg("num_knots") = py::none(),
        "Basis on knots spread between the 10% and 90% sample quantiles.");

    py::class_<LogDensity>(m, "LogDensity")
        .def_readonly("value", &LogDensity::value)
        .def_readonly("valid", &LogDensity::valid);

    py::class_<TriangularMap>(m, "TriangularMap")
        .def_property_readonly("dim", &TriangularMap::dim)
        .def_property_readonly("names", &TriangularMap::names)
        .def_property_readonly("block_split", &TriangularMap::block_split)
        .def(
            "pushforward", [](const TriangularMap& t, const Eigen::VectorXd& x) { return t.pushforward(as_span(x)); },
            py::arg("x"))
        .def(
            "pushforward_ensemble",
            [](const TriangularMap& t, const Eigen::MatrixXd& x) { return t.pushforward_ensemble(x); }, py::arg("x"))
        .def(
            "inverse", [](const TriangularMap& t, const Eigen::VectorXd& z) { return t.inverse(as_span(z)); },
            py::arg("z"))
        .def(
            "log_pullback_density",
            [](const TriangularMap& t, const Eigen::VectorXd& x) { return t.log_pullback_density(as_span(x)); },
            py::arg("x"))
        .def(
            "conditional_update",
            [](const TriangularMap& t, const Eigen::MatrixXd& members, const Eigen::VectorXd& x_a, int threads) {
                py::gil_scoped_release release;
                return t.conditional_update(members, as_span(x_a), threads);
            },
            py::arg("members"), py::arg("x_a"), py::arg("threads") = 1)
        .def(
            "sample_conditional",
            [](const TriangularMap& t, const Eigen::VectorXd& x_a, int num, std::uint64_t seed) {
                return t.sample_conditional(as_span(x_a), num, seed);
            },
            py::arg("x_a"), py::arg("num"), py::arg("seed"))
        .def("to_json", [](const TriangularMap& t) { return nlohmann::json(t).dump(); })
        .def_static("from_json", [](const std::string& s) { return map_from_json(nlohmann::json::parse(s)); })
        .def("save", [](const TriangularMap& t, const std::string& path) { save_map(t, path); });

    m.def("load_map", &load_map, py::arg("path"));

    m.def(
        "fit",
        [](const Eigen::MatrixXd& data, std::optional<std::vector<std::vector<int>>> parent_sets,
           std::vector<std::string> names, std::optional<int> num_knots, int block_split, bool fit_block_a,
           bool fixed_monotone, int threads) {
            const Ensemble ens(data, std::move(names));
            std::vector<std::vector<int>> parents;
            if (parent_sets) {
                parents = *parent_sets;
            } else {
                parents.resize(ens.dim());
                for (int j = 0; j < ens.dim(); ++j)
                    for (int k = 0; k < j; ++k) parents[j].push_back(k);
            }
            MapFitConfig cfg;
            cfg.num_knots = num_knots;
            cfg.block_split = block_split;
            cfg.fit_block_a = fit_block_a;
            cfg.adapt.fixed_monotone = fixed_monotone;
            cfg.threads = threads;
            MapFitResult res = [&] {
                py::gil_scoped_release release;
                return fit(ens, parents, cfg);
            }();
            py::list reports;
            for (const auto& r : res.reports) reports.append(r ? py::object(report_dict(*r)) : py::none());
            return py::make_tuple(std::move(res.map), reports);
        },
        py::arg("data"), py::arg("parent_sets") = py::none(), py::arg("names") = std::vector<std::string>{},
        py::arg("num_knots") = py::none(), py::arg("block_split") = 0, py::arg("fit_block_a") = true,
        py::arg("fixed_monotone") = false, py::arg("threads") = 1,
        "Fit a triangular map to samples in rows. Returns (map, per-component report dicts).");

    m.def("aicc_penalty", &aicc_penalty, py::arg("edf"), py::arg("n"));

    m.def(
        "sample_wavy",
        [](int n, std::uint64_t seed, double omega, double noise) {
            WavyGenerator g;
            g.omega = omega;
            g.noise = noise;
            return sample_wavy(n, seed, g).data;
        },
        py::arg("n"), py::arg("seed"), py::arg("omega") = 3.0, py::arg("noise") = 0.25);

    m.def(
        "profile_lambda",
        [](int n, int num_knots, std::optional<std::vector<double>> grid, std::uint64_t seed, int threads) {
            WavyConfig cfg;
            cfg.n = n;
            cfg.num_knots = num_knots;
            if (grid) cfg.grid = *grid;
            cfg.seed = seed;
            cfg.threads = threads;
            const WavyProfile p = [&] {
                py::gil_scoped_release release;
                return profile_lambda(cfg);
            }();
            std::vector<double> ll, nll, edf, aicc;
            for (const auto& r : p.rows) {
                ll.push_back(r.log_lambda);
                nll.push_back(r.nll);
                edf.push_back(r.edf);
                aicc.push_back(r.aicc);
            }
            py::dict out;
            out["log_lambda"] = ll;
            out["nll"] = nll;
            out["edf"] = edf;
            out["aicc"] = aicc;
            out["argmin"] = p.argmin;
            out["ensemble"] = p.ensemble.data;
            return out;
        },
        py::arg("n") = 30, py::arg("num_knots") = 50, py::arg("grid") = py::none(), py::arg("seed") = 1,
        py::arg("threads") = 1);

    m.def(
        "run_filter",
        [](int n, std::uint64_t seed, const std::string& method, int steps, int spinup, double obs_sigma) {
            Lorenz63Params p;
            p.steps = steps;
            p.spinup = spinup;
            p.obs_sigma = obs_sigma;
            p.validate();
            const FilterRunResult r = [&] {
                py::gil_scoped_release release;
                return run_filter(p, n, seed, filter_method_from_string(method));
            }();
            std::vector<double> rmse, mean_rmse;
            for (const auto& s : r.steps) {
                rmse.push_back(s.rmse);
                mean_rmse.push_back(s.mean_rmse);
            }
            py::dict out;
            out["rmse"] = rmse;
            out["mean_rmse"] = mean_rmse;
            out["time_avg_rmse"] = r.time_avg_rmse;
            out["time_avg_mean_rmse"] = r.time_avg_mean_rmse;
            out["diverged"] = r.diverged;
            out["failure"] = r.failure;
            return out;
        },
        py::arg("n"), py::arg("seed"), py::arg("method") = "transport", py::arg("steps") = 1000,
        py::arg("spinup") = 250, py::arg("obs_sigma") = 0.25);

    py::register_exception<ComponentFitError>(m, "ComponentFitError", PyExc_RuntimeError);
}
