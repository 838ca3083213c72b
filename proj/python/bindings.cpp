#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "priorforest/bundle.hpp"
#include "priorforest/elicitation.hpp"
#include "priorforest/error.hpp"
#include "priorforest/simulate.hpp"

namespace py = pybind11;
using namespace priorforest;

namespace {

struct PyPrior {
  ProjectBundle bundle;
  std::shared_ptr<const HDJointPrior> prior;
};

PyPrior make_prior(const std::string& bundle_json, const std::string& base_dir) {
  PyPrior p;
  p.bundle = bundle_from_json(json::parse(bundle_json), base_dir);
  p.prior = std::make_shared<const HDJointPrior>(assemble_bundle(p.bundle));
  return p;
}

}  // namespace

PYBIND11_MODULE(_priorforest, m) {
  m.doc() = "Tree-based hierarchical variance priors";

  static py::handle error_type = py::exception<Error>(m, "PriorForestError", PyExc_ValueError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error_type.ptr(), ("[" + std::string(to_string(e.code())) + "] " + e.what()).c_str());
    }
  });

  py::class_<PyPrior>(m, "Prior")
      .def(py::init(&make_prior), py::arg("bundle_json"), py::arg("base_dir") = ".")
      .def_static("load", [](const std::string& path) {
        PyPrior p;
        p.bundle = load_bundle(path);
        p.prior = std::make_shared<const HDJointPrior>(assemble_bundle(p.bundle));
        return p;
      })
      .def("summary", [](const PyPrior& p) { return summary_text(*p.prior); })
      .def_property_readonly("warnings", [](const PyPrior& p) { return p.prior->warnings; })
      .def_property_readonly("effects", [](const PyPrior& p) { return p.prior->effects; })
      .def_property_readonly("parameters", [](const PyPrior& p) { return prior_parameters(*p.prior); })
      .def("tree", [](const PyPrior& p) { return render_tree_string(p.prior->forest); })
      .def("bundle_json", [](const PyPrior& p, bool inline_data) { return bundle_to_json(p.bundle, inline_data).dump(); },
           py::arg("inline_data") = true)
      .def(
          "sample",
          [](const PyPrior& p, int n, uint64_t seed) {
            const DataTable t = prior_sample_table(*p.prior, sample_prior(*p.prior, n, seed));
            std::map<std::string, Eigen::VectorXd> out;
            for (const auto& name : t.names) {
              const auto& c = t.col(name);
              out[name] = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
            }
            return out;
          },
          py::arg("n") = 10000, py::arg("seed") = 1)
      .def(
          "density",
          [](const PyPrior& p, const std::string& param, const std::string& scale, std::vector<double> grid) {
            const DensityGrid g = export_density_grid(*p.prior, param, parse_scale(scale), grid);
            return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(g.density.data(), static_cast<Eigen::Index>(g.density.size())));
          },
          py::arg("parameter"), py::arg("scale") = "variance", py::arg("grid"))
      .def(
          "infer",
          [](const PyPrior& p, const std::string& settings_json) {
            McmcSettings s = settings_from_json(json::parse(settings_json), p.bundle.sampler);
            InferenceResult r;
            {
              py::gil_scoped_release release;
              r = run_mcmc(*p.prior, s);
            }
            py::dict out;
            out["summary"] = summaries_to_json(r).dump();
            out["tree_names"] = r.tree_names;
            out["tree"] = r.tree;
            out["effects"] = r.effects;
            out["logvar"] = r.logvar;
            out["fixed_names"] = r.fixed_names;
            out["fixed"] = r.fixed;
            return out;
          },
          py::arg("settings_json") = "{}");

  m.def("example_bundle", [](const std::string& name, uint64_t seed) { return bundle_to_json(example_bundle(name, seed), true).dump(); },
        py::arg("name"), py::arg("seed") = 1);
  m.def("example_names", &example_names);
  m.def(
      "find_pc_prior_param",
      [](double lower, double upper, double prob, int n, uint64_t seed) {
        const PcParamResult r = find_pc_prior_param(lower, upper, prob, n, seed);
        return py::dict(py::arg("U") = r.U, py::arg("coverage") = r.coverage, py::arg("q_lower") = r.q_lower,
                        py::arg("q_upper") = r.q_upper);
      },
      py::arg("lower"), py::arg("upper"), py::arg("prob"), py::arg("n") = 200000, py::arg("seed") = 1);
  m.def("pc_stdev_density", [](double sigma, double U, double alpha) { return std::exp(pc_stdev_logdensity(sigma, U, alpha)); });
  m.def("dirichlet_concentration", &dirichlet_concentration);
}
