#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flare/commands.hpp"
#include "flare/config.hpp"
#include "flare/gradcheck.hpp"
#include "flare/layers.hpp"
#include "flare/synthcohort.hpp"

namespace py = pybind11;

PYBIND11_MODULE(_flare, m) {
    m.doc() = "Latent-rollout disease progression forecasting (C++ core)";

    m.def("run_cli", [](const std::vector<std::string>& args) { return flare::run_cli(args); },
          py::arg("args"),
          "Invoke the command line driver; returns its exit code.");

    m.def("default_config_json", [] {
        nlohmann::json j = flare::RunConfig{};
        return j.dump(2);
    },
          "Default run configuration as a JSON string.");

    m.def("default_cohort_spec_json", [] {
        flare::CohortSpec spec;
        spec.seed = 0;
        nlohmann::json j = spec;
        return j.dump(2);
    });

    m.def("softmax", [](const flare::Vec& logits) { return flare::softmax(logits); },
          py::arg("logits"));

    m.def("weighted_cross_entropy",
          [](const flare::Vec& logits, int label, const flare::Vec& weights) {
              auto r = flare::weighted_cross_entropy(logits, label, weights);
              return py::make_tuple(r.loss, r.grad_logits);
          },
          py::arg("logits"), py::arg("label"), py::arg("weights"),
          "Returns (loss, grad_logits).");

    m.def("gradcheck_case",
          [](const std::string& kind, std::size_t T, std::size_t tau, bool impute_mid,
             double alpha, std::uint64_t seed) {
              flare::ModelCheckCase c;
              c.kind = (kind == "concat") ? flare::ModelKind::concat : flare::ModelKind::flare;
              c.T = T;
              c.tau = tau;
              c.impute_mid = impute_mid;
              c.alpha = alpha;
              auto report = flare::check_model_case(c, seed);
              py::dict out;
              out["passed"] = report.passed;
              out["max_rel_err"] = report.max_rel_err;
              out["worst_block"] = report.worst_block;
              return out;
          },
          py::arg("kind"), py::arg("T"), py::arg("tau"), py::arg("impute_mid") = false,
          py::arg("alpha") = 1.0, py::arg("seed") = 7,
          "Finite-difference check of one small model configuration.");
}
