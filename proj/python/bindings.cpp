#include "riceem/baselines.hpp"
#include "riceem/cli.hpp"
#include "riceem/em.hpp"
#include "riceem/rician.hpp"
#include "riceem/scheme.hpp"
#include "riceem/synth.hpp"
#include "riceem/tensor.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace riceem;

namespace {

TensorOrder to_order(int order) { return tensor_order_from_int(order); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Rician diffusion-tensor estimation with Poisson-augmented EM";

  py::register_exception<InitializationError>(m, "InitializationError", PyExc_ValueError);
  py::register_exception<DegenerateDataError>(m, "DegenerateDataError", PyExc_ValueError);

  py::enum_<TensorOrder>(m, "TensorOrder").value("Two", TensorOrder::Two).value("Four", TensorOrder::Four);
  py::enum_<Acceleration>(m, "Acceleration").value("None_", Acceleration::None).value("Anderson", Acceleration::Anderson);

  m.def("log_bessel_i0", &log_bessel_i0, py::arg("x"));
  m.def("bessel_ratio_i1_i0", &bessel_ratio_i1_i0, py::arg("x"));
  m.def("augmented_expectation", &augmented_expectation, py::arg("tau"));
  m.def(
      "rician_log_density",
      [](double y, double signal, double sigma_sq) { return rician_log_density(y, RicianParams{signal, sigma_sq}); },
      py::arg("y"), py::arg("signal"), py::arg("sigma_sq"));
  m.def(
      "sample_rician",
      [](double signal, double sigma_sq, std::size_t count, std::uint64_t seed) {
        return sample_rician(RicianParams{signal, sigma_sq}, count, seed);
      },
      py::arg("signal"), py::arg("sigma_sq"), py::arg("count"), py::arg("seed"));

  py::class_<AcquisitionScheme>(m, "Scheme")
      .def_property_readonly("knots", &AcquisitionScheme::knots)
      .def_property_readonly("repetitions", &AcquisitionScheme::repetitions)
      .def_property_readonly("size", &AcquisitionScheme::size)
      .def_property_readonly("directions",
                             [](const AcquisitionScheme& s) {
                               Eigen::MatrixXd d(static_cast<Eigen::Index>(s.directions().size()), 3);
                               for (std::size_t i = 0; i < s.directions().size(); ++i) d.row(static_cast<Eigen::Index>(i)) = s.directions()[i].transpose();
                               return d;
                             })
      .def("design",
           [](const AcquisitionScheme& s, int order) { return make_design(s, to_order(order)).z; },
           py::arg("order"))
      .def_property_readonly("b", [](const AcquisitionScheme& s) { return make_design(s, TensorOrder::Two).b; });

  m.def("default_scheme", &default_scheme);
  m.def(
      "make_scheme",
      [](int directions, const std::vector<double>& knots, int repetitions) {
        return make_scheme(directions, knots, repetitions);
      },
      py::arg("directions"), py::arg("knots"), py::arg("repetitions"));

  py::class_<GroundTruth>(m, "Truth")
      .def_property_readonly("order", [](const GroundTruth& t) { return static_cast<int>(t.theta.order); })
      .def_property_readonly("theta", [](const GroundTruth& t) { return t.theta.theta; })
      .def_readwrite("s0", &GroundTruth::s0)
      .def_readwrite("sigma_sq", &GroundTruth::sigma_sq)
      .def_readwrite("seed", &GroundTruth::seed)
      .def_readonly("label", &GroundTruth::label);

  m.def(
      "fixture_truth",
      [](int order, const std::string& noise, std::uint64_t seed) {
        if (noise != "high" && noise != "low") throw py::value_error("noise must be 'high' or 'low'");
        return fixture_truth(to_order(order), noise == "high" ? NoiseLevel::High : NoiseLevel::Low, seed);
      },
      py::arg("order"), py::arg("noise") = "high", py::arg("seed") = 1);
  m.def(
      "synthesize",
      [](const AcquisitionScheme& s, const GroundTruth& t, double zero_threshold) {
        return synthesize(s, t, SynthOptions{zero_threshold});
      },
      py::arg("scheme"), py::arg("truth"), py::arg("zero_threshold") = 0.0);
  m.def(
      "mean_diffusivity",
      [](const Eigen::VectorXd& theta, int order) { return mean_diffusivity(TensorParams(to_order(order), theta)); },
      py::arg("theta"), py::arg("order"));
  m.def("marginal_loglik", &marginal_loglik, py::arg("z"), py::arg("y"), py::arg("theta"), py::arg("s0_sq"),
        py::arg("sigma_sq"));

  py::class_<FitOptions>(m, "FitOptions")
      .def(py::init<>())
      .def_readwrite("alpha", &FitOptions::alpha)
      .def_readwrite("anneal_threshold", &FitOptions::anneal_threshold)
      .def_readwrite("max_em_iters", &FitOptions::max_em_iters)
      .def_readwrite("max_scoring_iters", &FitOptions::max_scoring_iters)
      .def_readwrite("tol_scoring", &FitOptions::tol_scoring)
      .def_readwrite("tol_theta", &FitOptions::tol_theta)
      .def_readwrite("tol_loglik", &FitOptions::tol_loglik)
      .def_readwrite("init_b_cutoff", &FitOptions::init_b_cutoff)
      .def_readwrite("single_step_scoring", &FitOptions::single_step_scoring)
      .def_readwrite("positivity_projection", &FitOptions::positivity_projection)
      .def_readwrite("acceleration", &FitOptions::acceleration)
      .def_readwrite("anderson_memory", &FitOptions::anderson_memory);

  py::class_<FitReport>(m, "FitReport")
      .def_readonly("method", &FitReport::method)
      .def_property_readonly("theta", [](const FitReport& r) { return r.theta.theta; })
      .def_readonly("s0_sq", &FitReport::s0_sq)
      .def_readonly("sigma_sq", &FitReport::sigma_sq)
      .def_readonly("converged", &FitReport::converged)
      .def_readonly("iterations", &FitReport::iterations)
      .def_readonly("final_loglik", &FitReport::final_loglik)
      .def_readonly("objective_trace", &FitReport::objective_trace)
      .def_readonly("n_expect", &FitReport::n_expect)
      .def_readonly("degenerate", &FitReport::degenerate);

  py::class_<BaselineReport>(m, "BaselineReport")
      .def_property_readonly("method", [](const BaselineReport& r) { return std::string(to_string(r.method)); })
      .def_property_readonly("theta", [](const BaselineReport& r) { return r.theta.theta; })
      .def_readonly("s0_sq", &BaselineReport::s0_sq)
      .def_readonly("sigma_sq", &BaselineReport::sigma_sq)
      .def_readonly("converged", &BaselineReport::converged)
      .def_readonly("iterations", &BaselineReport::iterations)
      .def_readonly("loglik", &BaselineReport::loglik)
      .def_readonly("degenerate", &BaselineReport::degenerate);

  m.def(
      "fit_mle",
      [](const AcquisitionScheme& s, const Eigen::VectorXd& y, int order, const FitOptions& o) {
        return fit_mle(s, y, to_order(order), o);
      },
      py::arg("scheme"), py::arg("y"), py::arg("order") = 2, py::arg("options") = FitOptions{});
  m.def(
      "fit_map",
      [](const AcquisitionScheme& s, const Eigen::VectorXd& y, int order, double omega_scale, double c1, double c2,
         const FitOptions& o) {
        const TensorOrder ord = to_order(order);
        return fit_map(s, y, ord, PriorSpec::isotropic(coefficient_count(ord), omega_scale, c1, c2), o);
      },
      py::arg("scheme"), py::arg("y"), py::arg("order") = 2, py::arg("omega_scale") = 0.0, py::arg("c1") = 1e-6,
      py::arg("c2") = 1e-6, py::arg("options") = FitOptions{});
  m.def(
      "fit_ls",
      [](const AcquisitionScheme& s, const Eigen::VectorXd& y, int order, std::optional<double> cutoff) {
        return fit_ls(make_design(s, to_order(order)), y, cutoff);
      },
      py::arg("scheme"), py::arg("y"), py::arg("order") = 2, py::arg("b_cutoff") = py::none());
  m.def(
      "fit_wls",
      [](const AcquisitionScheme& s, const Eigen::VectorXd& y, int order, std::optional<double> cutoff) {
        return fit_wls(make_design(s, to_order(order)), y, cutoff);
      },
      py::arg("scheme"), py::arg("y"), py::arg("order") = 2, py::arg("b_cutoff") = py::none());
  m.def(
      "fit_rician_direct",
      [](const AcquisitionScheme& s, const Eigen::VectorXd& y, int order, bool approx_fisher) {
        DirectOptions d;
        d.use_approx_fisher = approx_fisher;
        return fit_rician_direct(make_design(s, to_order(order)), y, d);
      },
      py::arg("scheme"), py::arg("y"), py::arg("order") = 2, py::arg("use_approx_fisher") = false);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"riceem"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out;
        std::ostringstream err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line in-process; returns (exit_code, stdout, stderr).");
}
