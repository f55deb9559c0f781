#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mfgflow/core.hpp"
#include "mfgflow/fbsde.hpp"
#include "mfgflow/flow.hpp"
#include "mfgflow/grid_oracle.hpp"
#include "mfgflow/metrics.hpp"
#include "mfgflow/operator_net.hpp"
#include "mfgflow/scenarios.hpp"

namespace py = pybind11;
using namespace mfgflow;

PYBIND11_MODULE(_mfgflow, m) {
    m.doc() = "Crowd-motion mean-field solver: normalizing-flow densities, "
              "forward-backward value networks and a boundary-condition operator.";

    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
    py::register_exception<RuntimeFailure>(m, "RuntimeFailure", PyExc_RuntimeError);

    py::class_<Box>(m, "Box")
        .def(py::init<>())
        .def_readwrite("lo", &Box::lo)
        .def_readwrite("hi", &Box::hi);

    py::class_<Obstacle>(m, "Obstacle")
        .def_static("circle", &Obstacle::circle, py::arg("center"), py::arg("radius"))
        .def_static("ellipse", &Obstacle::ellipse, py::arg("center"), py::arg("a"), py::arg("b"))
        .def("contains", &Obstacle::contains)
        .def_readonly("center", &Obstacle::center)
        .def_readonly("radius", &Obstacle::radius);

    py::class_<BoundaryLayout>(m, "BoundaryLayout")
        .def(py::init<>())
        .def_readwrite("d", &BoundaryLayout::d)
        .def_readwrite("max_obstacles", &BoundaryLayout::max_obstacles)
        .def_readwrite("canonical_sort", &BoundaryLayout::canonical_sort)
        .def("flat_size", &BoundaryLayout::flat_size);

    py::class_<Scenario>(m, "Scenario")
        .def(py::init<>())
        .def_readwrite("init_mean", &Scenario::init_mean)
        .def_readwrite("init_std", &Scenario::init_std)
        .def_readwrite("target", &Scenario::target)
        .def_readwrite("obstacles", &Scenario::obstacles)
        .def_readwrite("sigma", &Scenario::sigma)
        .def_readwrite("T", &Scenario::T)
        .def_readwrite("N", &Scenario::N)
        .def_readwrite("s_safe", &Scenario::s_safe)
        .def_readwrite("f_in", &Scenario::f_in);

    py::class_<BoundaryCode>(m, "BoundaryCode")
        .def_readonly("flat", &BoundaryCode::flat)
        .def_property_readonly("layout", [](const BoundaryCode& c) { return c.layout; });

    m.def("encode", &encode, py::arg("scenario"), py::arg("layout"));
    m.def("decode", &decode, py::arg("code"));
    m.def("obstacle_penalty", &obstacle_penalty, py::arg("x"), py::arg("obstacle"),
          py::arg("s_safe"));
    m.def("hamiltonian_quadratic", &hamiltonian_quadratic, py::arg("x"), py::arg("p"));
    m.def("working_box", &working_box);
    m.def("scenario_from_json", &scenario_from_json);
    m.def("scenario_to_json", &scenario_to_json);
    m.def("load_scenario", &load_scenario);
    m.def("save_scenario", &save_scenario);

    py::class_<MFGProblem>(m, "MFGProblem")
        .def_readonly("d", &MFGProblem::d)
        .def_readonly("T", &MFGProblem::T)
        .def_readonly("N", &MFGProblem::N)
        .def_readonly("sigma", &MFGProblem::sigma)
        .def("nu", &MFGProblem::nu)
        .def("running_cost",
             [](const MFGProblem& p, const Vec& x, const Mat& mu, double t) {
                 return p.running_cost(x, mu, t);
             })
        .def("terminal_cost",
             [](const MFGProblem& p, const Vec& x, const Mat& mu) { return p.terminal_cost(x, mu); });

    m.def("build_crowd_motion",
          [](const Scenario& s) { return build_crowd_motion(s); }, py::arg("scenario"));

    py::class_<DensityFlow>(m, "DensityFlow")
        .def("dim", &DensityFlow::dim)
        .def("steps", &DensityFlow::steps)
        .def("push_samples", &DensityFlow::push_samples, py::arg("n"), py::arg("M"),
             py::arg("seed"))
        .def("log_density", &DensityFlow::log_density, py::arg("n"), py::arg("points"))
        .def("save", &DensityFlow::save)
        .def_static("load", &DensityFlow::load);

    py::class_<ValuePath>(m, "ValuePath")
        .def("u", &ValuePath::u, py::arg("x"), py::arg("n"))
        .def("control", &ValuePath::control, py::arg("states"), py::arg("n"))
        .def("save", &ValuePath::save)
        .def_static("load", &ValuePath::load);

    py::class_<TraceRow>(m, "TraceRow")
        .def_readonly("round", &TraceRow::round)
        .def_readonly("l_mkv", &TraceRow::l_mkv)
        .def_readonly("l_hjb", &TraceRow::l_hjb)
        .def_readonly("l_t", &TraceRow::l_terminal);

    py::class_<FixedTrainResult>(m, "FixedTrainResult")
        .def_readonly("flow", &FixedTrainResult::flow)
        .def_readonly("value", &FixedTrainResult::value)
        .def_readonly("trace", &FixedTrainResult::trace)
        .def_readonly("converged", &FixedTrainResult::converged)
        .def_readonly("rounds", &FixedTrainResult::rounds);

    m.def(
        "train_fixed",
        [](const Scenario& s, int max_rounds, int m_theta, int m_phi, std::uint64_t seed) {
            FixedTrainOptions opts;
            opts.max_rounds = max_rounds;
            opts.m_theta = m_theta;
            opts.m_phi = m_phi;
            opts.seed = seed;
            return train_fixed(build_crowd_motion(s), opts);
        },
        py::arg("scenario"), py::arg("max_rounds") = 200, py::arg("m_theta") = 256,
        py::arg("m_phi") = 128, py::arg("seed") = 1,
        "Solve one fixed-coefficient instance (reduced option surface).");

    m.def("loss_terminal", &loss_terminal, py::arg("flow"), py::arg("problem"), py::arg("M"),
          py::arg("seed"));

    py::class_<OperatorModel>(m, "OperatorModel")
        .def("save", &OperatorModel::save)
        .def_static("load", py::overload_cast<const std::string&>(&OperatorModel::load));

    m.def("operator_eval", &operator_eval, py::arg("model"), py::arg("code"), py::arg("queries"));

    py::class_<InferenceResult>(m, "InferenceResult")
        .def_readonly("fields", &InferenceResult::fields)
        .def_readonly("masses", &InferenceResult::masses)
        .def_readonly("seconds", &InferenceResult::seconds);

    m.def("infer_equilibrium", &infer_equilibrium, py::arg("model"), py::arg("code"),
          py::arg("lattice_pts"), py::arg("T"));

    m.def("collision_success_rate", &collision_success_rate, py::arg("trajectories"),
          py::arg("obstacles"), py::arg("pair_radius"));
    m.def(
        "volume_invariance",
        [](const DensityFlow& flow, const Box& box, int res) {
            return volume_invariance(flow, box, res, nullptr);
        },
        py::arg("flow"), py::arg("box"), py::arg("resolution"));

    m.def("obstacle_family", &scenarios::obstacle_family);
    m.def("diffusion_family", &scenarios::diffusion_family);
    m.def("init_terminal_family", &scenarios::init_terminal_family);

    py::class_<GridSpec>(m, "GridSpec")
        .def_readonly("n_t", &GridSpec::n_t);
    m.def("make_grid_spec", &make_grid_spec, py::arg("box"), py::arg("pts"), py::arg("n_t"),
          py::arg("T"));
    py::class_<OracleResult>(m, "OracleResult")
        .def_readonly("u", &OracleResult::u)
        .def_readonly("mu", &OracleResult::mu)
        .def_readonly("converged", &OracleResult::converged);
    m.def(
        "solve_fixed_point",
        [](const Scenario& s, const std::vector<int>& pts, int n_t, double damping, int max_iter) {
            const MFGProblem p = build_crowd_motion(s);
            return solve_fixed_point(p, make_grid_spec(working_box(s), pts, n_t, s.T), damping,
                                     max_iter);
        },
        py::arg("scenario"), py::arg("pts"), py::arg("n_t"), py::arg("damping") = 0.5,
        py::arg("max_iter") = 50);
}
