#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "nfmpc/bench.hpp"
#include "nfmpc/controller.hpp"
#include "nfmpc/envs.hpp"
#include "nfmpc/flow.hpp"
#include "nfmpc/sampling.hpp"
#include "nfmpc/training.hpp"
#include "nfmpc/verify.hpp"

namespace py = pybind11;
using nfmpc::Vec;

namespace {

nlohmann::json to_json(const py::handle& obj) {
  if (obj.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(obj)) return obj.cast<bool>();
  if (py::isinstance<py::int_>(obj)) return obj.cast<long long>();
  if (py::isinstance<py::float_>(obj)) return obj.cast<double>();
  if (py::isinstance<py::str>(obj)) return obj.cast<std::string>();
  if (py::isinstance<py::list>(obj) || py::isinstance<py::tuple>(obj)) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& item : obj) arr.push_back(to_json(item));
    return arr;
  }
  if (py::isinstance<py::dict>(obj)) {
    nlohmann::json dict = nlohmann::json::object();
    for (const auto& item : obj.cast<py::dict>())
      dict[item.first.cast<std::string>()] = to_json(item.second);
    return dict;
  }
  throw py::type_error("unsupported type in configuration");
}

py::object from_json(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null: return py::none();
    case nlohmann::json::value_t::boolean: return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer: return py::int_(j.get<long long>());
    case nlohmann::json::value_t::number_unsigned: return py::int_(j.get<unsigned long long>());
    case nlohmann::json::value_t::number_float: return py::float_(j.get<double>());
    case nlohmann::json::value_t::string: return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list out;
      for (const auto& item : j) out.append(from_json(item));
      return out;
    }
    case nlohmann::json::value_t::object: {
      py::dict out;
      for (auto it = j.begin(); it != j.end(); ++it)
        out[py::str(it.key())] = from_json(it.value());
      return out;
    }
    default: return py::none();
  }
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sampling-based MPC with a learned normalizing-flow sampling distribution";

  py::register_exception<nfmpc::DimensionError>(m, "DimensionError");
  py::register_exception<nfmpc::DomainError>(m, "DomainError");
  py::register_exception<nfmpc::ConfigError>(m, "ConfigError");

  m.def("first_primes", &nfmpc::first_primes);
  m.def("radical_inverse", &nfmpc::radical_inverse);
  m.def(
      "halton_sequence",
      [](std::uint64_t first_index, std::size_t count, int dim) {
        return nfmpc::halton_sequence(first_index, count, nfmpc::first_primes(dim));
      },
      py::arg("first_index"), py::arg("count"), py::arg("dim"));
  m.def("normal_quantile", &nfmpc::normal_quantile);
  m.def("bspline_smooth", [](const Vec& seq, int degree, int points) {
    return nfmpc::bspline_smooth(seq, degree, points);
  });

  m.def(
      "softmax_weights",
      [](const Vec& costs, double beta, bool normalize) {
        return nfmpc::softmax_weights(costs, beta, normalize);
      },
      py::arg("costs"), py::arg("beta"), py::arg("normalize") = true);
  m.def("shift_standard",
        [](const Vec& mean, int control_dim) { return nfmpc::shift_standard(mean, control_dim); });
  m.def("mppi_mean_update", [](const Vec& prev, const std::vector<Vec>& samples,
                               const Vec& weights, double gamma) {
    return nfmpc::weighted_mean_update(prev, samples, weights, gamma);
  });

  py::class_<nfmpc::FlowModel>(m, "FlowModel")
      .def(py::init([](const py::dict& cfg) {
             return nfmpc::FlowModel(nfmpc::FlowConfig::from_json(to_json(cfg)));
           }),
           py::arg("config"))
      .def_static("load", [](const std::string& path) { return nfmpc::FlowModel::load(path); })
      .def("save", [](const nfmpc::FlowModel& f, const std::string& path) { f.save(path); })
      .def_property_readonly("dim", &nfmpc::FlowModel::dim)
      .def_property_readonly("context_dim", &nfmpc::FlowModel::context_dim)
      .def("param_count", [](const nfmpc::FlowModel& f) { return f.params().size(); })
      .def(
          "push",
          [](const nfmpc::FlowModel& f, const Vec& z, const Vec& c) {
            auto ev = f.push(z, c);
            return py::make_tuple(ev.output, ev.log_det);
          },
          py::arg("z"), py::arg("context") = Vec{})
      .def(
          "pull",
          [](const nfmpc::FlowModel& f, const Vec& u, const Vec& c) {
            auto ev = f.pull(u, c);
            return py::make_tuple(ev.output, ev.log_det);
          },
          py::arg("u"), py::arg("context") = Vec{})
      .def(
          "log_likelihood",
          [](const nfmpc::FlowModel& f, const Vec& mean, const Vec& var, const Vec& u,
             const Vec& c) { return nfmpc::log_likelihood(f, mean, var, u, c); },
          py::arg("mean"), py::arg("var"), py::arg("u"), py::arg("context") = Vec{});

  m.def(
      "generate_env",
      [](const std::string& kind, std::uint64_t seed, const py::dict& params) {
        const nfmpc::EnvGenParams p = nfmpc::EnvGenParams::from_json(to_json(params));
        return from_json(nfmpc::generate_env(nfmpc::env_kind_from_string(kind), seed, p).to_json());
      },
      py::arg("kind"), py::arg("seed"), py::arg("params") = py::dict());
  m.def("sdf_query", [](const py::dict& env, double x, double y) {
    return nfmpc::sdf_query(nfmpc::EnvContext::from_json(to_json(env)), x, y);
  });
  m.def(
      "double_integrator_step",
      [](const Vec& state, double ux, double uy, double dt) {
        nfmpc::PlanarState s{state.at(0), state.at(1), state.at(2), state.at(3)};
        return nfmpc::double_integrator_step(s, ux, uy, dt, 0.0, nullptr).to_vec();
      },
      py::arg("state"), py::arg("ux"), py::arg("uy"), py::arg("dt") = nfmpc::kPlanarDt);
  m.def("stage_cost", [](const Vec& state, double ux, double uy, const py::dict& env) {
    nfmpc::PlanarState s{state.at(0), state.at(1), state.at(2), state.at(3)};
    return nfmpc::stage_cost(s, ux, uy, nfmpc::EnvContext::from_json(to_json(env)),
                             nfmpc::CostWeights{});
  });

  m.def(
      "run_experiment",
      [](const py::dict& config, const std::string& out_dir) {
        nfmpc::ExperimentConfig cfg = nfmpc::ExperimentConfig::from_json(to_json(config));
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        nfmpc::ExperimentOutput out = nfmpc::run_experiment(cfg);
        if (!cfg.out_dir.empty()) nfmpc::emit_outputs(out, cfg, cfg.out_dir);
        py::list rows;
        for (const auto& row : out.summary.rows) {
          py::dict d;
          d["controller"] = row.controller;
          d["samples"] = row.samples;
          d["episodes"] = row.episodes;
          d["success_rate"] = row.success_rate;
          d["cost_q1"] = row.cost_q1;
          d["cost_median"] = row.cost_median;
          d["cost_q3"] = row.cost_q3;
          d["mean_step_ms"] = row.mean_step_ms;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config"), py::arg("out_dir") = "");

  m.def(
      "train",
      [](const py::dict& config, const std::string& out_dir) {
        nfmpc::TrainConfig cfg = nfmpc::TrainConfig::from_json(to_json(config));
        nfmpc::TrainResult res = nfmpc::train(cfg, out_dir);
        py::dict d;
        d["episodes_run"] = res.episodes_run;
        d["diverged"] = res.diverged;
        d["best_val_success"] = res.best_val_success;
        d["best_val_median_cost"] = res.best_val_median_cost;
        d["flow_checkpoint"] = res.flow_checkpoint;
        d["shift_checkpoint"] = res.shift_checkpoint;
        d["learning_curve"] = res.learning_curve_path;
        return d;
      },
      py::arg("config"), py::arg("out_dir"));

  m.def("verify_fast", [](const std::string& scratch) {
    py::list out;
    for (const auto& r : nfmpc::verify::run_fast_suite(scratch)) {
      py::dict d;
      d["name"] = r.name;
      d["passed"] = r.passed;
      d["detail"] = r.detail;
      out.append(d);
    }
    return out;
  });
}
