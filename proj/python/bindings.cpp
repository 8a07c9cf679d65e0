#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "forge/allocation.hpp"
#include "forge/combiners.hpp"
#include "forge/error.hpp"
#include "forge/hpo.hpp"
#include "forge/library.hpp"
#include "forge/pipeline.hpp"
#include "forge/selection.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

forge::PredictionMatrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw forge::Error(forge::Errc::ShapeMismatch, "expected a 2-d array");
  const auto n = static_cast<std::size_t>(a.shape(0)), k = static_cast<std::size_t>(a.shape(1));
  return forge::PredictionMatrix(n, k, std::vector<double>(a.data(), a.data() + n * k));
}

Array to_array(const forge::PredictionMatrix& m) {
  Array out({m.n_samples(), m.n_classes()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

forge::Labels to_labels(const std::vector<std::size_t>& y) { return forge::Labels{y}; }

template <typename Fn>
Array combine(const std::vector<Array>& arrays, Fn fn) {
  std::vector<forge::PredictionMatrix> mats;
  for (const auto& a : arrays) mats.push_back(to_matrix(a));
  forge::PredictionRefs refs(mats.begin(), mats.end());
  return to_array(fn(refs));
}

// JSON crosses the boundary as text; the Python package decodes it.
std::string dump(const json& j) { return j.dump(); }

}  // namespace

PYBIND11_MODULE(_forge, m) {
  m.doc() = "Budget-aware ensemble selection, device allocation and ASHA scheduling.";

  static PyObject* error_type = PyErr_NewException("forge._forge.ForgeError", PyExc_RuntimeError, nullptr);
  m.add_object("ForgeError", py::handle(error_type));
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const forge::Error& e) {
      py::tuple args = py::make_tuple(std::string(forge::to_string(e.code())), e.what());
      PyErr_SetObject(error_type, args.ptr());
    }
  });

  py::class_<forge::ModelLibrary>(m, "ModelLibrary")
      .def("__len__", &forge::ModelLibrary::size)
      .def_property_readonly("n_samples", &forge::ModelLibrary::n_samples)
      .def_property_readonly("n_classes", &forge::ModelLibrary::n_classes)
      .def_property_readonly("labels", [](const forge::ModelLibrary& lib) { return lib.labels().classes; })
      .def_property_readonly("ids",
                             [](const forge::ModelLibrary& lib) {
                               std::vector<std::string> ids;
                               for (const auto& r : lib.models()) ids.push_back(r.id);
                               return ids;
                             })
      .def_property_readonly("costs",
                             [](const forge::ModelLibrary& lib) {
                               std::vector<double> c;
                               for (const auto& r : lib.models()) c.push_back(r.cost);
                               return c;
                             })
      .def("predictions", [](const forge::ModelLibrary& lib, const std::string& id) {
        return to_array(*lib[lib.index_of(id)].predictions);
      });

  m.def("load_library", &forge::load_library, py::arg("manifest"));
  m.def("prune_library", &forge::prune_library, py::arg("library"), py::arg("keep_fraction"));

  m.def("average", [](const std::vector<Array>& a) { return combine(a, forge::average_combine); });
  m.def(
      "weighted_average",
      [](const std::vector<Array>& a, const std::vector<double>& w) {
        return combine(a, [&](const forge::PredictionRefs& r) { return forge::weighted_average_combine(r, w); });
      },
      py::arg("predictions"), py::arg("weights"));
  m.def("majority_vote", [](const std::vector<Array>& a) { return combine(a, forge::majority_vote_combine); });
  m.def("cross_entropy", [](const Array& p, const std::vector<std::size_t>& y) {
    return forge::cross_entropy(to_matrix(p), to_labels(y));
  });
  m.def("error_rate", [](const Array& p, const std::vector<std::size_t>& y) {
    return forge::error_rate(to_matrix(p), to_labels(y));
  });
  m.def("macro_f1", [](const Array& p, const std::vector<std::size_t>& y) {
    return forge::macro_f1(to_matrix(p), to_labels(y));
  });

  m.def(
      "penalty",
      [](double cost, double budget, double rho1, double rho2, double rho3) {
        return forge::penalty(cost, budget, forge::PenaltyParams{rho1, rho2, rho3});
      },
      py::arg("cost"), py::arg("budget"), py::arg("rho1") = 10.0, py::arg("rho2") = 1.0, py::arg("rho3") = 2.0);

  m.def(
      "_select",
      [](const forge::ModelLibrary& lib, double budget, const std::vector<double>& weights, std::size_t threads) {
        forge::SelectionOptions opt;
        opt.threads = threads;
        return dump(forge::solution_to_json(forge::smobf_multi_w(lib, forge::BudgetSpec{budget, weights}, {}, opt),
                                            budget, "smobf"));
      },
      py::arg("library"), py::arg("budget"), py::arg("weights"), py::arg("threads") = 1);
  m.def(
      "_brute_force",
      [](const forge::ModelLibrary& lib, double budget) {
        return dump(forge::solution_to_json(forge::brute_force_best(lib, budget), budget, "brute-force"));
      },
      py::arg("library"), py::arg("budget"));

  m.def(
      "_allocate",
      [](const forge::ModelLibrary& lib, const std::vector<std::string>& ids, const std::string& devices_json,
         const std::vector<int>& pb, std::size_t max_combi) {
        auto devices = devices_json.empty() ? forge::default_devices() : forge::parse_devices(json::parse(devices_json));
        const auto& batches = pb.empty() ? forge::default_permitted_batches() : pb;
        forge::RefineOptions opt;
        opt.max_combi = max_combi;
        forge::SimulatorOracle sim;
        return dump(forge::plan_allocation(lib, ids, devices, batches, 32, sim, opt).to_json(devices));
      },
      py::arg("library"), py::arg("ids"), py::arg("devices_json") = "", py::arg("permitted_batches") = std::vector<int>{},
      py::arg("max_combi") = 500);

  m.def(
      "_run_hpo",
      [](const std::string& space_json, const std::string& algo, int eta, int min_r, int max_r, std::size_t trials,
         std::size_t workers, std::uint64_t seed, double noise) {
        forge::SchedulerConfig c;
        c.eta = eta;
        c.min_resource = min_r;
        c.max_resource = max_r;
        c.max_trials = trials;
        c.seed = seed;
        auto space = forge::HyperparameterSpace::from_json(json::parse(space_json));
        forge::SyntheticObjective objective(seed, noise);
        py::gil_scoped_release release;
        auto out = algo == "random"
                       ? forge::run_random_search(space, objective, c, workers, forge::Executor::virtual_clock)
                       : forge::run_asha(space, objective, c, workers, forge::Executor::virtual_clock);
        return dump(forge::trials_document(out, algo, c));
      },
      py::arg("space_json"), py::arg("algo") = "asha", py::arg("eta") = 3, py::arg("min_r") = 1,
      py::arg("max_r") = 81, py::arg("trials") = 64, py::arg("workers") = 4, py::arg("seed") = forge::kDefaultSeed,
      py::arg("noise") = 0.01);

  m.def(
      "run_pipeline",
      [](const std::filesystem::path& space, const std::filesystem::path& out_dir, std::size_t trials, double keep,
         int max_r, std::uint64_t seed) {
        const auto seeds = forge::derive_seeds(seed);
        forge::PipelineConfig c;
        c.space_path = space;
        c.out_dir = out_dir;
        c.scheduler.max_trials = trials;
        c.scheduler.max_resource = max_r;
        c.scheduler.seed = seeds.scheduler;
        c.cost_model.seed = seeds.cost;
        c.generator.seed = seeds.predictions;
        c.keep_fraction = keep;
        py::gil_scoped_release release;
        auto a = forge::run_pipeline(c);
        return std::map<std::string, std::filesystem::path>{{"trials", a.trials},
                                                           {"manifest", a.manifest},
                                                           {"solution", a.solution},
                                                           {"allocation", a.allocation},
                                                           {"sweep", a.sweep}};
      },
      py::arg("space"), py::arg("out_dir"), py::arg("trials") = 64, py::arg("keep") = 0.2, py::arg("max_r") = 81,
      py::arg("seed") = forge::kDefaultSeed);
}
