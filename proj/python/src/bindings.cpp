// SPDX-License-Identifier: Apache-2.0
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmfusion/experiment.hpp"
#include "mmfusion/suite.hpp"

namespace py = pybind11;
using namespace mmf;

namespace {

// Keyword names spell the dotted config keys with "__": model__group -> model.group.
ExperimentSpec spec_from_python(const py::dict& keys, const py::kwargs& kw) {
  ExperimentSpec s;
  for (const auto& [k, v] : keys) s.set(py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
  for (const auto& [k, v] : kw) {
    auto key = py::str(k).cast<std::string>();
    for (auto pos = key.find("__"); pos != std::string::npos; pos = key.find("__", pos + 1)) key.replace(pos, 2, ".");
    s.set(key, py::str(v).cast<std::string>());
  }
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "mmfusion native module";
  m.attr("__version__") = std::string(library_version());

  py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);

  // Text pipeline.
  m.def("preprocess_text", &preprocess_text, py::arg("raw"));
  m.def("split_words", &split_words, py::arg("normalized"));
  py::class_<Vocabulary>(m, "Vocabulary")
      .def("id", &Vocabulary::id)
      .def("token", &Vocabulary::token)
      .def("__contains__", &Vocabulary::contains)
      .def("__len__", &Vocabulary::size);
  m.def("fit_vocabulary", [](const std::vector<std::string>& corpus, std::size_t max_size) {
    return fit_vocabulary(corpus, max_size);
  }, py::arg("corpus"), py::arg("max_size") = 20000);
  m.def("encode_text", &encode_text, py::arg("vocab"), py::arg("normalized"), py::arg("max_len"));
  m.def("map_rating", &map_rating, py::arg("code"));

  // Records and splits.
  py::class_<Sample>(m, "Sample")
      .def_readonly("cusip", &Sample::cusip)
      .def_readonly("company_id", &Sample::company_id)
      .def_readonly("time_index", &Sample::time_index)
      .def_property_readonly("agency", [](const Sample& s) { return std::string(agency_name(s.agency)); })
      .def_readonly("last_rating_code", &Sample::last_rating_code)
      .def_readonly("bond", &Sample::bond)
      .def_readonly("ratios", &Sample::ratios)
      .def_readonly("market", &Sample::market)
      .def_readonly("covariate", &Sample::covariate)
      .def_readonly("text", &Sample::text)
      .def_readonly("rating_code", &Sample::rating_code)
      .def_readonly("label", &Sample::label)
      .def_readonly("lag_months", &Sample::lag_months);
  m.def("generate_synthetic", [](std::size_t n, int classes, const std::string& signal, std::uint64_t seed) {
    return generate_synthetic({.n = n, .classes = classes, .signal = parse_signal(signal), .seed = seed});
  }, py::arg("n") = 1000, py::arg("classes") = kMergedClasses, py::arg("signal") = "joint", py::arg("seed") = 0);

  py::class_<Split>(m, "Split")
      .def_readonly("train", &Split::train)
      .def_readonly("validation", &Split::validation)
      .def_readonly("test", &Split::test);
  m.def("split_random", &split_random, py::arg("n"), py::arg("seed"));
  m.def("split_oot", &split_oot, py::arg("data"), py::arg("fraction") = 0.2, py::arg("seed") = 0);
  m.def("split_oou", &split_oou, py::arg("data"), py::arg("fraction") = 0.2, py::arg("seed") = 0);

  // Metrics.
  m.def("auc_binary", [](const std::vector<double>& s, const std::vector<int>& l) { return auc_binary(s, l); },
        py::arg("scores"), py::arg("labels"));
  m.def("auc_weighted_ovr", [](const ProbabilityMatrix& p, const std::vector<int>& l) {
    return auc_weighted_ovr(p, l);
  }, py::arg("probabilities"), py::arg("labels"));
  m.def("f1_weighted", [](const std::vector<int>& p, const std::vector<int>& l, int k) {
    return f1_weighted(p, l, k);
  }, py::arg("predictions"), py::arg("labels"), py::arg("classes"));
  m.def("confusion_matrix", [](const std::vector<int>& p, const std::vector<int>& l, int k) {
    return confusion_matrix(p, l, k);
  }, py::arg("predictions"), py::arg("labels"), py::arg("classes"));
  m.def("bootstrap_ci", [](const std::function<double(std::vector<std::size_t>)>& metric, std::size_t n,
                           std::size_t resamples, double level, std::uint64_t seed) {
    const auto iv = bootstrap_ci([&](std::span<const std::size_t> idx) {
      return metric(std::vector<std::size_t>(idx.begin(), idx.end()));
    }, n, {.resamples = resamples, .level = level, .seed = seed});
    return py::make_tuple(iv.low, iv.high);
  }, py::arg("metric"), py::arg("n"), py::arg("resamples") = 10000, py::arg("level") = 0.9, py::arg("seed") = 0);

  // Experiments, configured through the same keys as the config file.
  py::class_<ExperimentSpec>(m, "ExperimentSpec")
      .def(py::init(&spec_from_python), py::arg("keys") = py::dict())
      .def_static("parse", [](const std::string& text) { return parse_spec(text); })
      .def_static("load", [](const std::filesystem::path& p) { return load_spec(p); })
      .def("__setitem__", [](ExperimentSpec& s, const std::string& k, const py::object& v) {
        s.set(k, py::str(v).cast<std::string>());
      })
      .def("__getitem__", [](const ExperimentSpec& s, const std::string& k) { return s.get(k); })
      .def("validate", &ExperimentSpec::validate)
      .def("hash", [](const ExperimentSpec& s) { return spec_hash(s); })
      .def("__str__", [](const ExperimentSpec& s) { return spec_to_string(s); });
  m.def("spec_keys", &spec_keys);
  m.def("_run_experiment_json", [](const ExperimentSpec& s) {
    py::gil_scoped_release release;
    return report_to_json(run_experiment(s).metrics);
  });
  m.def("_run_sweep", [](const ExperimentSpec& s) {
    std::vector<LeaderboardRow> rows;
    {
      py::gil_scoped_release release;
      rows = run_sweep(s);
    }
    py::list out;
    for (const auto& r : rows) {
      py::dict d;
      d["group"] = r.group;
      d["base"] = std::string(base_model_name(r.base));
      d["ok"] = r.ok;
      d["error"] = r.error;
      d["auc"] = py::make_tuple(r.auc, r.auc_low, r.auc_high);
      d["f1"] = py::make_tuple(r.f1, r.f1_low, r.f1_high);
      out.append(d);
    }
    return out;
  });

  py::class_<GradientSuiteEntry>(m, "GradientEntry")
      .def_readonly("name", &GradientSuiteEntry::name)
      .def_readonly("max_relative_error", &GradientSuiteEntry::max_relative_error)
      .def_readonly("checked", &GradientSuiteEntry::checked)
      .def_readonly("rejected", &GradientSuiteEntry::rejected);
  m.def("run_gradient_suite", [](std::size_t layer_instances, std::size_t samples, bool models, std::uint64_t seed) {
    py::gil_scoped_release release;
    return run_gradient_suite({.layer_instances = layer_instances, .samples_per_model = samples, .seed = seed,
                               .models = models}).entries;
  }, py::arg("layer_instances") = 100, py::arg("samples_per_model") = 20, py::arg("models") = true,
     py::arg("seed") = 0);
}
