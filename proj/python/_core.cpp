#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cfaan/cli.hpp"
#include "cfaan/errors.hpp"
#include "cfaan/flops.hpp"
#include "cfaan/gradcheck.hpp"
#include "cfaan/reid_eval.hpp"
#include "cfaan/tensor_io.hpp"

namespace py = pybind11;
using namespace cfaan;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() == 0) throw DimensionError("expected an array with at least one axis");
  Tensor::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

std::vector<TrackletMeta> to_meta(const std::vector<py::tuple>& rows) {
  std::vector<TrackletMeta> out;
  for (const auto& r : rows) {
    if (r.size() < 3 || r.size() > 4) {
      throw ValidationError("metadata rows are (tracklet, identity, camera[, ambiguous])");
    }
    TrackletMeta m;
    m.tracklet = r[0].cast<std::uint64_t>();
    m.identity = r[1].cast<std::uint64_t>();
    m.camera = r[2].cast<std::uint64_t>();
    if (r.size() == 4) m.ambiguous = r[3].cast<std::vector<std::uint64_t>>();
    out.push_back(std::move(m));
  }
  return out;
}

py::dict result_dict(const EvalResult& r) {
  py::dict d;
  d["mAP"] = r.mAP;
  d["cmc"] = r.cmc;
  d["ap"] = r.ap;
  d["evaluated"] = r.evaluated;
  d["excluded"] = r.excluded;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the cfaan C++ library";
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  m.def("ablation_table", [](const std::string& convention, std::size_t frames) {
    py::list rows;
    for (const auto& r : ablation_table(CountingConvention::parse(convention), {}, frames)) {
      py::dict d;
      d["label"] = r.label;
      d["target_gflops"] = r.target_gflops;
      d["computed_gflops"] = r.computed_gflops;
      d["relative_error"] = r.relative_error();
      d["tolerance"] = r.tolerance;
      rows.append(d);
    }
    return rows;
  }, py::arg("convention") = "calibrated", py::arg("frames") = 6);

  m.def("model_gflops", [](const std::string& preset, std::size_t frames, const std::string& convention) {
    return to_gflops(model_flops(preset, {}, frames, CountingConvention::parse(convention)).total());
  }, py::arg("preset"), py::arg("frames") = 6, py::arg("convention") = "calibrated");

  m.def("attention_gflops", [](const std::string& variant, std::size_t heads, std::size_t scales,
                               std::size_t frames, const std::string& convention) {
    const VariantSpec v{parse_variant(variant), heads, scales};
    return to_gflops(attention_flops(v, default_insertion_points({}), frames, {},
                                     CountingConvention::parse(convention)).total());
  }, py::arg("variant"), py::arg("heads") = 2, py::arg("scales") = 4, py::arg("frames") = 6,
     py::arg("convention") = "calibrated");

  m.def("gradcheck", [](std::size_t seeds, std::uint64_t seed, bool perturb) {
    GradcheckOptions o;
    o.seeds = seeds;
    o.seed = seed;
    o.perturb_analytic = perturb;
    const GradcheckReport r = run_gradchecks(o);
    py::dict d;
    d["passed"] = r.passed();
    d["cases"] = r.cases.size();
    d["worst_error"] = r.worst().worst_error;
    d["worst_suite"] = r.worst().suite;
    return d;
  }, py::arg("seeds") = 5, py::arg("seed") = 0, py::arg("perturb_analytic") = false);

  m.def("evaluate", [](const std::vector<py::tuple>& query, const std::vector<py::tuple>& gallery,
                       const Array& distances, const std::string& protocol,
                       const std::string& corrections) {
    EvalDataset d{to_meta(query), to_meta(gallery), to_tensor(distances)};
    d.validate();
    if (!corrections.empty()) {
      std::istringstream is(corrections);
      d = apply_corrections(d, read_corrections(is));
    }
    return result_dict(evaluate(d, parse_protocol(protocol)));
  }, py::arg("query"), py::arg("gallery"), py::arg("distances"), py::arg("protocol") = "new",
     py::arg("corrections") = "",
     "Rows are (tracklet, identity, camera[, ambiguous ids]); corrections use the text format.");

  m.def("load_tensor", [](const std::string& path) { return to_array(load_tensor(path)); });
  m.def("save_tensor", [](const std::string& path, const Array& a) { save_tensor(path, to_tensor(a)); });

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs the command line; returns (exit code, stdout, stderr).");
}
