#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mixformer/check_suites.hpp"
#include "mixformer/complexity.hpp"
#include "mixformer/config_json.hpp"
#include "mixformer/serialize.hpp"
#include "mixformer/train.hpp"

namespace py = pybind11;
using namespace mixformer;

namespace {

Tensor tensor_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  std::vector<double> values(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(values));
}

py::array_t<double> numpy_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy_n(t.data().data(), t.numel(), out.mutable_data());
  return out;
}

class PyModel {
 public:
  PyModel(const std::string& variant, uint64_t seed)
      : model_(ModelConfig::variant(variant), seed) {}
  explicit PyModel(Model model) : model_(std::move(model)) {}

  py::array_t<double> classify(const py::array_t<double>& x) {
    ForwardCtx ctx = ForwardCtx::eval();
    return numpy_from_tensor(model_.classify(Var(tensor_from_numpy(x)), ctx).value());
  }

  std::vector<py::array_t<double>> features(const py::array_t<double>& x) {
    ForwardCtx ctx = ForwardCtx::eval();
    std::vector<Var> stages;
    model_.forward_features(Var(tensor_from_numpy(x)), ctx, &stages);
    std::vector<py::array_t<double>> out;
    for (const Var& s : stages) out.push_back(numpy_from_tensor(s.value()));
    return out;
  }

  int64_t param_count() { return model_.param_count(); }
  std::string name() const { return model_.cfg.name; }
  void save(const std::string& path) { save_model_weights(model_, path); }
  void load(const std::string& path) { load_model_weights(model_, path); }

  std::string analyze_json(int64_t h, int64_t w) { return model_report(model_, h, w).to_json(); }
  std::string analyze_text(int64_t h, int64_t w) { return model_report(model_, h, w).to_text(); }

 private:
  Model model_;
};

}  // namespace

PYBIND11_MODULE(_mixformer, m) {
  m.doc() = "Window-attention/depth-wise-convolution mixing blocks on the CPU";

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, uint64_t>(), py::arg("variant"), py::arg("seed") = 0)
      .def("classify", &PyModel::classify, py::arg("images"),
           "eval-mode logits for an (N,3,H,W) array")
      .def("features", &PyModel::features, py::arg("images"),
           "per-stage NCHW feature maps")
      .def("param_count", &PyModel::param_count)
      .def("name", &PyModel::name)
      .def("save", &PyModel::save, py::arg("path"))
      .def("load", &PyModel::load, py::arg("path"))
      .def("analyze_json", &PyModel::analyze_json, py::arg("h") = 224, py::arg("w") = 224)
      .def("analyze_text", &PyModel::analyze_text, py::arg("h") = 224, py::arg("w") = 224);

  m.def("variant_names", &ModelConfig::variant_names);

  m.def(
      "op_flops",
      [](const std::string& kind, int64_t n, int64_t c, int64_t h, int64_t w, int64_t k) {
        ComplexityQuery q;
        q.kind = op_kind_from_string(kind);
        q.n = n;
        q.c = c;
        q.h = h;
        q.w = w;
        q.k = k;
        return op_flops(q);
      },
      py::arg("kind"), py::arg("n"), py::arg("c"), py::arg("h"), py::arg("w"), py::arg("k") = 1,
      "closed-form cost of one operator application");

  m.def(
      "window_partition",
      [](const py::array_t<double>& x, int window, int shift) {
        WindowPartition wp = window_partition(Var(tensor_from_numpy(x)), window, shift);
        return py::make_tuple(numpy_from_tensor(wp.windows.value()),
                              numpy_from_tensor(wp.mask));
      },
      py::arg("x"), py::arg("window"), py::arg("shift") = 0,
      "tile an NCHW array into windows; returns (windows, attention mask)");

  m.def(
      "window_round_trip",
      [](const py::array_t<double>& x, int window, int shift) {
        WindowPartition wp = window_partition(Var(tensor_from_numpy(x)), window, shift);
        return numpy_from_tensor(window_reverse(wp.windows, wp.layout).value());
      },
      py::arg("x"), py::arg("window"), py::arg("shift") = 0);

  m.def(
      "cross_entropy",
      [](const py::array_t<double>& logits, const std::vector<int64_t>& labels) {
        return cross_entropy(Var(tensor_from_numpy(logits)), labels).value().data()[0];
      },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "gradcheck",
      [](const std::string& scope, uint64_t seed, double tol) {
        std::vector<SuiteResult> results;
        if (scope == "op") {
          results = gradcheck_ops(seed, tol, 1e-5);
        } else if (scope == "block") {
          results = gradcheck_blocks(seed, tol, 1e-5, 8);
        } else if (scope == "model") {
          results = gradcheck_model(seed, tol, 1e-5, 2);
        } else {
          throw std::invalid_argument("scope must be op|block|model");
        }
        py::dict out;
        out["pass"] = suites_pass(results);
        out["max_rel_error"] = suites_max_rel_error(results);
        out["targets"] = results.size();
        return out;
      },
      py::arg("scope") = "op", py::arg("seed") = 0, py::arg("tol") = 1e-4);

  m.def(
      "train_toy",
      [](const std::string& config_json) {
        ToyRunConfig cfg = config_json.empty() ? ToyRunConfig{}
                                               : toy_run_config_from_json_text(config_json);
        SyntheticDataset data = SyntheticDataset::generate(cfg.dataset);
        TrainResult result = train_toy(cfg.model, cfg.train, data);
        py::dict out;
        out["loss_curve"] = result.metrics.loss_curve;
        out["initial_loss"] = result.metrics.initial_loss;
        out["train_accuracy"] = result.metrics.final_train_accuracy;
        out["model"] = PyModel(std::move(result.model));
        return out;
      },
      py::arg("config_json") = "",
      "run the synthetic-data training loop; returns metrics and the model");
}
