#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <utility>
#include <vector>

#include "denet/checkpoint.hpp"
#include "denet/density.hpp"
#include "denet/enet.hpp"
#include "denet/errors.hpp"
#include "denet/eval.hpp"
#include "denet/fusion.hpp"
#include "denet/gradcheck.hpp"
#include "denet/losses.hpp"
#include "denet/run_config.hpp"
#include "denet/synth.hpp"

namespace py = pybind11;
using namespace denet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

DotAnnotation make_annotation(std::size_t width, std::size_t height,
                              const std::vector<std::pair<double, double>>& points) {
  DotAnnotation ann{"py", width, height, {}};
  for (const auto& [x, y] : points) ann.points.push_back({x, y});
  ann.validate();
  return ann;
}

py::array_t<double> grid_to_array(const DensityGrid& g) {
  py::array_t<double> out({g.height, g.width});
  std::copy(g.values.begin(), g.values.end(), out.mutable_data());
  return out;
}

DensityGrid array_to_grid(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array (H, W)");
  DensityGrid g(a.shape(1), a.shape(0));
  std::copy(a.data(), a.data() + a.size(), g.values.begin());
  return g;
}

// Accepts (3, H, W) or (H, W, 3).
Tensor image_from_array(const Array& a) {
  if (a.ndim() != 3) throw ShapeError("expected an image of shape (3, H, W) or (H, W, 3)");
  if (a.shape(0) == 3) {
    Tensor t({3, std::size_t(a.shape(1)), std::size_t(a.shape(2))});
    std::copy(a.data(), a.data() + a.size(), t.mutable_data().begin());
    return t;
  }
  if (a.shape(2) != 3) throw ShapeError("expected an image of shape (3, H, W) or (H, W, 3)");
  const std::size_t h = a.shape(0), w = a.shape(1);
  Tensor t({3, h, w});
  auto r = a.unchecked<3>();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) t.mutable_data()[(c * h + y) * w + x] = r(y, x, c);
  return t;
}

Tensor map_tensor(const Array& a) {
  const DensityGrid g = array_to_grid(a);
  return grid_to_tensor(g);
}

DetectionSet boxes_to_detections(const std::vector<std::tuple<double, double, double, double>>& boxes,
                                 const std::vector<double>& scores) {
  if (!scores.empty() && scores.size() != boxes.size())
    throw ValidationError("scores must be empty or match the number of boxes");
  DetectionSet ds;
  ds.image_id = "py";
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    Detection d;
    const auto& [x0, y0, x1, y1] = boxes[i];
    d.box = {x0, y0, x1, y1};
    d.score = scores.empty() ? 1.0 : scores[i];
    ds.detections.push_back(d);
  }
  return ds;
}

/// A network plus the fusion settings used to count.
class Model {
 public:
  Model(std::uint64_t seed, const std::string& config_json)
      : cfg_(config_json.empty() ? RunConfig{} : run_config_from_json(Json::parse(config_json))),
        model_(EnetModel::build(cfg_.model, seed)) {}

  void load(const std::string& path) { model_.load(load_checkpoint(path)); }
  void save(const std::string& path) const { save_checkpoint(path, model_.parameters()); }
  std::size_t parameter_count() const { return model_.parameter_count(); }

  py::array_t<double> density(const Array& image) const {
    return grid_to_array(EnetEstimator(model_).estimate(image_from_array(image)));
  }

  /// Mask the detections, estimate the rest, return (n_d, n_e, c).
  std::tuple<std::size_t, double, double> count(const Array& image,
                                                const std::vector<std::tuple<double, double, double, double>>& boxes,
                                                const std::vector<double>& scores) const {
    const Tensor img = image_from_array(image);
    const std::size_t h = img.shape()[1], w = img.shape()[2];
    const auto retained = filter_detections(boxes_to_detections(boxes, scores), cfg_.fusion, w, h);
    const auto masked = apply_masks(img, DotAnnotation{"py", w, h, {}}, retained, cfg_.fusion);
    const auto rec = fuse_count(masked.n_d, grid_to_tensor(EnetEstimator(model_).estimate(masked.masked_image)));
    return {rec.n_d, rec.n_e, rec.c};
  }

 private:
  RunConfig cfg_;
  EnetModel model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Detection-masked crowd density estimation (C++ core)";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "density_map",
      [](std::size_t width, std::size_t height, const std::vector<std::pair<double, double>>& points, double sigma,
         bool adaptive) {
        KernelPolicy kp;
        kp.sigma_fixed = sigma;
        kp.mode = adaptive ? KernelMode::Adaptive : KernelMode::Fixed;
        kp.validate();
        return grid_to_array(generate_density_map(make_annotation(width, height, points), kp));
      },
      py::arg("width"), py::arg("height"), py::arg("points"), py::arg("sigma") = 15.0, py::arg("adaptive") = false,
      "Density grid (H, W) whose sum equals the number of points.");

  m.def(
      "mock_detect",
      [](std::size_t width, std::size_t height, const std::vector<std::pair<double, double>>& points, double recall,
         std::size_t box_size, std::uint64_t seed) {
        std::vector<std::tuple<double, double, double, double>> out;
        for (const auto& d : mock_detect(make_annotation(width, height, points), recall, box_size, seed).detections)
          out.emplace_back(d.box.x0, d.box.y0, d.box.x1, d.box.y1);
        return out;
      },
      py::arg("width"), py::arg("height"), py::arg("points"), py::arg("recall"), py::arg("box_size") = 8,
      py::arg("seed") = 0, "Square boxes (x0, y0, x1, y1) around floor(recall * n) of the points.");

  m.def(
      "euclidean_loss",
      [](const Array& pred, const Array& gt) {
        Tape tape(false);
        return euclidean_loss(tape, map_tensor(pred), array_to_grid(gt)).item();
      },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "counting_loss",
      [](const Array& pred, std::size_t n_gt, std::size_t n_d) {
        Tape tape(false);
        return counting_loss(tape, map_tensor(pred), {n_gt, n_d}, LossConfig{}).item();
      },
      py::arg("pred"), py::arg("n_gt"), py::arg("n_d"));
  m.def(
      "combined_loss",
      [](const Array& pred, const Array& gt, std::size_t n_gt, std::size_t n_d, double alpha) {
        Tape tape(false);
        LossConfig cfg;
        cfg.alpha = alpha;
        cfg.validate();
        return combined_loss(tape, map_tensor(pred), array_to_grid(gt), {n_gt, n_d}, cfg).item();
      },
      py::arg("pred"), py::arg("gt"), py::arg("n_gt"), py::arg("n_d"), py::arg("alpha") = 0.1);

  m.def(
      "synthesize",
      [](std::uint64_t seed, std::size_t width, std::size_t height, std::size_t min_dots, std::size_t max_dots) {
        SynthConfig sc;
        sc.width = width;
        sc.height = height;
        sc.min_dots = min_dots;
        sc.max_dots = max_dots;
        sc.validate();
        const auto s = synthesize_scene(sc, seed, "synth");
        py::array_t<double> img({std::size_t(3), height, width});
        std::copy(s.image.data().begin(), s.image.data().end(), img.mutable_data());
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : s.annotation.points) pts.emplace_back(p.x, p.y);
        return py::make_tuple(img, pts);
      },
      py::arg("seed"), py::arg("width") = 64, py::arg("height") = 64, py::arg("min_dots") = 20,
      py::arg("max_dots") = 60, "Synthetic scene: (image (3, H, W), [(x, y), ...]).");

  m.def(
      "load_grid", [](const std::string& path) { return grid_to_array(load_grid(path)); }, py::arg("path"));
  m.def(
      "save_grid", [](const std::string& path, const Array& a) { save_grid(path, array_to_grid(a)); },
      py::arg("path"), py::arg("grid"));

  m.def(
      "mae_mse",
      [](const std::vector<double>& counts, const std::vector<std::size_t>& truth) {
        if (counts.size() != truth.size()) throw ValidationError("counts and truth differ in length");
        std::vector<ImageRecord> rows;
        for (std::size_t i = 0; i < counts.size(); ++i) rows.push_back({"", truth[i], 0, counts[i], counts[i]});
        return mae_mse(rows);
      },
      py::arg("counts"), py::arg("truth"), "(MAE, MSE) with MSE the mean of squared errors.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t entries) {
        double ops = 0.0;
        for (const auto& r : gradcheck_ops(seed)) ops = std::max(ops, r.max_rel_error);
        const double e2e = gradcheck_enet(seed, EnetConfig{}, entries).max_rel_error;
        return py::make_tuple(ops, e2e);
      },
      py::arg("seed") = 1, py::arg("entries") = 20, "(ops max relative error, end-to-end max relative error).");

  py::class_<Model>(m, "Model")
      .def(py::init<std::uint64_t, const std::string&>(), py::arg("seed") = 0, py::arg("config_json") = "")
      .def("load", &Model::load, py::arg("path"))
      .def("save", &Model::save, py::arg("path"))
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def("density", &Model::density, py::arg("image"), "Density map (H, W) of an image (3, H, W) or (H, W, 3).")
      .def("count", &Model::count, py::arg("image"), py::arg("boxes") = std::vector<std::tuple<double, double, double, double>>{},
           py::arg("scores") = std::vector<double>{}, "(n_d, n_e, count) after masking the given boxes.");
}
