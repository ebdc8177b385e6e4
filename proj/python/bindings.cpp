#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "patchforge/cli.hpp"
#include "patchforge/creases.hpp"
#include "patchforge/error.hpp"
#include "patchforge/evaluation.hpp"
#include "patchforge/patch_core.hpp"

namespace py = pybind11;
using namespace patchforge;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 3) throw py::value_error("expected an H x W x C array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.data().begin());
  return img;
}

Array to_array(const Image& img) {
  Array a({img.height(), img.width(), img.channels()});
  std::copy(img.data().begin(), img.data().end(), a.mutable_data());
  return a;
}

std::vector<Crease> to_creases(const std::vector<std::array<double, 4>>& items) {
  std::vector<Crease> out;
  for (const auto& c : items) out.push_back({c[0], c[1], c[2], c[3]});
  return out;
}

}  // namespace

PYBIND11_MODULE(_patchforge, m) {
  m.doc() = "Adversarial patch losses, warps, metrics and the command-line driver";

  static py::exception<Error> error(m, "PatchforgeError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error(e.what());
    }
  });

  m.def("similarity_loss", [](const Array& p, const Array& n) { return similarity_loss(to_image(p), to_image(n)); },
        py::arg("patch"), py::arg("guide"));
  m.def("tv_loss", [](const Array& p) { return tv_loss(to_image(p)); }, py::arg("patch"));
  m.def(
      "crease_multiplier",
      [](double x, double y, std::array<double, 4> c, int width, int height) {
        return crease_multiplier(x, y, Crease{c[0], c[1], c[2], c[3]}, PatchDims{width, height});
      },
      py::arg("x"), py::arg("y"), py::arg("crease"), py::arg("width"), py::arg("height"));
  m.def(
      "apply_creases",
      [](const Array& p, const std::vector<std::array<double, 4>>& creases) {
        return to_array(apply_creases(to_image(p), to_creases(creases)));
      },
      py::arg("patch"), py::arg("creases"), "creases: list of (x0, y0, dx, dy)");
  m.def(
      "average_precision",
      [](const std::vector<std::tuple<std::size_t, double, std::array<double, 4>>>& preds,
         const std::vector<std::vector<std::array<double, 4>>>& truth, double iou_threshold) {
        std::vector<ScoredBox> p;
        for (const auto& [img, score, b] : preds) p.push_back({img, score, {b[0], b[1], b[2], b[3], 0}});
        std::vector<std::vector<BoundingBox>> gt;
        for (const auto& boxes : truth) {
          auto& row = gt.emplace_back();
          for (const auto& b : boxes) row.push_back({b[0], b[1], b[2], b[3], 0});
        }
        return average_precision(p, gt, iou_threshold).ap;
      },
      py::arg("predictions"), py::arg("ground_truth"), py::arg("iou_threshold") = kMatchIou,
      "predictions: (image, score, (cx, cy, w, h)); ground_truth: per-image (cx, cy, w, h) lists");
  m.def("load_patch", [](const std::string& path) { return to_array(load_patch(path).pixels); }, py::arg("path"));
  m.def("print_pixels", &print_pixels, py::arg("cm"), py::arg("dpi"));
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return run_cli(args);
      },
      py::arg("args"), "Runs a patchforge command line; returns the exit code");
}
