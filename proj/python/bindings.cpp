#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <stdexcept>

#include "polygcn/boxes.hpp"
#include "polygcn/config.hpp"
#include "polygcn/eval.hpp"
#include "polygcn/polyhead.hpp"
#include "polygcn/results.hpp"
#include "polygcn/synth.hpp"
#include "polygcn/trainer.hpp"

namespace py = pybind11;
using namespace polygcn;

namespace {

using Points = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Pixels = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Polygon to_polygon(const Points& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw std::invalid_argument("polygon must have shape (N, 2)");
  Polygon p(static_cast<std::size_t>(a.shape(0)));
  const double* d = a.data();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = {d[2 * i], d[2 * i + 1]};
  return p;
}

Points to_array(const Polygon& p) {
  Points a({static_cast<py::ssize_t>(p.size()), py::ssize_t{2}});
  double* d = a.mutable_data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    d[2 * i] = p[i].x;
    d[2 * i + 1] = p[i].y;
  }
  return a;
}

Image to_image(const Pixels& a) {
  if (a.ndim() != 2 && !(a.ndim() == 3 && (a.shape(2) == 1 || a.shape(2) == 3))) {
    throw std::invalid_argument("image must have shape (H, W), (H, W, 1) or (H, W, 3)");
  }
  Image img(static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0)),
            a.ndim() == 3 ? static_cast<std::size_t>(a.shape(2)) : 1);
  std::memcpy(img.pixels.data(), a.data(), img.pixels.size());
  return img;
}

Pixels from_image(const Image& img) {
  std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(img.height),
                                 static_cast<py::ssize_t>(img.width)};
  if (img.channels > 1) shape.push_back(static_cast<py::ssize_t>(img.channels));
  Pixels a(shape);
  std::memcpy(a.mutable_data(), img.pixels.data(), img.pixels.size());
  return a;
}

py::dict detection_dict(const Detection& d) {
  py::dict out;
  out["box"] = py::make_tuple(d.box.x, d.box.y, d.box.w, d.box.h);
  out["score"] = d.score;
  out["polygon"] = to_array(d.polygon);
  return out;
}

py::dict match_dict(const MatchResult& r) {
  const SplitMetrics m = split_metrics("", r);
  py::dict out;
  out["tp"] = r.tp;
  out["fp"] = r.fp;
  out["fn"] = r.fn;
  out["precision"] = m.precision;
  out["recall"] = m.recall;
  out["f1"] = m.f1;
  return out;
}

// A trained model plus the configuration it was built from.
class Detector {
 public:
  Detector(const std::string& config_text, const std::string& checkpoint)
      : config_(parse_run_config(config_text)), model_(config_.model, config_.model_seed) {
    config_.validate();
    if (!checkpoint.empty()) {
      const CheckpointInfo info = load_checkpoint(model_, checkpoint);
      if (info.warning) PyErr_WarnEx(PyExc_UserWarning, info.warning->c_str(), 1);
    }
  }

  py::list infer(const Pixels& image) const {
    py::list out;
    for (const Detection& d : polygcn::infer(model_, to_image(image))) out.append(detection_dict(d));
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Parameter& p : model_.params.all()) n += p.tensor.numel();
    return n;
  }

 private:
  RunConfig config_;
  Model model_;
};

}  // namespace

PYBIND11_MODULE(_polygcn, m) {
  m.doc() = "Building footprint detection with a graph-convolutional polygon head";

  m.def("default_config", [] { return format_run_config(default_run_config()); },
        "Default configuration as INI text.");
  m.def(
      "normalize_config", [](const std::string& text) { return format_run_config(parse_run_config(text)); },
      py::arg("text"), "Parse INI text and write it back with every key filled in.");

  m.def(
      "cyclic_polygon_loss",
      [](const Points& pred, const Points& gt) {
        const CyclicLoss c =
            cyclic_polygon_loss({polygon_tensor(to_polygon(pred))}, {to_polygon(gt)}, false);
        return py::make_tuple(c.loss.item(), c.shifts.at(0));
      },
      py::arg("pred"), py::arg("gt"),
      "Minimum over cyclic shifts of the summed per-vertex L1 distance; returns (loss, shift).");

  m.def(
      "polygon_iou",
      [](const Points& p, const Points& q) { return polygon_iou(to_polygon(p), to_polygon(q)); },
      py::arg("p"), py::arg("q"), "Rasterized polygon IoU.");

  m.def(
      "match_and_score",
      [](const std::vector<Points>& preds, const std::vector<double>& scores,
         const std::vector<Points>& gts, double threshold) {
        if (preds.size() != scores.size()) throw std::invalid_argument("one score per prediction");
        std::vector<ScoredPolygon> sp;
        for (std::size_t i = 0; i < preds.size(); ++i) sp.push_back({to_polygon(preds[i]), scores[i]});
        std::vector<Polygon> gp;
        for (const Points& g : gts) gp.push_back(to_polygon(g));
        return match_dict(match_and_score(sp, gp, threshold));
      },
      py::arg("preds"), py::arg("scores"), py::arg("gts"), py::arg("threshold") = 0.5,
      "Greedy confidence-ordered matching; returns tp/fp/fn/precision/recall/f1.");

  m.def(
      "encode_deltas",
      [](std::array<double, 4> box, std::array<double, 4> anchor) {
        const BoxDelta d = encode_deltas({box[0], box[1], box[2], box[3]},
                                         {anchor[0], anchor[1], anchor[2], anchor[3]});
        return std::array<double, 4>{d.tx, d.ty, d.tw, d.th};
      },
      py::arg("box"), py::arg("anchor"), "Boxes are (cx, cy, w, h).");
  m.def(
      "decode_deltas",
      [](std::array<double, 4> delta, std::array<double, 4> anchor) {
        const BoxCWH b = decode_deltas({delta[0], delta[1], delta[2], delta[3]},
                                       {anchor[0], anchor[1], anchor[2], anchor[3]});
        return std::array<double, 4>{b.x, b.y, b.w, b.h};
      },
      py::arg("delta"), py::arg("anchor"));

  m.def(
      "generate_scene",
      [](std::uint64_t seed, std::size_t index, const std::string& config_text) {
        const Scene s = sample_dataset_scene(seed, index, parse_run_config(config_text).scenes);
        py::list polys;
        for (const Building& b : s.annotation.buildings) polys.append(to_array(b.polygon));
        return py::make_tuple(from_image(s.image), polys);
      },
      py::arg("seed"), py::arg("index"), py::arg("config") = "",
      "Scene `index` of the dataset drawn from `seed`: (uint8 image, list of (N, 2) polygons).");

  m.def(
      "render_overlay",
      [](const Pixels& image, const std::vector<Points>& polygons, const std::vector<Points>& gts) {
        ImageResult r;
        for (const Points& p : polygons) {
          Detection d;
          d.polygon = to_polygon(p);
          r.detections.push_back(d);
        }
        std::vector<Polygon> gp;
        for (const Points& g : gts) gp.push_back(to_polygon(g));
        return from_image(render_overlay(to_image(image), r, gp));
      },
      py::arg("image"), py::arg("polygons"), py::arg("gts") = std::vector<Points>{});

  py::class_<Detector>(m, "Detector")
      .def(py::init<const std::string&, const std::string&>(), py::arg("config") = "",
           py::arg("checkpoint") = "",
           "Model built from INI text; weights come from `checkpoint` when given, otherwise "
           "from the configured seed.")
      .def("infer", &Detector::infer, py::arg("image"))
      .def_property_readonly("parameter_count", &Detector::parameter_count);
}
