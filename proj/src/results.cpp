#include "polygcn/results.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace polygcn {

using json = nlohmann::json;

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

json box_json(const BoxCWH& b) { return json::array({b.x, b.y, b.w, b.h}); }

}  // namespace

std::string results_to_json(std::span<const ImageResult> results) {
  json images = json::array();
  for (const ImageResult& r : results) {
    json dets = json::array();
    for (const Detection& d : r.detections) {
      json poly = json::array();
      for (const Point& p : d.polygon) poly.push_back({p.x, p.y});
      dets.push_back({{"box", box_json(d.box)}, {"score", d.score}, {"polygon", poly}});
    }
    images.push_back({{"id", r.id}, {"detections", dets}});
  }
  return json{{"images", images}}.dump(1);
}

std::vector<ImageResult> results_from_json(const std::string& text) {
  const json j = json::parse(text);
  std::vector<ImageResult> out;
  for (const json& im : j.at("images")) {
    ImageResult r;
    r.id = im.at("id").get<std::string>();
    for (const json& dj : im.at("detections")) {
      Detection d;
      const auto box = dj.at("box").get<std::vector<double>>();
      if (box.size() != 4) throw std::runtime_error("results: box must have 4 numbers");
      d.box = {box[0], box[1], box[2], box[3]};
      d.score = dj.at("score").get<double>();
      for (const json& p : dj.at("polygon")) {
        const auto xy = p.get<std::vector<double>>();
        if (xy.size() != 2) throw std::runtime_error("results: vertex must have 2 numbers");
        d.polygon.push_back({xy[0], xy[1]});
      }
      r.detections.push_back(std::move(d));
    }
    out.push_back(std::move(r));
  }
  return out;
}

void save_results(std::span<const ImageResult> results, const std::filesystem::path& path) {
  write_text(path, results_to_json(results));
}

std::vector<ImageResult> load_results(const std::filesystem::path& path) {
  return results_from_json(read_text(path));
}

std::string to_geojson(const ImageResult& result, const Georeference& georef) {
  json features = json::array();
  for (const Detection& d : result.detections) {
    if (d.polygon.empty()) continue;
    json ring = json::array();
    for (const Point& p : d.polygon) {
      const Point g = georef.apply(p);
      ring.push_back({g.x, g.y});
    }
    ring.push_back(ring.front());
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", json::array({ring})}}},
                        {"properties", {{"score", d.score}, {"box", box_json(d.box)}}}});
  }
  return json{{"type", "FeatureCollection"}, {"name", result.id}, {"features", features}}.dump(1);
}

void export_geojson(const ImageResult& result, const std::filesystem::path& path,
                    const Georeference& georef) {
  write_text(path, to_geojson(result, georef));
}

Image render_overlay(const Image& image, const ImageResult& result,
                     std::span<const Polygon> ground_truth) {
  Image out = to_rgb(image);
  const auto cell = [](double v) { return static_cast<long>(std::floor(v)); };
  const auto put = [&out](long r, long c, std::uint8_t red, std::uint8_t green, std::uint8_t blue) {
    if (r < 0 || c < 0 || r >= static_cast<long>(out.height) || c >= static_cast<long>(out.width)) {
      return;
    }
    const auto ur = static_cast<std::size_t>(r), uc = static_cast<std::size_t>(c);
    out.at(ur, uc, 0) = red;
    out.at(ur, uc, 1) = green;
    out.at(ur, uc, 2) = blue;
  };
  const auto outline = [&](const Polygon& poly, std::uint8_t red, std::uint8_t green,
                           std::uint8_t blue) {
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point& a = poly[i];
      const Point& b = poly[(i + 1) % poly.size()];
      if (!std::isfinite(a.x) || !std::isfinite(a.y) || !std::isfinite(b.x) || !std::isfinite(b.y)) {
        continue;
      }
      draw_line(cell(a.y), cell(a.x), cell(b.y), cell(b.x),
                [&](long r, long c) { put(r, c, red, green, blue); });
    }
  };
  for (const Polygon& g : ground_truth) outline(g, 0, 0, 255);
  for (const Detection& d : result.detections) outline(d.polygon, 0, 255, 0);
  for (const Detection& d : result.detections) {
    for (const Point& p : d.polygon) {
      if (std::isfinite(p.x) && std::isfinite(p.y)) put(cell(p.y), cell(p.x), 255, 0, 0);
    }
  }
  return out;
}

}  // namespace polygcn
