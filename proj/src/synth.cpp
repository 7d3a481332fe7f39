#include "polygcn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace polygcn {

namespace {

using json = nlohmann::json;

Polygon translate(Polygon p, double dx, double dy) {
  for (Point& q : p) {
    q.x += dx;
    q.y += dy;
  }
  return p;
}

// Reflects/transposes inside the bounding box [0, w] x [0, h].
Polygon reorient(Polygon p, bool flip_x, bool flip_y, bool transpose) {
  const BoxCWH b = bounding_box(p);
  for (Point& q : p) {
    if (flip_x) q.x = b.right() - (q.x - b.left());
    if (flip_y) q.y = b.bottom() - (q.y - b.top());
    if (transpose) std::swap(q.x, q.y);
  }
  return p;
}

bool separated(const BoxCWH& a, const BoxCWH& b, double gap) {
  return a.right() + gap <= b.left() || b.right() + gap <= a.left() ||
         a.bottom() + gap <= b.top() || b.bottom() + gap <= a.top();
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::Rectangle: return "rectangle";
    case ShapeFamily::RotatedRectangle: return "rotated_rectangle";
    case ShapeFamily::LShape: return "l_shape";
    case ShapeFamily::TShape: return "t_shape";
  }
  return "?";
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("SceneSpec: " + m); };
  if (image_size < 16) fail("image_size must be >= 16");
  if (min_buildings > max_buildings) fail("min_buildings > max_buildings");
  if (vertices < 8 || vertices % 2 != 0) fail("vertices must be even and >= 8");
  double total = 0.0;
  for (double w : family_weights) {
    if (!(w >= 0.0)) fail("family weights must be non-negative");
    total += w;
  }
  if (total <= 0.0) fail("family weights are all zero");
  if (!(min_size > 0.0) || min_size > max_size) fail("invalid size range");
  if (max_size + 2.0 * spacing > static_cast<double>(image_size)) {
    fail("size range does not fit in the image");
  }
  if (intensity_min > intensity_max) fail("invalid intensity range");
  if (background_noise < 0.0) fail("negative noise");
}

bool SceneAnnotation::operator==(const SceneAnnotation& o) const {
  if (id != o.id || image_size != o.image_size || seed != o.seed ||
      buildings.size() != o.buildings.size()) {
    return false;
  }
  for (std::size_t i = 0; i < buildings.size(); ++i) {
    if (!(buildings[i].box == o.buildings[i].box) ||
        buildings[i].polygon != o.buildings[i].polygon) {
      return false;
    }
  }
  return true;
}

Polygon make_footprint(ShapeFamily family, SeededRng& rng, std::size_t units, double unit) {
  const long u = static_cast<long>(units);
  auto pick = [&](long lo, long hi) { return lo + static_cast<long>(rng.below(hi - lo + 1)); };
  Polygon p;
  switch (family) {
    case ShapeFamily::Rectangle:
    case ShapeFamily::RotatedRectangle: {
      const double w = static_cast<double>(pick(2, u - 2)), h = static_cast<double>(u) - w;
      p = {{0, 0}, {w, 0}, {w, h}, {0, h}};
      break;
    }
    case ShapeFamily::LShape: {
      const long w = pick(2, u - 2), h = u - w;
      const double cw = static_cast<double>(pick(1, w - 1));
      const double ch = static_cast<double>(pick(1, h - 1));
      const double W = static_cast<double>(w), H = static_cast<double>(h);
      p = {{0, 0}, {W - cw, 0}, {W - cw, ch}, {W, ch}, {W, H}, {0, H}};
      p = reorient(p, rng.below(2) == 1, rng.below(2) == 1, false);
      break;
    }
    case ShapeFamily::TShape: {
      const long w = pick(3, u - 2), h = u - w;
      const long sw = pick(1, w - 2);
      const long ml = pick(1, w - sw - 1);
      const double bh = static_cast<double>(pick(1, h - 1));
      const double W = static_cast<double>(w), H = static_cast<double>(h);
      const double a = static_cast<double>(ml), b = static_cast<double>(ml + sw);
      p = {{0, 0}, {W, 0}, {W, bh}, {b, bh}, {b, H}, {a, H}, {a, bh}, {0, bh}};
      p = reorient(p, false, rng.below(2) == 1, rng.below(2) == 1);
      break;
    }
  }
  for (Point& q : p) {
    q.x *= unit;
    q.y *= unit;
  }
  if (family == ShapeFamily::RotatedRectangle) {
    const double deg = rng.uniform(5.0, 30.0) * (rng.below(2) == 1 ? 1.0 : -1.0);
    const double t = deg * std::numbers::pi / 180.0, c = std::cos(t), s = std::sin(t);
    const BoxCWH b = bounding_box(p);
    for (Point& q : p) {
      const double x = q.x - b.x, y = q.y - b.y;
      q = {c * x - s * y, s * x + c * y};
    }
  }
  const BoxCWH b = bounding_box(p);
  return translate(std::move(p), -b.left(), -b.top());
}

Polygon resample_polygon(std::span<const Point> poly, std::size_t n) {
  const std::size_t m = poly.size();
  if (m < 3) throw std::invalid_argument("resample_polygon: need at least 3 vertices");
  if (n < 3) throw std::invalid_argument("resample_polygon: need n >= 3");
  std::vector<double> cum(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % m];
    cum[i + 1] = cum[i] + std::hypot(b.x - a.x, b.y - a.y);
  }
  const double total = cum[m];
  if (!(total > 0.0)) throw std::invalid_argument("resample_polygon: zero perimeter");
  Polygon out;
  out.reserve(n);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = total * static_cast<double>(k) / static_cast<double>(n);
    while (seg + 1 < m && cum[seg + 1] <= t) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double f = len > 0.0 ? (t - cum[seg]) / len : 0.0;
    const Point& a = poly[seg];
    const Point& b = poly[(seg + 1) % m];
    out.push_back({a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)});
  }
  if (signed_area(out) < 0.0) std::reverse(out.begin() + 1, out.end());
  return out;
}

BoundaryRaster rasterize_boundary(std::span<const Point> unit_poly, std::size_t rows,
                                  std::size_t cols) {
  if (rows < 2 || cols < 2) throw std::invalid_argument("rasterize_boundary: grid too small");
  BoundaryRaster r{rows, cols, std::vector<std::uint8_t>(rows * cols, 0),
                   std::vector<std::uint8_t>(rows * cols, 0)};
  const std::size_t n = unit_poly.size();
  if (n == 0) return r;
  auto cell = [&](const Point& p) {
    const long c = std::lround(std::clamp(p.x, 0.0, 1.0) * static_cast<double>(cols - 1));
    const long rr = std::lround(std::clamp(p.y, 0.0, 1.0) * static_cast<double>(rows - 1));
    return std::pair{rr, c};
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto [r0, c0] = cell(unit_poly[i]);
    const auto [r1, c1] = cell(unit_poly[(i + 1) % n]);
    draw_line(r0, c0, r1, c1, [&](long y, long x) { r.edge[y * cols + x] = 1; });
    for (long dy = -1; dy <= 1; ++dy) {
      for (long dx = -1; dx <= 1; ++dx) {
        const long y = r0 + dy, x = c0 + dx;
        if (y < 0 || x < 0 || y >= static_cast<long>(rows) || x >= static_cast<long>(cols)) {
          continue;
        }
        r.vertex[y * cols + x] = 1;
      }
    }
  }
  return r;
}

Scene sample_scene(SeededRng& rng, const SceneSpec& spec, std::string id) {
  spec.validate();
  const double S = static_cast<double>(spec.image_size);
  const std::size_t units = spec.vertices / 2;
  double wsum = 0.0;
  for (double w : spec.family_weights) wsum += w;

  Scene scene;
  scene.annotation.id = std::move(id);
  scene.annotation.image_size = spec.image_size;
  scene.annotation.seed = rng.seed();

  const std::size_t target =
      spec.min_buildings + rng.below(spec.max_buildings - spec.min_buildings + 1);
  std::vector<Polygon> footprints;
  for (std::size_t b = 0; b < target; ++b) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      double pick = rng.uniform() * wsum;
      std::size_t f = 0;
      while (f + 1 < spec.family_weights.size() && pick >= spec.family_weights[f]) {
        pick -= spec.family_weights[f];
        ++f;
      }
      while (spec.family_weights[f] == 0.0) --f;
      const double half = rng.uniform(spec.min_size, spec.max_size);
      Polygon fp = make_footprint(static_cast<ShapeFamily>(f), rng, units,
                                  half / static_cast<double>(units));
      const BoxCWH fb = bounding_box(fp);
      const double free_x = S - 2.0 * spec.spacing - fb.w;
      const double free_y = S - 2.0 * spec.spacing - fb.h;
      if (free_x < 0.0 || free_y < 0.0) continue;
      const double ox = spec.spacing + rng.uniform() * free_x;
      const double oy = spec.spacing + rng.uniform() * free_y;
      fp = translate(std::move(fp), ox, oy);
      const BoxCWH box = bounding_box(fp);
      const bool clear = std::all_of(footprints.begin(), footprints.end(), [&](const Polygon& o) {
        return separated(bounding_box(o), box, spec.spacing);
      });
      if (!clear) continue;
      footprints.push_back(std::move(fp));
      placed = true;
    }
    if (!placed) {
      std::clog << "sample_scene: " << scene.annotation.id << ": placed " << footprints.size()
                << " of " << target << " buildings after " << spec.max_retries << " retries\n";
      break;
    }
  }

  Image img(spec.image_size, spec.image_size, 1);
  std::vector<double> canvas(spec.image_size * spec.image_size, spec.background_level);
  const RasterGrid grid{0.0, 0.0, 1.0, 1.0, spec.image_size, spec.image_size};
  for (const Polygon& fp : footprints) {
    const double level = rng.uniform(spec.intensity_min, spec.intensity_max);
    const auto mask = fill_polygon(fp, grid);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) canvas[i] = level;
    }
    Building b;
    b.polygon = resample_polygon(fp, spec.vertices);
    b.box = bounding_box(b.polygon);
    scene.annotation.buildings.push_back(std::move(b));
  }
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    img.pixels[i] = quantize(canvas[i] + spec.background_noise * rng.normal());
  }
  scene.image = std::move(img);
  return scene;
}

Scene sample_dataset_scene(std::uint64_t seed, std::size_t index, const SceneSpec& spec) {
  SeededRng rng = SeededRng(seed).child(index);
  std::ostringstream id;
  id << "s" << std::setw(5) << std::setfill('0') << index;
  return sample_scene(rng, spec, id.str());
}

std::vector<Scene> generate_scenes(std::uint64_t seed, std::size_t count, const SceneSpec& spec,
                                   std::size_t first) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_dataset_scene(seed, first + i, spec));
  return out;
}

namespace {

json spec_to_json(const SceneSpec& s) {
  return json{{"image_size", s.image_size},
              {"min_buildings", s.min_buildings},
              {"max_buildings", s.max_buildings},
              {"family_weights", s.family_weights},
              {"min_size", s.min_size},
              {"max_size", s.max_size},
              {"background_level", s.background_level},
              {"background_noise", s.background_noise},
              {"intensity_min", s.intensity_min},
              {"intensity_max", s.intensity_max},
              {"spacing", s.spacing},
              {"vertices", s.vertices}};
}

json annotation_to_json(const SceneAnnotation& a) {
  json buildings = json::array();
  for (const Building& b : a.buildings) {
    json poly = json::array();
    for (const Point& p : b.polygon) poly.push_back({p.x, p.y});
    buildings.push_back({{"box", {b.box.x, b.box.y, b.box.w, b.box.h}}, {"polygon", poly}});
  }
  return json{{"id", a.id}, {"image_size", a.image_size}, {"seed", a.seed},
              {"buildings", buildings}};
}

SceneAnnotation annotation_from_json(const json& j) {
  SceneAnnotation a;
  a.id = j.at("id").get<std::string>();
  a.image_size = j.at("image_size").get<std::size_t>();
  a.seed = j.at("seed").get<std::uint64_t>();
  for (const json& b : j.at("buildings")) {
    Building out;
    const auto box = b.at("box").get<std::vector<double>>();
    if (box.size() != 4) throw std::runtime_error("box must have 4 numbers");
    out.box = {box[0], box[1], box[2], box[3]};
    for (const json& p : b.at("polygon")) {
      const auto xy = p.get<std::vector<double>>();
      if (xy.size() != 2) throw std::runtime_error("polygon vertex must have 2 numbers");
      out.polygon.push_back({xy[0], xy[1]});
    }
    a.buildings.push_back(std::move(out));
  }
  return a;
}

}  // namespace

void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& dir,
                   const SceneSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "ann");
  std::ofstream manifest(dir / "manifest");
  if (!manifest) throw std::runtime_error("write_dataset: cannot write " + (dir / "manifest").string());
  for (const Scene& s : scenes) {
    const std::string img = "images/" + s.annotation.id + ".png";
    const std::string ann = "ann/" + s.annotation.id + ".json";
    write_png(s.image, dir / img);
    json j = annotation_to_json(s.annotation);
    j["spec"] = spec_to_json(spec);
    std::ofstream out(dir / ann);
    if (!out) throw std::runtime_error("write_dataset: cannot write " + (dir / ann).string());
    out << j.dump(1) << '\n';
    manifest << s.annotation.id << ' ' << img << ' ' << ann << '\n';
  }
  if (!manifest) throw std::runtime_error("write_dataset: manifest write failed");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.root = dir;
  std::ifstream manifest(dir / "manifest");
  if (!manifest) throw std::runtime_error("read_dataset: missing manifest in " + dir.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, img, ann, extra;
    if (!(ls >> id >> img >> ann) || (ls >> extra)) {
      throw std::runtime_error("read_dataset: malformed manifest line " + std::to_string(lineno));
    }
    const fs::path img_path = dir / img, ann_path = dir / ann;
    for (const fs::path& p : {img_path, ann_path}) {
      if (!fs::exists(p)) throw std::runtime_error("read_dataset: missing file " + p.string());
    }
    std::ifstream in(ann_path);
    SceneAnnotation a;
    try {
      a = annotation_from_json(json::parse(in));
    } catch (const std::exception& e) {
      throw std::runtime_error("read_dataset: bad annotation " + ann_path.string() + ": " +
                               e.what());
    }
    if (a.id != id) {
      throw std::runtime_error("read_dataset: manifest id " + id + " does not match " +
                               ann_path.string());
    }
    ds.annotations.push_back(std::move(a));
    ds.image_paths.push_back(img_path);
  }
  return ds;
}

Image Dataset::load_image(std::size_t i) const { return read_png(image_paths.at(i)); }

}  // namespace polygcn
