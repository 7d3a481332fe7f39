#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "polygcn/boxes.hpp"
#include "polygcn/image.hpp"
#include "polygcn/polygon.hpp"
#include "polygcn/rng.hpp"

namespace polygcn {

enum class ShapeFamily { Rectangle = 0, RotatedRectangle = 1, LShape = 2, TShape = 3 };
const char* family_name(ShapeFamily f);

struct SceneSpec {
  std::size_t image_size = 128;
  std::size_t min_buildings = 1;
  std::size_t max_buildings = 4;
  // Weights over rectangle, rotated rectangle, L-shape, T-shape.
  std::array<double, 4> family_weights{1.0, 0.0, 1.0, 1.0};
  // Half-perimeter (w + h) of the footprint, pixels.
  double min_size = 32.0;
  double max_size = 64.0;
  double background_level = 70.0;
  double background_noise = 8.0;
  double intensity_min = 150.0;
  double intensity_max = 230.0;
  // Minimum gap between building bounding boxes and to the image border.
  double spacing = 3.0;
  std::size_t vertices = 16;
  std::size_t max_retries = 100;

  void validate() const;
};

struct Building {
  BoxCWH box;       // bounding box of `polygon`
  Polygon polygon;  // image pixels, `vertices` points, clockwise
};

struct SceneAnnotation {
  std::string id;
  std::size_t image_size = 0;
  std::uint64_t seed = 0;
  std::vector<Building> buildings;
  bool operator==(const SceneAnnotation& o) const;
};

struct Scene {
  Image image;  // 8-bit grayscale
  SceneAnnotation annotation;
};

/// Footprint outline (before resampling) for a family on a unit grid of
/// `half_perimeter_units` cells, scaled by `unit` pixels, with its top-left
/// bounding corner at the origin.
Polygon make_footprint(ShapeFamily family, SeededRng& rng, std::size_t half_perimeter_units,
                       double unit);

/// Buildings are placed on separated bounding boxes by rejection sampling.
/// Footprint side lengths are multiples of perimeter / vertices, so the
/// resampled polygon keeps every corner of rectilinear shapes.
Scene sample_scene(SeededRng& rng, const SceneSpec& spec, std::string id = "scene");

/// Scene `index` of a dataset generated from `seed`; independent of other indices.
Scene sample_dataset_scene(std::uint64_t seed, std::size_t index, const SceneSpec& spec);

/// `n` points at equal arc-length spacing around `poly`, starting at its
/// first vertex, in clockwise order (y down).
Polygon resample_polygon(std::span<const Point> poly, std::size_t n);

struct BoundaryRaster {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> vertex;
  std::vector<std::uint8_t> edge;
};

/// Rasterizes a unit-frame polygon onto a rows x cols grid whose cell (r, c)
/// sits at unit coordinate (c / (cols-1), r / (rows-1)). Edges are 1-cell
/// lines, vertices 3x3 squares clipped to the grid. Coordinates outside
/// [0, 1] are clamped.
BoundaryRaster rasterize_boundary(std::span<const Point> unit_poly, std::size_t rows,
                                  std::size_t cols);

struct Dataset {
  std::filesystem::path root;
  std::vector<SceneAnnotation> annotations;
  std::vector<std::filesystem::path> image_paths;

  std::size_t size() const { return annotations.size(); }
  Image load_image(std::size_t i) const;
};

/// Layout: `manifest` (id, image file, annotation file per line),
/// `images/<id>.png`, `ann/<id>.json`.
void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& dir,
                   const SceneSpec& spec);
Dataset read_dataset(const std::filesystem::path& dir);

/// Generates `count` scenes from `seed` starting at scene index `first`.
std::vector<Scene> generate_scenes(std::uint64_t seed, std::size_t count, const SceneSpec& spec,
                                   std::size_t first = 0);

}  // namespace polygcn
