#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "polygcn/config.hpp"
#include "polygcn/image.hpp"
#include "polygcn/model.hpp"

namespace polygcn {

/// Detections for one image, each with its box, confidence and polygon.
struct ImageResult {
  std::string id;
  std::vector<Detection> detections;
};

/// `{"images": [{"id", "detections": [{"box": [cx,cy,w,h], "score", "polygon": [[x,y],...]}]}]}`.
/// Doubles are written with round-trip precision.
std::string results_to_json(std::span<const ImageResult> results);
std::vector<ImageResult> results_from_json(const std::string& text);
void save_results(std::span<const ImageResult> results, const std::filesystem::path& path);
std::vector<ImageResult> load_results(const std::filesystem::path& path);

/// One FeatureCollection: a Polygon feature per detection with a closed
/// ring (first vertex repeated last) and `score`/`box` properties.
/// Coordinates go through `georef`; identity leaves them in pixels.
std::string to_geojson(const ImageResult& result, const Georeference& georef = {});
void export_geojson(const ImageResult& result, const std::filesystem::path& path,
                    const Georeference& georef = {});

/// RGB copy of `image` with ground-truth outlines in blue, predicted
/// outlines in green and predicted vertices as single red pixels on top.
/// A point (x, y) lands in pixel (floor(y), floor(x)); off-image parts are clipped.
Image render_overlay(const Image& image, const ImageResult& result,
                     std::span<const Polygon> ground_truth = {});

}  // namespace polygcn
