#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "polygcn/model.hpp"
#include "polygcn/synth.hpp"
#include "polygcn/trainer.hpp"

namespace polygcn {

/// Pixel-to-world affine map, GDAL order:
///   X = t[0] + col * t[1] + row * t[2]
///   Y = t[3] + col * t[4] + row * t[5]
struct Georeference {
  std::array<double, 6> transform{0.0, 1.0, 0.0, 0.0, 0.0, 1.0};

  Point apply(Point p) const;
  bool is_identity() const;
};

/// Everything a CLI run needs, read from one INI-style file with the
/// sections [backbone], [anchors], [poly], [model], [loss], [train],
/// [scenes], [data], [eval] and [georef].
struct RunConfig {
  ModelConfig model;
  std::uint64_t model_seed = 1;
  TrainConfig train;  // train.lambda is the [loss] lambda
  SceneSpec scenes;
  std::uint64_t data_seed = 11;
  std::size_t train_count = 200;
  std::size_t test_count = 50;
  double iou_threshold = 0.5;
  Georeference georef;

  /// Sets the data, model and training seeds together.
  void set_seed(std::uint64_t seed);
  /// Field checks plus cross-section consistency (image size, vertex count).
  void validate() const;
};

/// Desk-scale defaults: 128 px scenes, 16-vertex polygons, SGD with the
/// 10/5/5 epoch schedule.
RunConfig default_run_config();

/// Missing keys keep their defaults; unknown sections or keys, and values
/// that do not parse, throw std::invalid_argument naming the key.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key, one per line, in a form parse_run_config reads back exactly.
std::string format_run_config(const RunConfig& config);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace polygcn
