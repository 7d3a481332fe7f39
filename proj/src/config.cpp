#include "polygcn/config.hpp"

#include <algorithm>
#include <array>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace polygcn {

namespace pt = boost::property_tree;

Point Georeference::apply(Point p) const {
  const auto& t = transform;
  return {t[0] + p.x * t[1] + p.y * t[2], t[3] + p.x * t[4] + p.y * t[5]};
}

bool Georeference::is_identity() const { return transform == Georeference{}.transform; }

void RunConfig::set_seed(std::uint64_t seed) {
  data_seed = seed;
  model_seed = seed;
  train.seed = seed;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  scenes.validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (scenes.image_size != model.backbone.image_size) {
    fail("[scenes] image_size " + std::to_string(scenes.image_size) +
         " differs from [backbone] image_size " + std::to_string(model.backbone.image_size));
  }
  if (scenes.vertices != model.poly.vertices) {
    fail("[scenes] vertices " + std::to_string(scenes.vertices) + " differs from [poly] vertices " +
         std::to_string(model.poly.vertices));
  }
  if (train_count == 0) fail("[data] train_count must be >= 1");
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) fail("[eval] iou_threshold must be in (0, 1]");
  const auto& t = georef.transform;
  if (t[1] * t[5] - t[2] * t[4] == 0.0) fail("[georef] transform is singular");
}

RunConfig default_run_config() {
  RunConfig c;
  c.train.seed = 3;
  c.train.stage_lr_scale = {1.0, 1.0, 0.01};
  c.train.epochs_per_stage = {10, 5, 5};
  return c;
}

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  std::array<char, 32> buf{};
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

template <class T>
T parse_number(const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("not a number: '" + text + "'");
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T>
std::string join(const T& values) {
  std::string s;
  for (const auto& v : values) {
    if (!s.empty()) s += ", ";
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      s += fmt(v);
    } else {
      s += std::to_string(v);
    }
  }
  return s;
}

template <class T>
Field num(std::string sec, std::string key, T& v) {
  return {sec, key,
          [&v] {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt(v);
            } else {
              return std::to_string(v);
            }
          },
          [&v](const std::string& t) { v = parse_number<T>(t); }};
}
Field flag(std::string sec, std::string key, bool& v) {
  return {sec, key, [&v] { return std::string(v ? "true" : "false"); },
          [&v](const std::string& t) {
            if (t == "true") {
              v = true;
            } else if (t == "false") {
              v = false;
            } else {
              throw std::invalid_argument("expected true or false, got '" + t + "'");
            }
          }};
}
Field doubles(std::string sec, std::string key, std::vector<double>& v) {
  return {sec, key, [&v] { return join(v); },
          [&v](const std::string& t) {
            v.clear();
            for (const auto& item : split_list(t)) v.push_back(parse_number<double>(item));
          }};
}
template <class T, std::size_t N>
Field fixed(std::string sec, std::string key, std::array<T, N>& v) {
  return {sec, key, [&v] { return join(v); },
          [&v](const std::string& t) {
            const auto items = split_list(t);
            if (items.size() != N) {
              throw std::invalid_argument("expected " + std::to_string(N) + " comma-separated values");
            }
            for (std::size_t i = 0; i < N; ++i) v[i] = parse_number<T>(items[i]);
          }};
}

std::vector<Field> fields(RunConfig& c) {
  BackboneConfig& b = c.model.backbone;
  AnchorConfig& a = c.model.anchors;
  PolyHeadConfig& p = c.model.poly;
  TrainConfig& t = c.train;
  SceneSpec& s = c.scenes;
  return {
      num("backbone", "image_size", b.image_size),
      num("backbone", "channels_per_level", b.channels_per_level),
      num("backbone", "num_levels", b.num_levels),
      num("backbone", "stem_channels", b.stem_channels),
      num("backbone", "blocks_per_stage", b.blocks_per_stage),
      num("backbone", "rpn_hidden", b.rpn_hidden),
      num("backbone", "proposal_top_k", b.proposal_top_k),
      num("backbone", "loc_roi_size", b.loc_roi_size),
      num("backbone", "loc_hidden", b.loc_hidden),
      num("backbone", "min_proposal_size", b.min_proposal_size),
      flag("backbone", "fine_map", b.fine_map),

      doubles("anchors", "strides", a.strides),
      doubles("anchors", "ratios", a.ratios),
      doubles("anchors", "scales", a.scales),
      num("anchors", "nms_threshold", a.nms_threshold),
      num("anchors", "max_boxes", a.max_boxes),
      num("anchors", "positive_share", a.pos_neg_ratio.first),
      num("anchors", "negative_share", a.pos_neg_ratio.second),
      num("anchors", "pos_iou", a.pos_iou),
      num("anchors", "neg_iou", a.neg_iou),

      num("poly", "vertices", p.vertices),
      num("poly", "roi_size", p.roi_size),
      num("poly", "init_radius", p.init_radius),
      num("poly", "gcn_steps", p.gcn_steps),
      num("poly", "blocks_per_step", p.blocks_per_step),
      num("poly", "hidden", p.hidden),
      num("poly", "boundary_hidden", p.boundary_hidden),

      num("model", "seed", c.model_seed),
      num("model", "roi_margin", c.model.roi_margin),
      num("model", "score_threshold", c.model.score_threshold),
      num("model", "detection_nms", c.model.detection_nms),
      num("model", "max_detections", c.model.max_detections),

      num("loss", "lambda", t.lambda),

      num("train", "seed", t.seed),
      {"train", "optimizer",
       [&t] { return std::string(t.optimizer == Optimizer::Adam ? "adam" : "sgd"); },
       [&t](const std::string& v) {
         if (v == "sgd") {
           t.optimizer = Optimizer::Sgd;
         } else if (v == "adam") {
           t.optimizer = Optimizer::Adam;
         } else {
           throw std::invalid_argument("expected sgd or adam, got '" + v + "'");
         }
       }},
      num("train", "learning_rate", t.learning_rate),
      fixed("train", "stage_lr_scale", t.stage_lr_scale),
      fixed("train", "stage_epochs", t.epochs_per_stage),
      flag("train", "cosine_decay", t.cosine_decay),
      num("train", "momentum", t.momentum),
      num("train", "beta2", t.beta2),
      num("train", "batch_size", t.batch_size),
      num("train", "grad_clip", t.grad_clip),
      num("train", "loc_samples", t.loc_samples),
      num("train", "poly_rois", t.poly_rois),

      num("scenes", "image_size", s.image_size),
      num("scenes", "min_buildings", s.min_buildings),
      num("scenes", "max_buildings", s.max_buildings),
      fixed("scenes", "family_weights", s.family_weights),
      num("scenes", "min_size", s.min_size),
      num("scenes", "max_size", s.max_size),
      num("scenes", "background_level", s.background_level),
      num("scenes", "background_noise", s.background_noise),
      num("scenes", "intensity_min", s.intensity_min),
      num("scenes", "intensity_max", s.intensity_max),
      num("scenes", "spacing", s.spacing),
      num("scenes", "vertices", s.vertices),
      num("scenes", "max_retries", s.max_retries),

      num("data", "seed", c.data_seed),
      num("data", "train_count", c.train_count),
      num("data", "test_count", c.test_count),

      num("eval", "iou_threshold", c.iou_threshold),

      fixed("georef", "transform", c.georef.transform),
  };
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c = default_run_config();
  auto table = fields(c);
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw std::invalid_argument("config: key '" + section + "' is outside any [section]");
    }
    bool known_section = false;
    for (const Field& f : table) known_section = known_section || f.section == section;
    if (!known_section) throw std::invalid_argument("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      const std::string name = "[" + section + "] " + key;
      auto it = std::find_if(table.begin(), table.end(),
                             [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == table.end()) throw std::invalid_argument("config: unknown key " + name);
      try {
        it->set(trim(value.data()));
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("config: " + name + ": " + e.what());
      }
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& config) {
  RunConfig copy = config;
  std::ostringstream out;
  std::string current;
  for (const Field& f : fields(copy)) {
    if (f.section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << f.section << "]\n";
      current = f.section;
    }
    out << f.key << " = " << f.get() << '\n';
  }
  return out.str();
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path.string());
  out << format_run_config(config);
}

}  // namespace polygcn
