// polygcn: generate / train / infer / eval / export-geojson / render.
//
// Everything a subcommand reads or writes lives under --out:
//   config.ini           effective configuration (written by generate and train)
//   train/, test/        datasets (manifest, images/, ann/)
//   model.ckpt           checkpoint, losses.txt training log
//   results/<split>.json inference output
//   metrics.txt/.json    evaluation report
//   geojson/, renders/   exports

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "polygcn/config.hpp"
#include "polygcn/eval.hpp"
#include "polygcn/results.hpp"
#include "polygcn/synth.hpp"
#include "polygcn/trainer.hpp"

namespace fs = std::filesystem;
using namespace polygcn;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::optional<double> lambda;
  std::vector<std::size_t> stage_epochs;
  std::optional<double> iou_threshold;
  std::string split = "test";
  bool lambda_sweep = false;
  std::size_t limit = 0;
};

// --config wins, then <out>/config.ini, then the built-in defaults; flags
// override whichever was loaded.
RunConfig resolve_config(const Options& o) {
  RunConfig cfg = default_run_config();
  if (!o.config.empty()) {
    cfg = load_run_config(o.config);
  } else if (fs::exists(fs::path(o.out) / "config.ini")) {
    cfg = load_run_config(fs::path(o.out) / "config.ini");
  }
  if (o.seed) cfg.set_seed(*o.seed);
  if (o.lambda) cfg.train.lambda = *o.lambda;
  if (!o.stage_epochs.empty()) {
    cfg.train.epochs_per_stage = {o.stage_epochs[0], o.stage_epochs[1], o.stage_epochs[2]};
  }
  if (o.iou_threshold) cfg.iou_threshold = *o.iou_threshold;
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<std::string> splits_for(const Options& o) {
  if (o.split == "all") return {"train", "test"};
  return {o.split};
}

std::vector<Polygon> gt_polygons(const SceneAnnotation& a) {
  std::vector<Polygon> out;
  for (const Building& b : a.buildings) out.push_back(b.polygon);
  return out;
}

std::vector<ImageResult> run_inference(const Model& model, const Dataset& ds) {
  std::vector<ImageResult> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.push_back({ds.annotations[i].id, infer(model, ds.load_image(i))});
  }
  return out;
}

MatchResult score_split(const std::vector<ImageResult>& results, const Dataset& ds,
                        double iou_threshold) {
  if (results.size() != ds.size()) {
    throw std::runtime_error("results hold " + std::to_string(results.size()) +
                             " images but the dataset has " + std::to_string(ds.size()));
  }
  MatchResult all;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (results[i].id != ds.annotations[i].id) {
      throw std::runtime_error("result " + results[i].id + " does not match scene " +
                               ds.annotations[i].id);
    }
    std::vector<ScoredPolygon> preds;
    for (const Detection& d : results[i].detections) preds.push_back({d.polygon, d.score});
    accumulate(all, match_and_score(preds, gt_polygons(ds.annotations[i]), iou_threshold));
  }
  return all;
}

std::vector<LossRecord> train_model(Model& model, const RunConfig& cfg, const Dataset& train) {
  std::vector<TrainSample> data;
  data.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    data.push_back(make_sample(model, train.load_image(i), train.annotations[i]));
  }
  const StageSchedule schedule = StageSchedule::standard(cfg.train.epochs_per_stage);
  return run_schedule(model, data, cfg.train, schedule,
                      [](std::size_t stage, std::size_t epoch, const std::vector<LossRecord>& log) {
                        std::cerr << "stage " << stage << " epoch " << epoch << "  loss "
                                  << std::setprecision(5) << log.back().losses.total << '\n';
                      });
}

void save_training(const Model& model, const RunConfig& cfg, const std::vector<LossRecord>& log,
                   const fs::path& dir) {
  fs::create_directories(dir);
  CheckpointInfo info;
  info.stage = 3;
  info.epoch = cfg.train.epochs_per_stage[2];
  save_checkpoint(model, dir / "model.ckpt", info);
  std::ofstream losses(dir / "losses.txt", std::ios::binary);
  write_loss_log(losses, log);
}

int cmd_generate(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_dataset(generate_scenes(cfg.data_seed, cfg.train_count, cfg.scenes), out / "train",
                cfg.scenes);
  write_dataset(generate_scenes(cfg.data_seed, cfg.test_count, cfg.scenes, cfg.train_count),
                out / "test", cfg.scenes);
  save_run_config(cfg, out / "config.ini");
  std::cout << "wrote " << cfg.train_count << " training and " << cfg.test_count
            << " test scenes to " << out.string() << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const fs::path out(o.out);
  const Dataset train = read_dataset(out / "train");
  if (!o.lambda_sweep) {
    Model model(cfg.model, cfg.model_seed);
    const auto log = train_model(model, cfg, train);
    save_training(model, cfg, log, out);
    save_run_config(cfg, out / "config.ini");
    std::cout << "trained " << log.size() << " steps, final loss " << log.back().losses.total
              << "; checkpoint " << (out / "model.ckpt").string() << '\n';
    return 0;
  }

  // Same data, seeds and schedule for every lambda; each run is scored on the test split.
  const Dataset test = read_dataset(out / "test");
  std::ostringstream summary;
  summary << "lambda  test_f1  tp  fp  fn\n";
  for (double lambda : {0.5, 0.75, 1.0, 1.25}) {
    RunConfig run = cfg;
    run.train.lambda = lambda;
    std::ostringstream name;
    name << "lambda_" << lambda;
    const fs::path dir = out / "sweep" / name.str();
    std::cerr << "lambda " << lambda << '\n';
    Model model(run.model, run.model_seed);
    const auto log = train_model(model, run, train);
    save_training(model, run, log, dir);
    save_run_config(run, dir / "config.ini");
    const std::vector<NamedResult> parts{
        {"test", score_split(run_inference(model, test), test, run.iou_threshold)}};
    const MetricsReport rep = report(parts, run.iou_threshold);
    write_file(dir / "metrics.json", rep.to_json());
    summary << lambda << "  " << std::fixed << std::setprecision(4) << rep.total.f1
            << std::defaultfloat << "  " << rep.total.tp << "  " << rep.total.fp << "  "
            << rep.total.fn << '\n';
  }
  write_file(out / "sweep" / "summary.txt", summary.str());
  std::cout << summary.str();
  return 0;
}

int cmd_infer(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const fs::path out(o.out);
  Model model(cfg.model, cfg.model_seed);
  const CheckpointInfo info = load_checkpoint(model, o.checkpoint);
  if (info.warning) std::cerr << "warning: " << *info.warning << '\n';
  fs::create_directories(out / "results");
  for (const std::string& split : splits_for(o)) {
    const auto results = run_inference(model, read_dataset(out / split));
    save_results(results, out / "results" / (split + ".json"));
    std::size_t n = 0;
    for (const ImageResult& r : results) n += r.detections.size();
    std::cout << split << ": " << n << " detections in " << results.size() << " images\n";
  }
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const fs::path out(o.out);
  std::vector<NamedResult> parts;
  for (const std::string split : {"train", "test"}) {
    const fs::path file = out / "results" / (split + ".json");
    if (!fs::exists(file)) continue;
    parts.push_back(
        {split, score_split(load_results(file), read_dataset(out / split), cfg.iou_threshold)});
  }
  if (parts.empty()) {
    throw std::runtime_error("no results under " + (out / "results").string() + "; run infer first");
  }
  const MetricsReport rep = report(parts, cfg.iou_threshold);
  write_file(out / "metrics.txt", rep.table());
  write_file(out / "metrics.json", rep.to_json());
  std::cout << rep.table();
  return 0;
}

int cmd_export(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const fs::path out(o.out);
  fs::create_directories(out / "geojson");
  std::size_t n = 0;
  for (const std::string& split : splits_for(o)) {
    for (const ImageResult& r : load_results(out / "results" / (split + ".json"))) {
      export_geojson(r, out / "geojson" / (r.id + ".geojson"), cfg.georef);
      ++n;
    }
  }
  std::cout << "wrote " << n << " GeoJSON files to " << (out / "geojson").string() << '\n';
  return 0;
}

int cmd_render(const Options& o) {
  resolve_config(o);
  const fs::path out(o.out);
  fs::create_directories(out / "renders");
  std::size_t n = 0;
  for (const std::string& split : splits_for(o)) {
    const Dataset ds = read_dataset(out / split);
    const auto results = load_results(out / "results" / (split + ".json"));
    for (std::size_t i = 0; i < ds.size() && i < results.size(); ++i) {
      if (o.limit && n >= o.limit) break;
      const auto gts = gt_polygons(ds.annotations[i]);
      write_png(render_overlay(ds.load_image(i), results[i], gts),
                out / "renders" / (results[i].id + ".png"));
      ++n;
    }
  }
  std::cout << "wrote " << n << " renders to " << (out / "renders").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Building footprint detection with a graph-convolutional polygon head"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed for data, model and training");
    sub->add_option("--out", o.out, "Run directory")->required();
  };

  auto* gen = app.add_subcommand("generate", "Generate train and test scene datasets");
  common(gen);

  auto* train = app.add_subcommand("train", "Three-stage training on <out>/train");
  common(train);
  train->add_option("--lambda", o.lambda, "Polygon loss weight");
  train->add_option("--stage-epochs", o.stage_epochs, "Epochs per stage, a,b,c")
      ->delimiter(',')
      ->expected(3);
  train->add_flag("--lambda-sweep", o.lambda_sweep,
                  "Train once per lambda in {0.5, 0.75, 1, 1.25} and score each on the test split");

  auto* inf = app.add_subcommand("infer", "Run a checkpoint over a split");
  common(inf);
  inf->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();

  auto* ev = app.add_subcommand("eval", "Score results/<split>.json against the annotations");
  common(ev);
  ev->add_option("--iou-threshold", o.iou_threshold, "IoU needed for a true positive")
      ->check(CLI::Range(0.0, 1.0));

  auto* geo = app.add_subcommand("export-geojson", "Write one FeatureCollection per image");
  common(geo);

  auto* ren = app.add_subcommand("render", "Draw predictions and ground truth over the images");
  common(ren);
  ren->add_option("--limit", o.limit, "Stop after this many images (0 = all)");

  for (CLI::App* sub : {inf, geo, ren}) {
    sub->add_option("--split", o.split, "train, test or all")
        ->check(CLI::IsMember({"train", "test", "all"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*train) return cmd_train(o);
    if (*inf) return cmd_infer(o);
    if (*ev) return cmd_eval(o);
    if (*geo) return cmd_export(o);
    if (*ren) return cmd_render(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
