#include "polygcn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "polygcn/ops.hpp"

namespace polygcn {

StageSchedule StageSchedule::standard(std::array<std::size_t, 3> epochs) {
  StageSchedule s;
  s.stages[0] = {{"backbone.", "rpn.", "loc.", "boundary."}, epochs[0]};
  s.stages[1] = {{"gcn."}, epochs[1]};
  s.stages[2] = {{""}, epochs[2]};
  return s;
}

bool StageSchedule::trainable(std::size_t stage, const std::string& name) const {
  const auto& prefixes = stages.at(stage - 1).prefixes;
  return std::any_of(prefixes.begin(), prefixes.end(),
                     [&](const std::string& p) { return name.starts_with(p); });
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (!(lambda >= 0.0)) fail("lambda must be non-negative");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (grad_clip < 0.0) fail("grad_clip must be >= 0");
  if (loc_samples == 0) fail("loc_samples must be >= 1");
}

TrainSample make_sample(const Model& model, const Image& image, const SceneAnnotation& ann) {
  TrainSample s;
  s.id = ann.id;
  s.image = image_tensor(image);
  for (const Building& b : ann.buildings) {
    s.gt_boxes.push_back(b.box);
    s.gt_polygons.push_back(b.polygon);
  }
  const AnchorConfig& ac = model.config().anchors;
  s.anchor_labels = label_anchors(model.anchor_boxes, s.gt_boxes, ac.pos_iou, ac.neg_iou);
  return s;
}

std::string format_loss_line(const LossRecord& r) {
  std::ostringstream s;
  s << std::setprecision(17) << r.stage << ' ' << r.epoch << ' ' << r.step << ' ' << r.losses.rpn
    << ' ' << r.losses.loc << ' ' << r.losses.boun << ' ' << r.losses.poly << ' '
    << r.losses.total;
  return s.str();
}

void write_loss_log(std::ostream& out, const std::vector<LossRecord>& log) {
  for (const LossRecord& r : log) out << format_loss_line(r) << '\n';
}

namespace {

Tensor stack_mean(const std::vector<Tensor>& scalars) {
  std::vector<Tensor> rows;
  rows.reserve(scalars.size());
  for (const Tensor& t : scalars) rows.push_back(reshape(t, {1}));
  return mean(concat(rows, 0));
}

Polygon clamp_unit(Polygon p) {
  for (Point& q : p) {
    q.x = std::clamp(q.x, 0.0, 1.0);
    q.y = std::clamp(q.y, 0.0, 1.0);
  }
  return p;
}

}  // namespace

ForwardResult forward_losses(const Model& model, const TrainSample& sample, SeededRng& rng,
                             const TrainConfig& config, std::size_t stage) {
  const ModelConfig& mc = model.config();
  ForwardResult r;
  const FeaturePyramid pyr = forward_pyramid(sample.image, model.backbone, mc.backbone);
  const RpnOutput rpn_out = rpn_forward(pyr, model.rpn);
  const auto sampled = sample_minibatch(sample.anchor_labels, rng, mc.anchors.max_boxes,
                                        mc.anchors.pos_neg_ratio);
  r.rpn = rpn_loss(rpn_out, sample.anchor_labels, sampled, model.anchors, sample.gt_boxes);

  const Proposals props = propose_regions(rpn_out, model.anchors, mc.backbone,
                                          mc.anchors.nms_threshold);
  std::vector<BoxCWH> boxes = props.boxes;
  boxes.insert(boxes.end(), sample.gt_boxes.begin(), sample.gt_boxes.end());
  const auto plabels = label_proposals(boxes, sample.gt_boxes, 0.5);
  const auto psampled =
      sample_minibatch(plabels, rng, config.loc_samples, mc.anchors.pos_neg_ratio);
  std::vector<BoxCWH> sel_boxes;
  std::vector<AnchorLabel> sel_labels;
  std::vector<std::size_t> positives;
  for (std::size_t i : psampled) {
    if (plabels[i].label == LabelKind::Positive) positives.push_back(sel_boxes.size());
    sel_boxes.push_back(boxes[i]);
    sel_labels.push_back(plabels[i]);
  }
  if (sel_boxes.empty()) {
    r.loc = Tensor::scalar(0.0);
  } else {
    const LocOutput loc_out =
        loc_forward(stack_rois(pyr, sel_boxes, mc.backbone.loc_roi_size), model.loc);
    std::vector<std::size_t> all(sel_boxes.size());
    std::iota(all.begin(), all.end(), 0);
    r.loc = loc_loss(loc_out, sel_labels, all, sel_boxes, sample.gt_boxes);
  }

  // polygon branch on a random subset of the positive RoIs
  std::vector<std::size_t> chosen;
  if (positives.size() <= config.poly_rois) {
    chosen = positives;
  } else {
    for (std::size_t k : rng.sample_without_replacement(positives.size(), config.poly_rois)) {
      chosen.push_back(positives[k]);
    }
    std::sort(chosen.begin(), chosen.end());
  }
  std::vector<Tensor> boun_terms, preds;
  const std::size_t rs = mc.poly.roi_size;
  for (std::size_t i : chosen) {
    const BoxCWH frame = polygon_frame(sel_boxes[i], mc.roi_margin);
    const Polygon gt_unit =
        clamp_unit(to_unit_frame(sample.gt_polygons[sel_labels[i].matched_gt.value()], frame));
    if (signed_area(gt_unit) <= 0.0) continue;
    const Tensor roi = fine_roi_align(pyr, frame, rs);
    const BoundaryMasks masks = boundary_forward(roi, model.boundary);
    boun_terms.push_back(boundary_loss(masks, rasterize_boundary(gt_unit, rs, rs)));
    std::optional<NoGradGuard> guard;
    if (stage == 1) guard.emplace();
    const std::vector<Tensor> steps =
        refine(enhance(roi, masks), polygon_tensor(model.initial_polygon), model.gcn,
               model.topology);
    preds.push_back(steps.back());
    r.pred_polygons.push_back(tensor_polygon(steps.back()));
    r.gt_polygons.push_back(gt_unit);
  }
  if (preds.empty()) {
    r.boun = Tensor::scalar(0.0);
    r.poly = Tensor::scalar(0.0);
  } else {
    r.boun = stack_mean(boun_terms);
    std::optional<NoGradGuard> guard;
    if (stage == 1) guard.emplace();
    r.poly = cyclic_polygon_loss(preds, r.gt_polygons, false).loss;
  }
  const PolyLossConfig pc{config.lambda, mc.poly.vertices};
  r.total = total_loss(r.rpn, r.loc, r.boun, r.poly, pc);
  r.values = {r.rpn.item(), r.loc.item(), r.boun.item(), r.poly.item(), r.total.item(),
              preds.size()};
  return r;
}

Trainer::Trainer(Model& model, TrainConfig config, StageSchedule schedule)
    : model_(model), config_(config), schedule_(std::move(schedule)), rng_(config.seed) {
  config_.validate();
  begin_stage(1);
}

void Trainer::begin_stage(std::size_t stage, std::size_t planned_steps) {
  if (stage < 1 || stage > 3) throw std::invalid_argument("Trainer: stage must be 1, 2 or 3");
  stage_ = stage;
  model_.params.set_trainable([&](const std::string& n) { return schedule_.trainable(stage, n); });
  velocity_.assign(model_.params.size(), {});
  second_.assign(model_.params.size(), {});
  updates_ = 0;
  planned_ = planned_steps;
}

double Trainer::learning_rate() const {
  const double base = config_.learning_rate * config_.stage_lr_scale[stage_ - 1];
  if (!config_.cosine_decay || planned_ == 0) return base;
  const double t = std::min(1.0, static_cast<double>(updates_) / static_cast<double>(planned_));
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

StepLosses Trainer::train_step(std::span<const TrainSample* const> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  model_.params.zero_grad();
  StepLosses acc;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const TrainSample* s : batch) {
    ForwardResult fr = forward_losses(model_, *s, rng_, config_, stage_);
    backward(scale(fr.total, inv));
    acc.rpn += fr.values.rpn * inv;
    acc.loc += fr.values.loc * inv;
    acc.boun += fr.values.boun * inv;
    acc.poly += fr.values.poly * inv;
    acc.polygons += fr.values.polygons;
  }
  acc.total = total_loss(acc.rpn, acc.loc, acc.boun, acc.poly,
                         {config_.lambda, model_.config().poly.vertices});

  auto& params = model_.params.all();
  double sq = 0.0;
  for (const Parameter& p : params) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(acc.total) || !std::isfinite(norm)) {
    throw std::runtime_error("train_step: training diverged in stage " + std::to_string(stage_) +
                             " after " + std::to_string(updates_) +
                             " updates (non-finite loss or gradient); lower the learning rate");
  }
  double factor = 1.0;
  if (config_.grad_clip > 0.0 && norm > config_.grad_clip) factor = config_.grad_clip / norm;
  const double lr = learning_rate();
  ++updates_;
  const double b1 = config_.momentum, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(updates_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(updates_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    auto& v = velocity_[k];
    if (v.empty()) v.assign(p.tensor.numel(), 0.0);
    auto data = p.tensor.mutable_data();
    const auto grad = p.tensor.grad();
    if (config_.optimizer == Optimizer::Sgd) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = b1 * v[i] + factor * grad[i];
        data[i] -= lr * v[i];
      }
    } else {
      auto& m2 = second_[k];
      if (m2.empty()) m2.assign(p.tensor.numel(), 0.0);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double g = factor * grad[i];
        v[i] = b1 * v[i] + (1.0 - b1) * g;
        m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
        data[i] -= lr * (v[i] / c1) / (std::sqrt(m2[i] / c2) + 1e-8);
      }
    }
  }
  model_.params.zero_grad();
  return acc;
}

std::vector<LossRecord> run_schedule(Model& model, const std::vector<TrainSample>& data,
                                     const TrainConfig& config, const StageSchedule& schedule,
                                     const EpochCallback& on_epoch) {
  if (data.empty()) throw std::invalid_argument("run_schedule: empty dataset");
  Trainer trainer(model, config, schedule);
  std::vector<LossRecord> log;
  std::size_t step = 0;
  for (std::size_t stage = 1; stage <= 3; ++stage) {
    const std::size_t per_epoch = (data.size() + config.batch_size - 1) / config.batch_size;
    trainer.begin_stage(stage, per_epoch * schedule.stages[stage - 1].epochs);
    for (std::size_t epoch = 1; epoch <= schedule.stages[stage - 1].epochs; ++epoch) {
      const auto order = trainer.rng().sample_without_replacement(data.size(), data.size());
      for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        std::vector<const TrainSample*> batch;
        for (std::size_t k = b; k < std::min(order.size(), b + config.batch_size); ++k) {
          batch.push_back(&data[order[k]]);
        }
        ++step;
        log.push_back({stage, epoch, step, trainer.train_step(batch)});
      }
      if (on_epoch) on_epoch(stage, epoch, log);
    }
  }
  model.params.set_trainable([](const std::string&) { return false; });
  return log;
}

// Checkpoint layout (all integers little-endian):
//   "PGCNCKPT" u32 version u64 config_hash u64 stage u64 epoch u64 count
//   count x { u32 name_len, name, u32 rank, u64 dims[rank], f64 values[] }
//   u32 rng_len, rng text
namespace {

constexpr char kMagic[8] = {'P', 'G', 'C', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& buf, T v) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    std::memcpy(&bits, &v, sizeof v);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <class T>
  T get(const std::string& section) {
    need(sizeof(T), section);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      double v;
      std::memcpy(&v, &bits, sizeof v);
      return v;
    } else {
      return static_cast<T>(bits);
    }
  }
  std::string bytes(std::size_t n, const std::string& section) {
    need(n, section);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const std::string& section) const {
    if (data_.size() - pos_ < n) {
      throw std::runtime_error("checkpoint truncated in " + section);
    }
  }
  std::string data_;
  std::size_t pos_ = 0;
};

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const CheckpointInfo& info) {
  std::string buf(kMagic, sizeof kMagic);
  put<std::uint32_t>(buf, kVersion);
  put<std::uint64_t>(buf, model.config_hash());
  put<std::uint64_t>(buf, info.stage);
  put<std::uint64_t>(buf, info.epoch);
  const auto& params = model.params.all();
  put<std::uint64_t>(buf, params.size());
  for (const Parameter& p : params) {
    put<std::uint32_t>(buf, p.name.size());
    buf += p.name;
    put<std::uint32_t>(buf, p.tensor.rank());
    for (std::size_t d : p.tensor.shape()) put<std::uint64_t>(buf, d);
    for (double v : p.tensor.data()) put<double>(buf, v);
  }
  put<std::uint32_t>(buf, info.rng_state.size());
  buf += info.rng_state;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

CheckpointInfo load_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());
  if (r.bytes(sizeof kMagic, "header") != std::string(kMagic, sizeof kMagic)) {
    throw std::runtime_error("checkpoint header: bad magic bytes");
  }
  const auto version = r.get<std::uint32_t>("header");
  if (version != kVersion) {
    throw std::runtime_error("checkpoint header: unsupported version " + std::to_string(version));
  }
  CheckpointInfo info;
  info.config_hash = r.get<std::uint64_t>("header");
  info.stage = r.get<std::uint64_t>("header");
  info.epoch = r.get<std::uint64_t>("header");
  const auto count = r.get<std::uint64_t>("header");
  auto& params = model.params.all();
  if (count != params.size()) {
    throw std::runtime_error("checkpoint parameters: file has " + std::to_string(count) +
                             " records, model has " + std::to_string(params.size()));
  }
  std::vector<std::vector<double>> values(params.size());
  for (std::size_t k = 0; k < count; ++k) {
    const std::string sec = "parameter record " + std::to_string(k);
    const auto len = r.get<std::uint32_t>(sec);
    const std::string name = r.bytes(len, sec);
    if (name != params[k].name) {
      throw std::runtime_error(sec + ": expected " + params[k].name + ", found " + name);
    }
    const auto rank = r.get<std::uint32_t>(sec + " (" + name + ")");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint64_t>(sec + " (" + name + ")"));
    if (shape != params[k].tensor.shape()) {
      throw std::runtime_error(sec + " (" + name + "): shape " + to_string(shape) +
                               " does not match model shape " +
                               to_string(params[k].tensor.shape()));
    }
    values[k].resize(numel(shape));
    for (double& v : values[k]) v = r.get<double>(sec + " (" + name + ")");
  }
  const auto rlen = r.get<std::uint32_t>("rng state");
  info.rng_state = r.bytes(rlen, "rng state");
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes after rng state");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].tensor.mutable_data();
    std::copy(values[k].begin(), values[k].end(), dst.begin());
  }
  if (info.config_hash != model.config_hash()) {
    info.warning = "checkpoint config hash " + hex(info.config_hash) +
                   " differs from current config hash " + hex(model.config_hash());
  }
  return info;
}

}  // namespace polygcn
