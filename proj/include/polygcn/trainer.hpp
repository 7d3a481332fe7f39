#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "polygcn/model.hpp"
#include "polygcn/synth.hpp"

namespace polygcn {

struct StageSpec {
  std::vector<std::string> prefixes;  // trainable parameter-name prefixes
  std::size_t epochs = 0;
};

/// Stage 1: detector and boundary head. Stage 2: GCN only. Stage 3: all.
struct StageSchedule {
  std::array<StageSpec, 3> stages;
  static StageSchedule standard(std::array<std::size_t, 3> epochs);
  bool trainable(std::size_t stage, const std::string& name) const;
};

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::Sgd;
  double learning_rate = 1e-2;
  // Learning rate of stage s is learning_rate * stage_lr_scale[s].
  std::array<double, 3> stage_lr_scale{1.0, 0.1, 0.01};
  // Cosine annealing to zero over each stage's planned steps.
  bool cosine_decay = false;
  double momentum = 0.9;  // SGD momentum, Adam beta1
  double beta2 = 0.999;    // Adam only
  double lambda = 1.0;
  std::array<std::size_t, 3> epochs_per_stage{10, 10, 10};
  std::size_t batch_size = 1;
  // Global gradient-norm cap; 0 disables.
  double grad_clip = 0.0;
  std::size_t loc_samples = 64;
  std::size_t poly_rois = 8;

  void validate() const;
};

/// One image ready for training: normalized tensor, boxes, polygons, and
/// cached anchor labels.
struct TrainSample {
  std::string id;
  Tensor image;
  std::vector<BoxCWH> gt_boxes;
  std::vector<Polygon> gt_polygons;
  std::vector<AnchorLabel> anchor_labels;
};

TrainSample make_sample(const Model& model, const Image& image, const SceneAnnotation& ann);

struct StepLosses {
  double rpn = 0.0, loc = 0.0, boun = 0.0, poly = 0.0, total = 0.0;
  std::size_t polygons = 0;  // RoIs that fed the polygon losses
};

struct LossRecord {
  std::size_t stage = 0;  // 1-based
  std::size_t epoch = 0;
  std::size_t step = 0;
  StepLosses losses;
};

/// `stage epoch step l_rpn l_loc l_boun l_poly l_total`, full precision.
std::string format_loss_line(const LossRecord& r);
void write_loss_log(std::ostream& out, const std::vector<LossRecord>& log);

/// Forward pass of one image with every loss. Gradients are recorded for the
/// currently trainable parameters; in stage 1 the polygon branch runs
/// without recording.
struct ForwardResult {
  Tensor rpn, loc, boun, poly, total;
  StepLosses values;
  std::vector<Polygon> pred_polygons;  // unit frame, final step
  std::vector<Polygon> gt_polygons;    // unit frame
};
ForwardResult forward_losses(const Model& model, const TrainSample& sample, SeededRng& rng,
                             const TrainConfig& config, std::size_t stage);

class Trainer {
 public:
  Trainer(Model& model, TrainConfig config, StageSchedule schedule);

  /// Makes the stage's parameter set trainable and resets optimizer state.
  /// `planned_steps` is the stage length used by cosine decay.
  void begin_stage(std::size_t stage, std::size_t planned_steps = 0);
  /// Forward, backward, and one SGD step over `batch`; returns the batch
  /// mean of each loss.
  StepLosses train_step(std::span<const TrainSample* const> batch);

  std::size_t stage() const { return stage_; }
  double learning_rate() const;
  SeededRng& rng() { return rng_; }
  const TrainConfig& config() const { return config_; }

 private:
  Model& model_;
  TrainConfig config_;
  StageSchedule schedule_;
  SeededRng rng_;
  std::size_t stage_ = 1;
  std::size_t updates_ = 0;  // updates in the current stage
  std::size_t planned_ = 0;
  std::vector<std::vector<double>> velocity_;
  std::vector<std::vector<double>> second_;
};

using EpochCallback = std::function<void(std::size_t stage, std::size_t epoch,
                                         const std::vector<LossRecord>& log)>;

/// Three-stage training. Sample order is reshuffled every epoch from the
/// trainer's generator. Returns one record per step.
std::vector<LossRecord> run_schedule(Model& model, const std::vector<TrainSample>& data,
                                     const TrainConfig& config, const StageSchedule& schedule,
                                     const EpochCallback& on_epoch = {});

struct CheckpointInfo {
  std::uint64_t config_hash = 0;
  std::size_t stage = 0;
  std::size_t epoch = 0;
  std::string rng_state;
  std::optional<std::string> warning;  // e.g. config hash mismatch
};

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const CheckpointInfo& info);
/// Loads into `model`, whose parameter names and shapes must match. On any
/// error the model is left untouched.
CheckpointInfo load_checkpoint(Model& model, const std::filesystem::path& path);

}  // namespace polygcn
