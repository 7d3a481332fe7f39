#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "polygcn/backbone.hpp"
#include "polygcn/gradcheck.hpp"
#include "polygcn/model.hpp"
#include "polygcn/ops.hpp"
#include "polygcn/trainer.hpp"

using namespace polygcn;

namespace {

Tensor random_tensor(Shape shape, SeededRng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

ModelConfig small_config() {
  ModelConfig c;
  c.backbone.image_size = 64;
  c.backbone.channels_per_level = 8;
  c.backbone.stem_channels = 8;
  c.backbone.blocks_per_stage = 1;
  c.backbone.rpn_hidden = 8;
  c.backbone.loc_hidden = 16;
  c.backbone.proposal_top_k = 16;
  c.poly.hidden = 8;
  c.poly.roi_size = 10;
  c.poly.gcn_steps = 2;
  c.poly.blocks_per_step = 1;
  c.poly.boundary_hidden = 4;
  return c;
}

SceneSpec small_scene() {
  SceneSpec s;
  s.image_size = 64;
  s.min_size = 16;
  s.max_size = 28;
  s.max_buildings = 2;
  return s;
}

}  // namespace

TEST_CASE("pyramid shapes") {
  BackboneConfig cfg;
  SeededRng rng(40);
  ParameterStore store;
  const BackboneWeights w = make_backbone(store, cfg, rng);
  const Tensor img = random_tensor({128, 128, 3}, rng, -0.5, 0.5);
  const FeaturePyramid p = forward_pyramid(img, w, cfg);
  REQUIRE(p.levels.size() == 3);
  CHECK(p.levels[0].shape() == Shape{32, 32, 32});
  CHECK(p.levels[1].shape() == Shape{16, 16, 32});
  CHECK(p.levels[2].shape() == Shape{8, 8, 32});
  CHECK(p.strides == std::vector<double>{4, 8, 16});
  CHECK(p.fine.shape() == Shape{64, 64, 32});
  CHECK(p.fine_stride == 2.0);
  for (const Tensor& l : p.levels) {
    for (double v : l.data()) REQUIRE(std::isfinite(v));
  }

  BackboneConfig plain = cfg;
  plain.fine_map = false;
  ParameterStore s2;
  SeededRng r2(40);
  const BackboneWeights w2 = make_backbone(s2, plain, r2);
  const FeaturePyramid p2 = forward_pyramid(img, w2, plain);
  CHECK_FALSE(p2.fine.defined());
  const BoxCWH box{40, 40, 30, 30};
  const Tensor a = fine_roi_align(p2, box, 7);
  const Tensor b = pyramid_roi_align(p2, box, 7);
  CHECK(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

  BackboneConfig bad = cfg;
  bad.image_size = 100;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("rpn head layout") {
  BackboneConfig cfg;
  cfg.image_size = 64;
  SeededRng rng(41);
  ParameterStore store;
  const BackboneWeights bw = make_backbone(store, cfg, rng);
  const RpnWeights rw = make_rpn(store, cfg, 3, rng);
  const FeaturePyramid p = forward_pyramid(random_tensor({64, 64, 3}, rng), bw, cfg);
  const RpnOutput out = rpn_forward(p, rw);
  const std::size_t m = (16 * 16 + 8 * 8 + 4 * 4) * 3;
  CHECK(out.logits.shape() == Shape{m, 1});
  CHECK(out.deltas.shape() == Shape{m, 4});
}

TEST_CASE("detection loss fixture") {
  // Two anchors, zero logits; the positive sits exactly on its GT box and
  // predicts tx = 1, so the regression term is smooth_l1(1) = 0.5.
  const std::vector<BoxCWH> refs{{10, 10, 8, 8}, {40, 40, 8, 8}};
  const std::vector<BoxCWH> gts{{10, 10, 8, 8}};
  std::vector<AnchorLabel> labels(2);
  labels[0] = {LabelKind::Positive, 0};
  labels[1] = {LabelKind::Negative, std::nullopt};
  const std::vector<std::size_t> sampled{0, 1};
  const Tensor logits({2, 1});
  const Tensor deltas({2, 4}, std::vector<double>{1, 0, 0, 0, 5, 5, 5, 5});
  const double l = detection_loss(logits, deltas, refs, labels, sampled, gts).item();
  CHECK(std::fabs(l - (std::numbers::ln2 + 0.5)) <= 1e-12);

  // No positives: classification only.
  const std::vector<std::size_t> neg_only{1};
  CHECK(std::fabs(detection_loss(logits, deltas, refs, labels, neg_only, gts).item() -
                  std::numbers::ln2) <= 1e-12);
  CHECK(detection_loss(logits, deltas, refs, labels, {}, gts).item() == 0.0);

  labels[1] = {LabelKind::Ignore, std::nullopt};
  CHECK_THROWS_AS(detection_loss(logits, deltas, refs, labels, sampled, gts),
                  std::invalid_argument);
  CHECK_THROWS_AS(detection_loss(Tensor({3, 1}), deltas, refs, labels, sampled, gts), ShapeError);
}

TEST_CASE("propose_regions") {
  BackboneConfig cfg;
  cfg.image_size = 64;
  cfg.proposal_top_k = 10;
  AnchorConfig ac;
  std::vector<Anchor> anchors = generate_anchors(ac, cfg.level_shapes());
  SeededRng rng(42);
  RpnOutput out{random_tensor({anchors.size(), 1}, rng, -4, 4),
                random_tensor({anchors.size(), 4}, rng, -0.5, 0.5)};
  const Proposals p = propose_regions(out, anchors, cfg, 0.5);
  REQUIRE(p.boxes.size() <= 10);
  REQUIRE(!p.boxes.empty());
  for (std::size_t i = 0; i < p.boxes.size(); ++i) {
    const BoxCWH& b = p.boxes[i];
    CHECK(b.left() >= -1e-9);
    CHECK(b.top() >= -1e-9);
    CHECK(b.right() <= 64 + 1e-9);
    CHECK(b.bottom() <= 64 + 1e-9);
    CHECK(b.w >= cfg.min_proposal_size);
    if (i > 0) CHECK(p.scores[i] <= p.scores[i - 1]);
    for (std::size_t j = 0; j < i; ++j) CHECK(iou(b, p.boxes[j]) <= 0.5);
  }
  // The highest-scoring valid anchor always survives.
  std::size_t best = 0;
  for (std::size_t i = 1; i < anchors.size(); ++i) {
    if (out.logits[i] > out.logits[best]) best = i;
  }
  CHECK(p.scores[0] == out.logits[best]);

  RpnOutput short_out{Tensor({3, 1}), Tensor({3, 4})};
  CHECK_THROWS_AS(propose_regions(short_out, anchors, cfg, 0.5), ShapeError);
}

TEST_CASE("localization head") {
  BackboneConfig cfg;
  cfg.image_size = 64;
  cfg.channels_per_level = 4;
  cfg.loc_roi_size = 3;
  cfg.loc_hidden = 6;
  SeededRng rng(43);
  ParameterStore store;
  LocWeights w = make_loc_head(store, cfg, rng);
  const Tensor rois = random_tensor({5, 3 * 3 * 4}, rng);
  SUBCASE("shapes") {
    const LocOutput o = loc_forward(rois, w);
    CHECK(o.logits.shape() == Shape{5, 1});
    CHECK(o.deltas.shape() == Shape{5, 4});
  }
  SUBCASE("zero weights give zero outputs") {
    for (Parameter& p : store.all()) {
      for (double& v : p.tensor.mutable_data()) v = 0.0;
    }
    const LocOutput o = loc_forward(rois, w);
    for (double v : o.logits.data()) CHECK(v == 0.0);
    for (double v : o.deltas.data()) CHECK(v == 0.0);
  }
  SUBCASE("gradient with respect to the RoI features") {
    const Tensor probe = random_tensor({5, 4}, rng);
    auto r = grad_check(
        [&](const Tensor& x) {
          const LocOutput o = loc_forward(x, w);
          return add(sum(mul(o.deltas, probe)), sum(sigmoid(o.logits)));
        },
        rois);
    CHECK(r.passed());
    CHECK(r.checked() >= 20);
  }
}

TEST_CASE("end-to-end gradient of the total loss") {
  const ModelConfig mc = small_config();
  Model model(mc, 3);
  SeededRng srng(44);
  const Scene scene = sample_scene(srng, small_scene(), "g");
  const TrainSample sample = make_sample(model, scene.image, scene.annotation);
  TrainConfig tc;
  tc.loc_samples = 16;
  tc.poly_rois = 2;

  auto run = [&] {
    SeededRng rng(9);
    return forward_losses(model, sample, rng, tc, 3);
  };
  {
    const ForwardResult fr = run();
    REQUIRE(std::isfinite(fr.values.total));
    REQUIRE(fr.values.polygons > 0);
  }
  auto check = [&](Tensor& t, const std::function<Tensor()>& f) {
    GradCheckOptions opt;
    for (std::size_t i = 0; i < t.numel(); i += t.numel() / 20 + 1) opt.coordinates.push_back(i);
    auto r = grad_check_inplace(f, t, opt);
    INFO("tensor of " << t.numel() << " values, max rel error " << r.max_rel_error());
    CHECK(r.passed());
    CHECK(r.checked() >= std::min<std::size_t>(10, t.numel()));
  };
  // Box coordinates carry no gradient into RoI-Align, so weights that move
  // the proposals are checked on the anchor-based RPN loss only.
  for (Tensor* t : {&model.backbone.stem1.w, &model.backbone.lateral[1].w, &model.rpn.deltas.w,
                    &model.rpn.logits.w}) {
    check(*t, [&] { return run().rpn; });
  }
  for (Tensor* t : {&model.backbone.fine_output.w, &model.backbone.fine_lateral.w,
                    &model.loc.fc1_w, &model.loc.box_w, &model.boundary.vertex_hw,
                    &model.boundary.edge_w, &model.gcn.steps[0].proj_w,
                    &model.gcn.steps[1].blocks[0].w0a}) {
    check(*t, [&] { return run().total; });
  }
}

TEST_CASE("RPN and localization losses are differentiable in the backbone") {
  const ModelConfig mc = small_config();
  Model model(mc, 5);
  SeededRng srng(45);
  const Scene scene = sample_scene(srng, small_scene(), "l");
  const TrainSample sample = make_sample(model, scene.image, scene.annotation);
  // Proposals are inputs to the localization loss; fix a jittered set.
  std::vector<BoxCWH> proposals;
  SeededRng jr(8);
  for (const BoxCWH& b : sample.gt_boxes) {
    for (int k = 0; k < 3; ++k) {
      proposals.push_back({b.x + jr.uniform(-4, 4), b.y + jr.uniform(-4, 4),
                           b.w * jr.uniform(0.8, 1.2), b.h * jr.uniform(0.8, 1.2)});
    }
  }
  proposals.push_back({10, 50, 12, 12});
  const auto plabels = label_proposals(proposals, sample.gt_boxes, 0.5);
  std::vector<std::size_t> psampled(proposals.size());
  std::iota(psampled.begin(), psampled.end(), std::size_t{0});
  SeededRng arng(6);
  const AnchorConfig& ac = mc.anchors;
  const auto asampled = sample_minibatch(sample.anchor_labels, arng, 64, ac.pos_neg_ratio);
  auto loss = [&] {
    const FeaturePyramid pyr = forward_pyramid(sample.image, model.backbone, mc.backbone);
    const Tensor l_rpn = rpn_loss(rpn_forward(pyr, model.rpn), sample.anchor_labels, asampled,
                                  model.anchors, sample.gt_boxes);
    const LocOutput lo = loc_forward(stack_rois(pyr, proposals, mc.backbone.loc_roi_size), model.loc);
    return add(l_rpn, loc_loss(lo, plabels, psampled, proposals, sample.gt_boxes));
  };
  for (Tensor* t : {&model.backbone.stem1.w, &model.backbone.stem2.w,
                    &model.backbone.stages[1][0].conv1.w, &model.backbone.lateral[0].w,
                    &model.backbone.output[2].w}) {
    GradCheckOptions opt;
    for (std::size_t i = 0; i < t->numel(); i += t->numel() / 30 + 1) opt.coordinates.push_back(i);
    auto r = grad_check_inplace(loss, *t, opt);
    INFO("max rel error " << r.max_rel_error());
    CHECK(r.passed());
    CHECK(r.checked() >= 20);
  }
}
