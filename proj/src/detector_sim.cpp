#include "desimpl/detector_sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <fmt/format.h>

#include "desimpl/box_fusion.hpp"
#include "desimpl/parallel.hpp"

namespace desimpl {

namespace {

// Substream purposes. Streams are keyed by purpose and indices only, never by
// strategy, so runs that share a seed see the same scenes and draws.
enum Purpose : std::uint64_t {
  kTrainScenes = 1,
  kEvalScenes,
  kSourceScenes,
  kInitPreds,
  kSourceRecords,
  kRecords,
  kUpdatePreds,
  kEvalPreds,
  kMosaic,
  kToyModel,
  kStudentRecords,
  kStudentEval,
};

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

double safe_prob(double p) { return std::max(p, 1e-300); }

void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace

void SceneConfig::validate() const {
  require(min_boxes >= 0 && min_boxes <= max_boxes, "scene box-count range must satisfy 0 <= min <= max");
  require(min_size > 0.0 && min_size <= max_size, "scene size range must satisfy 0 < min <= max");
  require(max_size <= 1.0, "scene max_size must be <= 1");
  require(min_size * min_size >= 1e-4, "scene min_size too small for non-degenerate boxes (area >= 1e-4)");
  require(class_count >= 1, "class_count must be >= 1");
  require(max_distractors >= 0, "max_distractors must be >= 0");
  require(render_size >= 2, "render_size must be >= 2");
}

Scene generate_scene(Rng& rng, const SceneConfig& cfg, Domain domain, std::string image_id) {
  cfg.validate();
  Scene scene;
  scene.image_id = std::move(image_id);
  scene.domain = domain;
  const auto count = rng.uniform_int(cfg.min_boxes, cfg.max_boxes);
  std::vector<Detection> boxes;
  for (std::int64_t i = 0; i < count; ++i) {
    const double w = rng.uniform(cfg.min_size, cfg.max_size);
    const double h = rng.uniform(cfg.min_size, cfg.max_size);
    const double x1 = rng.uniform(0.0, 1.0 - w);
    const double y1 = rng.uniform(0.0, 1.0 - h);
    const int cls = static_cast<int>(rng.uniform_int(0, cfg.class_count - 1));
    boxes.push_back(Detection{clip_box({x1, y1, x1 + w, y1 + h}), cls, 1.0});
  }
  scene.gt = make_label_set(scene.image_id, std::move(boxes), LabelKind::ground_truth);
  for (std::size_t i = 0; i < scene.gt.size(); ++i) {
    ObjectLatent l;
    for (double& o : l.offset) o = rng.normal();
    l.logit = rng.normal();
    l.miss = rng.uniform();
    scene.latents.push_back(l);
  }
  const auto distractors = rng.uniform_int(0, cfg.max_distractors);
  for (std::int64_t i = 0; i < distractors; ++i) {
    const double w = rng.uniform(cfg.min_size, cfg.max_size);
    const double h = rng.uniform(cfg.min_size, cfg.max_size);
    const double x1 = rng.uniform(0.0, 1.0 - w);
    const double y1 = rng.uniform(0.0, 1.0 - h);
    scene.distractors.push_back(clip_box({x1, y1, x1 + w, y1 + h}));
  }
  return scene;
}

ImageTensor render_scene(const Scene& scene, int size, int class_count, Rng& rng) {
  ImageTensor img(size, size, 1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) img.at(x, y, 0) = rng.uniform(0.0, 0.3);
  }
  auto fill = [&](const BBox& b, double value) {
    const int x0 = static_cast<int>(std::floor(b.x1 * size));
    const int x1 = std::min(size, static_cast<int>(std::ceil(b.x2 * size)));
    const int y0 = static_cast<int>(std::floor(b.y1 * size));
    const int y1 = std::min(size, static_cast<int>(std::ceil(b.y2 * size)));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) img.at(x, y, 0) = value;
    }
  };
  for (const auto& b : scene.distractors) fill(b, 0.45);
  for (const auto& d : scene.gt.detections) {
    fill(d.bbox, 0.6 + 0.4 * (d.class_id + 1) / static_cast<double>(class_count));
  }
  return img;
}

void DetectorState::validate() const {
  require(std::isfinite(loc_noise_sigma) && loc_noise_sigma >= 0.0 && loc_noise_sigma <= 1.0,
          "loc_noise_sigma must lie in [0,1]");
  require(miss_rate >= 0.0 && miss_rate <= 1.0, "miss_rate must lie in [0,1]");
  require(std::isfinite(fp_rate) && fp_rate >= 0.0 && fp_rate <= 50.0, "fp_rate must lie in [0,50]");
  require(std::isfinite(conf_calibration) && conf_calibration > 0.0, "conf_calibration must be positive");
}

DetectorState apply_domain_gap(const DetectorState& source, const DomainGap& gap) {
  DetectorState t = source;
  t.loc_noise_sigma = std::clamp(source.loc_noise_sigma + gap.loc_noise_sigma, 0.0, 1.0);
  t.miss_rate = std::clamp(source.miss_rate + gap.miss_rate, 0.0, 1.0);
  t.fp_rate = std::clamp(source.fp_rate + gap.fp_rate, 0.0, 50.0);
  t.domain = Domain::target;
  return t;
}

void DetectionModel::validate() const {
  require(class_count >= 1, "detection class_count must be >= 1");
  require(logit_noise >= 0.0 && iou_coupling >= 0.0, "logit_noise and iou_coupling must be >= 0");
  require(distractor_share >= 0.0 && distractor_share <= 1.0, "distractor_share must lie in [0,1]");
  require(fp_min_size > 0.0 && fp_min_size <= fp_max_size && fp_max_size <= 1.0,
          "spurious box size range must satisfy 0 < min <= max <= 1");
  require(persistence >= 0.0 && persistence <= 1.0, "persistence must lie in [0,1]");
}

namespace {

struct ObjectView {
  bool missed = true;
  BBox box;
  double logit = 0.0;  ///< before the k scaling
};

// One detector's look at object j. The fresh draws are taken unconditionally
// so the stream position does not depend on the outcome.
ObjectView view_object(const Scene& scene, std::size_t j, const DetectorState& state,
                       const DetectionModel& model, Rng& rng) {
  const bool has_latent = j < scene.latents.size();
  const double rho = has_latent ? model.persistence : 0.0;
  const double a = std::sqrt(rho);
  const double b = std::sqrt(1.0 - rho);
  const ObjectLatent latent = has_latent ? scene.latents[j] : ObjectLatent{};

  const double miss_draw = rng.bernoulli(rho) ? latent.miss : rng.uniform();
  std::array<double, 4> jitter{};
  for (std::size_t c = 0; c < 4; ++c) {
    jitter[c] = state.loc_noise_sigma * (a * latent.offset[c] + b * rng.normal());
  }
  const double logit_noise = model.logit_noise * (a * latent.logit + b * rng.normal());

  ObjectView v;
  v.missed = miss_draw < state.miss_rate;
  const BBox& g = scene.gt.detections[j].bbox;
  v.box = clip_box({g.x1 + jitter[0], g.y1 + jitter[1], g.x2 + jitter[2], g.y2 + jitter[3]});
  v.logit = model.tp_logit + logit_noise - model.iou_coupling * (1.0 - iou(v.box, g));
  return v;
}

}  // namespace

LabelSet simulate_detections(const Scene& scene, const DetectorState& state, const DetectionModel& model,
                             Rng& rng) {
  std::vector<Detection> out;
  const double k = state.conf_calibration;
  const double sd = state.loc_noise_sigma;
  for (std::size_t j = 0; j < scene.gt.size(); ++j) {
    const auto v = view_object(scene, j, state, model, rng);
    if (!v.missed) out.push_back(Detection{v.box, scene.gt.detections[j].class_id, sigmoid(k * v.logit)});
  }
  const int spurious = rng.poisson(state.fp_rate);
  for (int i = 0; i < spurious; ++i) {
    BBox box;
    if (!scene.distractors.empty() && rng.bernoulli(model.distractor_share)) {
      const auto idx = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(scene.distractors.size()) - 1));
      const auto& d = scene.distractors[idx];
      box = clip_box({d.x1 + rng.normal(0.0, sd), d.y1 + rng.normal(0.0, sd), d.x2 + rng.normal(0.0, sd),
                      d.y2 + rng.normal(0.0, sd)});
    } else {
      const double w = rng.uniform(model.fp_min_size, model.fp_max_size);
      const double h = rng.uniform(model.fp_min_size, model.fp_max_size);
      const double x1 = rng.uniform(0.0, 1.0 - w);
      const double y1 = rng.uniform(0.0, 1.0 - h);
      box = clip_box({x1, y1, x1 + w, y1 + h});
    }
    const int cls = static_cast<int>(rng.uniform_int(0, model.class_count - 1));
    const double z = model.fp_logit + rng.normal(0.0, model.logit_noise);
    out.push_back(Detection{box, cls, sigmoid(k * z)});
  }
  return make_label_set(scene.image_id, std::move(out), LabelKind::prediction);
}

void TrainingDynamics::validate() const {
  require(learn_gain >= 0.0 && hard_sample_bonus >= 0.0, "learn_gain and hard_sample_bonus must be >= 0");
  require(floor_loc >= 0.0 && floor_loc <= 1.0, "floor_loc must lie in [0,1]");
  require(floor_miss >= 0.0 && floor_miss <= 1.0, "floor_miss must lie in [0,1]");
  require(floor_fp >= 0.0 && floor_fp <= 50.0, "floor_fp must lie in [0,50]");
  require(transfer_loc >= 0.0 && transfer_miss >= 0.0 && transfer_fp >= 0.0, "transfer factors must be >= 0");
}

LabelQuality measure_label_quality(std::span<const LabelSet> labels, std::span<const Scene> scenes,
                                   const LossWeights& weights) {
  std::map<std::string, const Scene*> by_id;
  for (const auto& s : scenes) by_id[s.image_id] = &s;

  std::size_t gt_total = 0;
  std::size_t gt_found = 0;
  double fp_weight = 0.0;
  CompensatedSum err_sum;
  CompensatedSum w_sum;
  std::size_t images = 0;
  for (const auto& set : labels) {
    const auto it = by_id.find(set.image_id);
    if (it == by_id.end()) continue;
    ++images;
    const auto& gt = it->second->gt;
    const auto m = match_tp_fp(set, gt, 0.5);
    gt_total += gt.size();
    gt_found += std::count(m.gt_matched.begin(), m.gt_matched.end(), true);
    for (std::size_t i = 0; i < m.detections.size(); ++i) {
      const auto& d = m.detections[i];
      if (!m.is_tp[i]) {
        fp_weight += d.score;
        continue;
      }
      const double w = weights.adaptive ? label_weight(d.score, weights.tau) : 1.0;
      const auto& g = gt.detections[*m.matched_gt[i]].bbox;
      const double err = 0.25 * (std::abs(d.bbox.x1 - g.x1) + std::abs(d.bbox.y1 - g.y1) +
                                 std::abs(d.bbox.x2 - g.x2) + std::abs(d.bbox.y2 - g.y2));
      err_sum.add(w * err);
      w_sum.add(w);
    }
  }
  LabelQuality q;
  q.valid = images > 0;
  q.recall = gt_total == 0 ? 1.0 : static_cast<double>(gt_found) / static_cast<double>(gt_total);
  q.fp_per_image = images == 0 ? 0.0 : fp_weight / static_cast<double>(images);
  // Mean absolute error of a Gaussian is sigma * sqrt(2/pi).
  q.loc_sigma = w_sum.value() > 0.0 ? err_sum.value() / w_sum.value() * std::sqrt(std::numbers::pi / 2.0) : 0.0;
  return q;
}

NoiseFloors effective_floors(const TrainingDynamics& dynamics, const LabelQuality& quality) {
  NoiseFloors f{dynamics.floor_loc, dynamics.floor_miss, dynamics.floor_fp};
  if (!quality.valid) return f;
  f.loc = std::max(f.loc, dynamics.transfer_loc * quality.loc_sigma);
  f.miss = std::max(f.miss, std::min(1.0, dynamics.transfer_miss * (1.0 - quality.recall)));
  f.fp = std::max(f.fp, dynamics.transfer_fp * quality.fp_per_image);
  return f;
}

DetectorState train_step(const DetectorState& state, std::span<const LossRecord> supervision,
                         const TrainingDynamics& dynamics, const LossWeights& weights,
                         const LabelQuality& quality) {
  if (supervision.empty()) return state;
  CompensatedSum loss;
  std::size_t simple = 0;
  for (const auto& r : supervision) {
    loss.add(record_loss(r, weights));
    if (classify_simple(r, weights)) ++simple;
  }
  const double n = static_cast<double>(supervision.size());
  const double signal =
      loss.value() / n + dynamics.hard_sample_bonus * (1.0 - static_cast<double>(simple) / n);
  const double factor = std::exp(-dynamics.learn_gain * signal);
  const NoiseFloors floors = effective_floors(dynamics, quality);

  auto approach = [factor](double p, double floor) { return p > floor ? floor + (p - floor) * factor : p; };
  DetectorState next = state;
  next.loc_noise_sigma = approach(state.loc_noise_sigma, floors.loc);
  next.miss_rate = approach(state.miss_rate, floors.miss);
  next.fp_rate = approach(state.fp_rate, floors.fp);
  return next;
}

DetectorState distill_to_floors(const DetectorState& state, const TrainingDynamics& dynamics,
                                const LabelQuality& quality) {
  const NoiseFloors floors = effective_floors(dynamics, quality);
  DetectorState next = state;
  next.loc_noise_sigma = std::min(state.loc_noise_sigma, floors.loc);
  next.miss_rate = std::min(state.miss_rate, floors.miss);
  next.fp_rate = std::min(state.fp_rate, floors.fp);
  return next;
}

namespace {

// Moves every coordinate of `pred` by `shift` away from the matching
// coordinate of `target` (outward when equal): the sign step that raises
// 1 - IoU.
BBox push_away(const BBox& pred, const BBox& target, double shift) {
  auto step = [shift](double p, double t, double outward) {
    if (p > t) return p + shift;
    if (p < t) return p - shift;
    return p + outward * shift;
  };
  return clip_box({step(pred.x1, target.x1, -1.0), step(pred.y1, target.y1, -1.0), step(pred.x2, target.x2, 1.0),
                   step(pred.y2, target.y2, 1.0)});
}

}  // namespace

RecordBatch build_loss_records(const Scene& scene, const LabelSet& pseudo, const DetectorState& state,
                               const DetectionModel& model, const std::optional<AdversarialShift>& shift,
                               Rng& rng) {
  RecordBatch batch;
  const auto m = match_tp_fp(pseudo, scene.gt, 0.5);
  const double k = state.conf_calibration;
  for (std::size_t i = 0; i < m.detections.size(); ++i) {
    const Detection& label = m.detections[i];
    const double z_noise = rng.normal(0.0, model.logit_noise);
    LossRecord clean;
    LossRecord adv;
    bool detected = false;
    if (m.is_tp[i]) {
      const auto v = view_object(scene, *m.matched_gt[i], state, model, rng);
      detected = !v.missed;
      if (detected) {
        const BBox box = v.box;
        const double z = v.logit;
        const Detection pred{box, label.class_id, 1.0};
        clean = surrogate_losses(pred, label, safe_prob(sigmoid(k * z)));
        if (shift) {
          const Detection moved{push_away(box, label.bbox, shift->box_shift), label.class_id, 1.0};
          adv = surrogate_losses(moved, label, safe_prob(sigmoid(k * (z - shift->logit_shift))));
        }
      }
    }
    if (!detected) {
      const double z = model.fp_logit + z_noise;
      clean = missed_losses(label, safe_prob(sigmoid(k * z)));
      if (shift) adv = missed_losses(label, safe_prob(sigmoid(k * (z - shift->logit_shift))));
    }
    for (LossRecord* r : {&clean, &adv}) {
      r->image_id = pseudo.image_id;
      r->label_index = i;
      r->is_true_positive = m.is_tp[i];
    }
    batch.clean.push_back(clean);
    if (shift) batch.adversarial.push_back(adv);
  }
  return batch;
}

void AdversaryConfig::validate() const {
  require(loc_gain >= 0.0 && cls_gain >= 0.0, "adversary gains must be >= 0");
  require(toy_weight_scale > 0.0, "toy_weight_scale must be positive");
  require(mosaics_per_epoch >= 1, "mosaics_per_epoch must be >= 1");
  mosaic.validate();
}

double adversarial_strength(std::span<const LabeledImage> source, std::span<const LabeledImage> target,
                            double epsilon, bool use_domain_mix, const AdversaryConfig& cfg, Seed seed,
                            int epoch) {
  if (!(epsilon > 0.0)) return 0.0;
  if (target.empty()) return 0.0;
  CompensatedSum gain;
  for (int k = 0; k < cfg.mosaics_per_epoch; ++k) {
    Rng rng = Rng::derive(seed, {kMosaic, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(k)});
    ImageTensor image;
    bool has_labels = false;
    if (use_domain_mix && !source.empty()) {
      auto mixed = domain_mix(source, target, rng, cfg.mosaic);
      has_labels = !mixed.labels.empty();
      image = std::move(mixed.image);
    } else {
      const auto& pick = target[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(target.size()) - 1))];
      image = pick.image;
      has_labels = !pick.labels.empty();
    }
    const auto model =
        random_toy_model(image, cfg.toy_weight_scale, has_labels ? 1 : 0, Rng::derive(seed, {kToyModel}));
    const auto lg = toy_model_loss_grad(image, model);
    const auto perturbed = fgsm_perturb(image, lg.gradient, epsilon);
    gain.add(toy_model_loss(perturbed, model) - lg.loss);
  }
  return std::max(0.0, gain.value() / cfg.mosaics_per_epoch);
}

void SimulationConfig::validate() const {
  thresholds.validate();
  loss.validate();
  require(epsilon >= 0.0 && std::isfinite(epsilon), "epsilon must be finite and >= 0");
  require(epochs >= 0, "epochs must be >= 0");
  require(update_interval >= 1, "update_interval must be >= 1");
  require(supervision_conf >= 0.0 && supervision_conf <= 1.0, "supervision_conf must lie in [0,1]");
  require(student_conf >= 0.0 && student_conf <= 1.0, "student_conf must lie in [0,1]");
  require(report_conf >= 0.0 && report_conf <= 1.0, "report_conf must lie in [0,1]");
  require(student_epochs >= 0, "student_epochs must be >= 0");
  require(train_images >= 1 && eval_images >= 1 && source_images >= 1, "image counts must be >= 1");
  scenes.validate();
  detection.validate();
  require(detection.class_count == scenes.class_count, "detection and scene class counts differ");
  source_teacher.validate();
  source_student.validate();
  dynamics.validate();
  adversary.validate();
  validate_bin_edges(fp_bin_edges);
}

bool is_update_epoch(int epoch, int interval) {
  return epoch == 1 || (epoch > 0 && epoch % interval == 0);
}

namespace {

std::string image_name(char prefix, int i) { return fmt::format("{}{:05d}", prefix, i); }

std::vector<Scene> make_scenes(const SimulationConfig& cfg, Seed seed, Purpose purpose, int count, Domain domain,
                               char prefix, bool render) {
  std::vector<Scene> scenes(static_cast<std::size_t>(count));
  parallel_for(scenes.size(), [&](std::size_t i) {
    Rng rng = Rng::derive(seed, {purpose, i});
    scenes[i] = generate_scene(rng, cfg.scenes, domain, image_name(prefix, static_cast<int>(i)));
    if (render) scenes[i].rendered = render_scene(scenes[i], cfg.scenes.render_size, cfg.scenes.class_count, rng);
  });
  return scenes;
}

std::vector<LabelSet> detect_all(std::span<const Scene> scenes, const DetectorState& state,
                                 const DetectionModel& model, Seed seed, Purpose purpose, std::uint64_t epoch) {
  std::vector<LabelSet> out(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) {
    Rng rng = Rng::derive(seed, {purpose, epoch, i});
    out[i] = simulate_detections(scenes[i], state, model, rng);
  });
  return out;
}

std::vector<LabelSet> ground_truth(std::span<const Scene> scenes) {
  std::vector<LabelSet> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(s.gt);
  return out;
}

double safe_map50(std::span<const LabelSet> dets, std::span<const LabelSet> gts, int classes) {
  try {
    return map50(dets, gts, classes).map;
  } catch (const ValidationError&) {
    return 0.0;
  }
}

std::vector<LabelSet> supervision_of(const MemoryBank& bank, const SimulationConfig& cfg) {
  return bank_snapshot(bank, bank.strategy == BankStrategy::mevc, cfg.supervision_conf);
}

struct Records {
  std::vector<LossRecord> clean;
  std::vector<LossRecord> adversarial;
};

Records records_for(std::span<const Scene> scenes, std::span<const LabelSet> labels, const DetectorState& state,
                    const DetectionModel& model, const std::optional<AdversarialShift>& shift, Seed seed,
                    Purpose purpose, std::uint64_t epoch) {
  std::map<std::string, const LabelSet*> by_id;
  for (const auto& l : labels) by_id[l.image_id] = &l;
  std::vector<RecordBatch> batches(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) {
    const auto it = by_id.find(scenes[i].image_id);
    if (it == by_id.end()) return;
    Rng rng = Rng::derive(seed, {purpose, epoch, i});
    batches[i] = build_loss_records(scenes[i], *it->second, state, model, shift, rng);
  });
  Records out;
  for (auto& b : batches) {
    out.clean.insert(out.clean.end(), b.clean.begin(), b.clean.end());
    out.adversarial.insert(out.adversarial.end(), b.adversarial.begin(), b.adversarial.end());
  }
  return out;
}

}  // namespace

ExperimentReport run_self_training(const SimulationConfig& cfg, Seed seed) {
  cfg.validate();
  const bool render = cfg.adversarial;
  const auto train = make_scenes(cfg, seed, kTrainScenes, cfg.train_images, Domain::target, 't', render);
  const auto eval = make_scenes(cfg, seed, kEvalScenes, cfg.eval_images, Domain::target, 'e', false);
  const auto source = make_scenes(cfg, seed, kSourceScenes, cfg.source_images, Domain::source, 's', render);
  const auto train_gt = ground_truth(train);
  const auto eval_gt = ground_truth(eval);
  const int classes = cfg.scenes.class_count;

  ExperimentReport report;
  report.run_name = cfg.name;
  report.strategy = cfg.strategy;
  report.awl = cfg.loss.adaptive;
  report.adversarial = cfg.adversarial;
  report.epsilon = cfg.epsilon;
  report.seed = seed;

  // Step 1: source-pretrained teacher, degraded by the domain gap on target.
  DetectorState teacher = apply_domain_gap(cfg.source_teacher, cfg.domain_gap);
  const auto initial = detect_all(train, teacher, cfg.detection, seed, kInitPreds, 0);
  MemoryBank bank = init_bank(initial, cfg.thresholds, cfg.strategy);
  bank.rescale_confidence = cfg.rescale_confidence;

  // Opaque source-domain term: the source teacher on its own labelled data.
  double source_loss = 0.0;
  {
    const auto src_gt = ground_truth(source);
    const auto recs = records_for(source, src_gt, cfg.source_teacher, cfg.detection, std::nullopt, seed,
                                  kSourceRecords, 0);
    if (!recs.clean.empty()) source_loss = total_loss(0.0, recs.clean, cfg.loss) / recs.clean.size();
  }

  std::vector<LabeledImage> source_images;
  if (render) {
    for (const auto& s : source) source_images.push_back({*s.rendered, s.gt});
  }

  auto measure = [&](int epoch, bool updated, const Proportion& simple, double loss, std::size_t n_records,
                     double strength) {
    EpochRow row;
    row.epoch = epoch;
    row.bank_updated = updated;
    const auto labels = supervision_of(bank, cfg);
    row.pseudo_labels = detection_quality(labels, train_gt, cfg.report_conf);
    row.pseudo_map50 = safe_map50(labels, train_gt, classes);
    for (const auto& l : labels) row.pseudo_count += l.size();
    row.simple = simple;
    row.fp_hist = fp_by_confidence(labels, train_gt, cfg.fp_bin_edges);
    row.fp_rate_low = row.fp_hist.aggregate_rate(cfg.loss.tau, true);
    row.fp_rate_high = row.fp_hist.aggregate_rate(cfg.loss.tau, false);
    const auto preds = detect_all(eval, teacher, cfg.detection, seed, kEvalPreds, static_cast<std::uint64_t>(epoch));
    row.teacher_ap50 = safe_map50(preds, eval_gt, classes);
    row.total_loss = loss;
    row.record_count = n_records;
    row.adversarial_strength = strength;
    row.teacher = teacher;
    return row;
  };

  report.rows.push_back(measure(0, false, Proportion{}, source_loss, 0, 0.0));
  if (cfg.keep_banks) report.banks.push_back(bank);

  // Step 2: adapted-teacher loop.
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto labels = supervision_of(bank, cfg);
    const auto quality = measure_label_quality(labels, train, cfg.loss);

    std::optional<AdversarialShift> shift;
    double strength = 0.0;
    if (cfg.adversarial) {
      std::vector<LabeledImage> target_images;
      std::map<std::string, const LabelSet*> by_id;
      for (const auto& l : labels) by_id[l.image_id] = &l;
      for (const auto& s : train) {
        const auto it = by_id.find(s.image_id);
        target_images.push_back({*s.rendered, it == by_id.end() ? LabelSet{s.image_id, {}, LabelKind::pseudo_label}
                                                                : *it->second});
      }
      if (cfg.keep_mosaic && epoch == 1 && cfg.domain_mix) {
        report.mosaic = domain_mix(source_images, target_images,
                                   Rng::derive(seed, {kMosaic, 1, 0}), cfg.adversary.mosaic);
      }
      strength = adversarial_strength(source_images, target_images, cfg.epsilon, cfg.domain_mix, cfg.adversary,
                                      seed, epoch);
      shift = AdversarialShift{cfg.adversary.loc_gain * strength, cfg.adversary.cls_gain * strength};
    }

    const auto recs = records_for(train, labels, teacher, cfg.detection, shift, seed, kRecords,
                                  static_cast<std::uint64_t>(epoch));
    teacher = train_step(teacher, recs.clean, cfg.dynamics, cfg.loss, quality);
    if (cfg.adversarial) teacher = train_step(teacher, recs.adversarial, cfg.dynamics, cfg.loss, quality);

    std::vector<LossRecord> all = recs.clean;
    all.insert(all.end(), recs.adversarial.begin(), recs.adversarial.end());
    const auto simple = simple_proportion(all, cfg.loss, true);
    const double loss = total_loss(source_loss, all, cfg.loss);

    if (cfg.keep_records) {
      for (std::size_t i = 0; i < all.size(); ++i) {
        report.records.push_back(EpochRecord{epoch, i >= recs.clean.size(), all[i],
                                             localization_weight(all[i], cfg.loss),
                                             classify_simple(all[i], cfg.loss)});
      }
    }

    const bool update = is_update_epoch(epoch, cfg.update_interval);
    if (update) {
      const auto preds = detect_all(train, teacher, cfg.detection, seed, kUpdatePreds, static_cast<std::uint64_t>(epoch));
      bank = update_bank(std::move(bank), preds);
    }
    report.rows.push_back(measure(epoch, update, simple, loss, all.size(), strength));
    if (cfg.keep_banks) report.banks.push_back(bank);
  }

  // Step 3: student distilled from the final pseudo labels.
  const auto final_labels =
      bank_snapshot(bank, bank.strategy == BankStrategy::mevc, std::max(cfg.student_conf, cfg.supervision_conf));
  const auto student_quality = measure_label_quality(final_labels, train, cfg.loss);
  DetectorState student = apply_domain_gap(cfg.source_student, cfg.domain_gap);
  if (cfg.student_epochs == 0) {
    student = distill_to_floors(student, cfg.dynamics, student_quality);
  } else {
    for (int e = 0; e < cfg.student_epochs; ++e) {
      const auto recs = records_for(train, final_labels, student, cfg.detection, std::nullopt, seed,
                                    kStudentRecords, static_cast<std::uint64_t>(e));
      student = train_step(student, recs.clean, cfg.dynamics, cfg.loss, student_quality);
    }
  }
  const auto student_preds = detect_all(eval, student, cfg.detection, seed, kStudentEval, 0);
  report.student = student;
  report.student_ap50 = safe_map50(student_preds, eval_gt, classes);
  report.rows.back().student_ap50 = report.student_ap50;
  return report;
}

}  // namespace desimpl
