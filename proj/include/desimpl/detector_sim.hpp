#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "desimpl/adaptive_loss.hpp"
#include "desimpl/adversarial_aug.hpp"
#include "desimpl/core_types.hpp"
#include "desimpl/eval_metrics.hpp"
#include "desimpl/memory_bank.hpp"
#include "desimpl/rng.hpp"

// Desk-scale stand-in for teacher/student self-training.
//
// The detector here is parametric, not neural. Its quality is three noise
// parameters (box jitter, miss rate, spurious-box rate) plus a confidence
// sharpness. Training moves the noise parameters toward floors. The floors
// come from the supervision itself (a model cannot become cleaner than the
// labels it fits) and the speed of approach grows with the loss the
// supervision still carries. The second part is where "simple samples
// teach little" is built in: hard_sample_bonus adds speed in proportion to
// the non-simple fraction. The simulator therefore demonstrates the
// mechanism inside this declared model; it does not independently verify it.

namespace desimpl {

struct SceneConfig {
  int min_boxes = 2;
  int max_boxes = 6;
  double min_size = 0.08;
  double max_size = 0.3;
  int class_count = 3;
  int max_distractors = 2;
  int render_size = 32;

  void validate() const;
};

/// Per-object draws that every detector shares. A detector looking at the
/// same image twice makes correlated mistakes; these carry the correlated part.
struct ObjectLatent {
  std::array<double, 4> offset{};  ///< standard normal, per coordinate
  double logit = 0.0;              ///< standard normal
  double miss = 0.0;               ///< uniform [0,1)
};

struct Scene {
  std::string image_id;
  LabelSet gt;  ///< kind ground_truth
  std::vector<ObjectLatent> latents;  ///< aligned with gt.detections
  Domain domain = Domain::target;
  /// Background structures the detector tends to fire on repeatedly.
  std::vector<BBox> distractors;
  std::optional<ImageTensor> rendered;
};

/// Uniformly placed non-degenerate boxes (area >= 1e-4) and distractors.
/// Throws ValidationError for an infeasible config.
Scene generate_scene(Rng& rng, const SceneConfig& cfg, Domain domain, std::string image_id);

/// Solid rectangles (one intensity per class) over uniform noise, 1 channel.
ImageTensor render_scene(const Scene& scene, int size, int class_count, Rng& rng);

struct DetectorState {
  double loc_noise_sigma = 0.03;  ///< per-coordinate jitter, normalized units
  double miss_rate = 0.35;
  double fp_rate = 1.0;             ///< expected spurious boxes per image
  double conf_calibration = 1.5;    ///< logit sharpness k > 0
  Domain domain = Domain::target;

  void validate() const;
  friend bool operator==(const DetectorState&, const DetectorState&) = default;
};

/// Additive source -> target degradation.
struct DomainGap {
  double loc_noise_sigma = 0.022;
  double miss_rate = 0.3;
  double fp_rate = 0.8;
};

DetectorState apply_domain_gap(const DetectorState& source, const DomainGap& gap);

/// Score model shared by every detector state.
struct DetectionModel {
  int class_count = 3;
  double tp_logit = 3.0;
  double fp_logit = -1.5;
  double logit_noise = 1.0;
  /// Logit penalty per unit of (1 - IoU) between a true detection and its object.
  double iou_coupling = 3.0;
  /// Probability that a spurious box lands on a scene distractor.
  double distractor_share = 0.6;
  double fp_min_size = 0.05;
  double fp_max_size = 0.3;
  /// Share of each object's box noise, logit noise and miss draw taken from
  /// its ObjectLatent rather than drawn fresh; 0 = independent views.
  double persistence = 0.85;

  void validate() const;
};

/// Each object is missed with miss_rate; survivors are jittered per
/// coordinate and scored sigma(k * (tp_logit + noise - coupling*(1-IoU))).
/// Jitter and logit noise mix the object's latent with fresh draws so that
/// the marginals stay N(0, sigma) and N(0, logit_noise).
/// Poisson(fp_rate) spurious boxes are scored sigma(k * (fp_logit + noise)).
LabelSet simulate_detections(const Scene& scene, const DetectorState& state,
                             const DetectionModel& model, Rng& rng);

struct TrainingDynamics {
  double learn_gain = 0.05;
  double hard_sample_bonus = 1.0;
  double floor_loc = 0.004;
  double floor_miss = 0.03;
  double floor_fp = 0.05;
  /// Supervision-implied floors: transfer * (label loc error, 1 - recall,
  /// confidence-weighted false labels per image).
  double transfer_loc = 1.0;
  double transfer_miss = 0.5;
  double transfer_fp = 0.4;

  void validate() const;
};

/// How good a supervision set is, measured against ground truth.
struct LabelQuality {
  bool valid = false;
  double recall = 1.0;
  double fp_per_image = 0.0;
  double loc_sigma = 0.0;
};

/// loc_sigma is the weighted mean absolute corner error of true labels
/// (weights from the adaptive loss when enabled), rescaled to a Gaussian
/// sigma.
LabelQuality measure_label_quality(std::span<const LabelSet> labels, std::span<const Scene> scenes,
                                   const LossWeights& weights);

struct NoiseFloors {
  double loc = 0.0;
  double miss = 0.0;
  double fp = 0.0;
};

NoiseFloors effective_floors(const TrainingDynamics& dynamics, const LabelQuality& quality);

/// One update. signal = mean record loss + hard_sample_bonus * (1 - simple
/// fraction); each noise parameter p above its floor f becomes
/// f + (p - f) * exp(-learn_gain * signal). Empty supervision is a no-op.
DetectorState train_step(const DetectorState& state, std::span<const LossRecord> supervision,
                         const TrainingDynamics& dynamics, const LossWeights& weights,
                         const LabelQuality& quality = {});

/// One-shot distillation: every noise parameter above its floor is set to it.
DetectorState distill_to_floors(const DetectorState& state, const TrainingDynamics& dynamics,
                                const LabelQuality& quality);

/// Loss-increasing displacement applied to adversarial predictions.
struct AdversarialShift {
  double box_shift = 0.0;    ///< moved away from the pseudo box per coordinate
  double logit_shift = 0.0;  ///< subtracted from the class logit
};

struct RecordBatch {
  std::vector<LossRecord> clean;
  std::vector<LossRecord> adversarial;  ///< empty when no shift is given
};

/// Surrogate losses of the model `state` against each pseudo label of one
/// image. The model's box for a true label is its own noisy view of the
/// matched object; false labels get no box (loc loss 1).
RecordBatch build_loss_records(const Scene& scene, const LabelSet& pseudo, const DetectorState& state,
                               const DetectionModel& model, const std::optional<AdversarialShift>& shift,
                               Rng& rng);

struct AdversaryConfig {
  double loc_gain = 0.08;
  double cls_gain = 4.0;
  double toy_weight_scale = 1.0;
  int mosaics_per_epoch = 2;
  MosaicConfig mosaic;

  void validate() const;
};

/// Mean loss increase of FGSM at `epsilon` on the toy model, measured over
/// DomainMix mosaics (or plain target images when use_domain_mix is false).
double adversarial_strength(std::span<const LabeledImage> source, std::span<const LabeledImage> target,
                            double epsilon, bool use_domain_mix, const AdversaryConfig& cfg, Seed seed,
                            int epoch);

struct SimulationConfig {
  std::string name = "desimpl";
  BankStrategy strategy = BankStrategy::wbf;
  BankThresholds thresholds;
  bool rescale_confidence = false;
  LossWeights loss;  ///< loss.adaptive toggles the adaptive weighted loss
  bool adversarial = true;
  double epsilon = 0.01;
  bool domain_mix = true;

  int epochs = 30;
  int update_interval = 1;

  /// Supervision re-filter on the bank export (0 keeps everything).
  double supervision_conf = 0.0;
  /// Step-3 pseudo-label threshold for the student.
  double student_conf = 0.3;
  /// 0 = one-shot distillation.
  int student_epochs = 0;
  /// Score threshold for pseudo-label precision/recall/F1 in the report.
  double report_conf = 0.3;

  int train_images = 200;
  int eval_images = 200;
  int source_images = 16;

  SceneConfig scenes;
  DetectionModel detection;
  DetectorState source_teacher{0.008, 0.08, 0.2, 1.5, Domain::source};
  DetectorState source_student{0.012, 0.12, 0.3, 1.5, Domain::source};
  DomainGap domain_gap;
  TrainingDynamics dynamics;
  AdversaryConfig adversary;
  std::vector<double> fp_bin_edges{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  bool keep_records = false;
  bool keep_banks = false;
  bool keep_mosaic = false;

  void validate() const;
};

/// Bank updates happen after epoch 1 and after every multiple of the interval.
bool is_update_epoch(int epoch, int interval);

struct EpochRow {
  int epoch = 0;
  bool bank_updated = false;
  DetectionQuality pseudo_labels;
  double pseudo_map50 = 0.0;
  std::size_t pseudo_count = 0;
  Proportion simple;
  FPHistogram fp_hist;
  double fp_rate_low = 0.0;
  double fp_rate_high = 0.0;
  double teacher_ap50 = 0.0;
  double total_loss = 0.0;
  std::size_t record_count = 0;
  double adversarial_strength = 0.0;
  DetectorState teacher;
  std::optional<double> student_ap50;
};

struct EpochRecord {
  int epoch = 0;
  bool adversarial = false;
  LossRecord record;
  double weight = 1.0;
  bool simple = false;
};

struct ExperimentReport {
  std::string run_name;
  BankStrategy strategy = BankStrategy::wbf;
  bool awl = true;
  bool adversarial = true;
  double epsilon = 0.0;
  Seed seed;
  std::string config_hash;
  std::vector<EpochRow> rows;
  DetectorState student;
  double student_ap50 = 0.0;
  std::vector<EpochRecord> records;  ///< filled when keep_records
  std::vector<MemoryBank> banks;     ///< bank after each epoch when keep_banks
  std::optional<MixedSample> mosaic;  ///< first epoch-1 mosaic when keep_mosaic
};

/// Step 1: source teacher + domain gap produces initial pseudo labels and
/// the bank. Step 2: per epoch, supervise from the bank snapshot (clean step,
/// then adversarial step), update the bank on schedule. Step 3: distil a
/// student from the final snapshot. Row 0 is the initial state.
ExperimentReport run_self_training(const SimulationConfig& cfg, Seed seed);

}  // namespace desimpl
