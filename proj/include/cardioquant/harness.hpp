#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cardioquant/ensemble.hpp"
#include "cardioquant/geometry.hpp"
#include "cardioquant/models.hpp"
#include "cardioquant/phantom.hpp"
#include "cardioquant/phase.hpp"

namespace cq {

// The three estimation routes compared by the benchmark, in report order.
inline constexpr int kMethodCount = 3;
enum class Method { kDirect = 0, kSeg = 1, kEnsemble = 2 };
extern const std::array<std::string, kMethodCount> kMethodNames;

// Index groups used for report averages and frame-wise curves.
inline constexpr int kGroupCount = 3;
extern const std::array<std::string, kGroupCount> kGroupNames;  // Area, Dimension, RWT
int group_of_index(int index);

// Subject-level cross-validation assignment: every subject sits in exactly
// one fold with all of its frames.
struct FoldPlan {
  int k = 3;
  std::uint64_t seed = 7;
  std::vector<std::vector<std::string>> folds;  // fold -> subject ids, sorted
};

// Shuffles the ids with a stream derived from the seed, deals them round
// robin (so fold sizes differ by at most one), then sorts each fold's ids
// for stable iteration. Throws ValidationError when k < 1, k exceeds the
// subject count, or ids repeat.
FoldPlan make_folds(const std::vector<std::string>& subject_ids, int k, std::uint64_t seed);

// How the 2nd-level fit obtains its 1st-level training predictions. Out of
// fold is the default: the training set is split 80/20 five ways, base
// models trained on each 80% predict the held 20%, so every training frame
// gets a prediction from models that never saw it; the final base models are
// then retrained on the full training set. In-sample skips the rotation and
// fits on the final models' own training-set predictions.
enum class Stacking { kOutOfFold, kInSample };

struct CvConfig {
  TrainConfig direct_train = direct_train_defaults();
  TrainConfig unet_train = unet_train_defaults();
  TrainConfig masknet_train = masknet_train_defaults();
  Stacking stacking = Stacking::kOutOfFold;
  // Master seed. Per-model streams are derived as mix_seed(seed,
  // "fold<f>/<net>") for the final models and mix_seed(seed,
  // "fold<f>/stack<c>/<net>") for stacking rotations, overriding the seed
  // fields of the per-model train configs; rerunning any single training
  // with the derived seed reproduces its weights byte for byte.
  std::uint64_t seed = 7;
  // When positive, lengths are reported in mm (scaled by this) and areas in
  // mm^2; otherwise everything stays in pixel units.
  double pixel_spacing_mm = 0.0;
  std::string dataset_hash;  // echoed into the report metadata
};

struct IndexStats {
  double mae = 0.0;
  double std_dev = 0.0;  // population std of the absolute errors
};

// Aggregate numbers of one cross-validation run. Group stats are the plain
// average of the member indices' MAE and std. Curves hold the per-frame MAE
// of each index group (mean over the group's indices, then over subjects).
struct EvalReport {
  std::array<std::array<IndexStats, IndexVector::kCount>, kMethodCount> per_index{};
  std::array<std::array<IndexStats, kGroupCount>, kMethodCount> per_group{};
  std::array<std::array<std::array<double, kFramesPerCycle>, kGroupCount>, kMethodCount>
      curves{};
  // Phase accuracy after cyclic regularization, and of the raw thresholded
  // bits, per method; a constant predicted area sequence falls back to
  // all-diastolic raw bits.
  std::array<double, kMethodCount> phase_acc{};
  std::array<double, kMethodCount> raw_phase_acc{};

  std::uint64_t seed = 0;
  int fold_count = 0;
  int subject_count = 0;
  int image_size = 0;
  std::string stacking;
  std::string dataset_hash;
  std::string unit;  // "px" or "mm"
};

// Held-out predictions for one subject from one method, in report units.
struct SubjectPrediction {
  std::string id;
  std::array<IndexVector, kFramesPerCycle> frames{};
  PhaseSequence phase{};  // regularized bits
};

// Everything trained for one fold, kept so the run can be persisted and the
// 2nd-level fit audited: base training MSEs are measured on the same stacked
// samples the ensemble was fit on.
struct FoldArtifacts {
  ModelWeights direct;
  ModelWeights unet;
  ModelWeights masknet;
  EnsembleWeights ensemble;
  std::array<double, IndexVector::kCount> base_direct_mse{};
  std::array<double, IndexVector::kCount> base_seg_mse{};
};

struct RunResult {
  EvalReport report;
  std::array<std::vector<SubjectPrediction>, kMethodCount> predictions;  // sorted by id
  std::vector<FoldArtifacts> folds;
};

// Runs the full experiment: per fold, trains the three networks on the other
// folds, fits the ensemble on stacked predictions (see Stacking), predicts
// every frame of the held-out fold with all three methods, and infers each
// subject's phase by thresholding and regularizing the predicted cavity
// areas. Errors are aggregated per frame across all held-out subjects.
// Throws ValidationError when the plan does not cover the dataset exactly or
// image sizes are mixed; training failures propagate with fold context.
RunResult run_cv(const std::vector<Subject>& dataset, const FoldPlan& plan,
                 const CvConfig& cfg);

// Per-frame mean of the per-subject error curves. Throws ValidationError on
// empty input. The mean of the returned curve equals the mean of all inputs.
std::array<double, kFramesPerCycle> framewise_curve(
    const std::vector<std::array<double, kFramesPerCycle>>& per_subject_errors);

// Writes the run to out_dir: report.csv (method,group,index,mae,std, plus
// group-average rows), report.md (grid with the best MAE per row bolded),
// curves.csv (frame,method,group,mae), phase.csv (method,accuracy),
// predictions/<method>/<id>.csv (frame, 11 indices at full float precision,
// phase bit), and models/fold_<f>/ with the three networks' weights and the
// ensemble coefficients. Re-emitting the same result writes identical bytes.
// Throws IoError with path context on filesystem failures.
void emit_report(const RunResult& result, const std::string& out_dir);

}  // namespace cq
