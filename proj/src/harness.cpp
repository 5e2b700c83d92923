#include "cardioquant/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "cardioquant/errors.hpp"
#include "cardioquant/rng.hpp"

namespace fs = std::filesystem;

namespace cq {

const std::array<std::string, kMethodCount> kMethodNames = {"direct", "seg", "ensemble"};
const std::array<std::string, kGroupCount> kGroupNames = {"Area", "Dimension", "RWT"};

int group_of_index(int index) {
  if (index < 0 || index >= IndexVector::kCount)
    throw ValidationError("index " + std::to_string(index) + " outside 0..10");
  if (index < 2) return 0;
  if (index < 5) return 1;
  return 2;
}

namespace {

constexpr int kStackingParts = 5;

std::string fmt_fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// Shortest decimal form that round-trips the float exactly, so consumers of
// the prediction dumps can rebuild the report numbers bit for bit.
std::string fmt_exact(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

int group_size(int g) { return g == 0 ? 2 : g == 1 ? 3 : 6; }

}  // namespace

FoldPlan make_folds(const std::vector<std::string>& subject_ids, int k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("fold count must be at least 1, got " + std::to_string(k));
  if (static_cast<std::size_t>(k) > subject_ids.size())
    throw ValidationError("cannot split " + std::to_string(subject_ids.size()) +
                          " subjects into " + std::to_string(k) + " folds");
  std::set<std::string> unique(subject_ids.begin(), subject_ids.end());
  if (unique.size() != subject_ids.size())
    throw ValidationError("subject ids repeat; folds must be subject-disjoint");

  std::vector<std::string> shuffled = subject_ids;
  Rng rng(mix_seed(seed, "folds"));
  rng.shuffle(shuffled);

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.assign(static_cast<std::size_t>(k), {});
  for (std::size_t i = 0; i < shuffled.size(); ++i)
    plan.folds[i % static_cast<std::size_t>(k)].push_back(shuffled[i]);
  for (auto& fold : plan.folds) std::sort(fold.begin(), fold.end());
  return plan;
}

std::array<double, kFramesPerCycle> framewise_curve(
    const std::vector<std::array<double, kFramesPerCycle>>& per_subject_errors) {
  if (per_subject_errors.empty())
    throw ValidationError("frame-wise curve needs at least one subject");
  std::array<double, kFramesPerCycle> curve{};
  for (const auto& row : per_subject_errors)
    for (int t = 0; t < kFramesPerCycle; ++t) curve[static_cast<std::size_t>(t)] += row[static_cast<std::size_t>(t)];
  for (double& v : curve) v /= static_cast<double>(per_subject_errors.size());
  return curve;
}

namespace {

struct Accumulator {
  // Per method, per index: running sums of |err| and err^2 over all frames.
  std::array<std::array<double, IndexVector::kCount>, kMethodCount> abs_sum{};
  std::array<std::array<double, IndexVector::kCount>, kMethodCount> sq_sum{};
  long frames = 0;
  // Per method, per group: one 20-point error row per subject.
  std::array<std::array<std::vector<std::array<double, kFramesPerCycle>>, kGroupCount>,
             kMethodCount>
      group_rows;
  std::array<std::vector<PhaseSequence>, kMethodCount> reg_phase;
  std::array<std::vector<PhaseSequence>, kMethodCount> raw_phase;
  std::vector<PhaseSequence> truth_phase;
};

double unit_scale(int index, double spacing) {
  if (spacing <= 0.0) return 1.0;
  return index < 2 ? spacing * spacing : spacing;
}

TrainConfig with_seed(const TrainConfig& base, std::uint64_t master, const std::string& label) {
  TrainConfig c = base;
  c.seed = mix_seed(master, label);
  return c;
}

}  // namespace

RunResult run_cv(const std::vector<Subject>& dataset, const FoldPlan& plan,
                 const CvConfig& cfg) {
  if (dataset.empty()) throw ValidationError("cross-validation needs a nonempty dataset");
  std::map<std::string, const Subject*> by_id;
  for (const Subject& s : dataset)
    if (!by_id.emplace(s.id, &s).second)
      throw ValidationError("dataset repeats subject id " + s.id);

  for (const Subject& s : dataset)
    if (static_cast<int>(s.frames.size()) != kFramesPerCycle)
      throw ValidationError("subject " + s.id + " has " + std::to_string(s.frames.size()) +
                            " frames, expected " + std::to_string(kFramesPerCycle));
  const int size = dataset.front().frames.front().image.dim(1);
  for (const Subject& s : dataset)
    for (const Frame& fr : s.frames)
      if (fr.image.dim(1) != size || fr.image.dim(2) != size)
        throw ValidationError("subject " + s.id + " has image size " +
                              std::to_string(fr.image.dim(1)) + ", expected " +
                              std::to_string(size));

  if (plan.k < 1 || plan.folds.size() != static_cast<std::size_t>(plan.k))
    throw ValidationError("fold plan holds " + std::to_string(plan.folds.size()) +
                          " folds but declares k=" + std::to_string(plan.k));
  std::set<std::string> planned;
  for (const auto& fold : plan.folds)
    for (const std::string& id : fold) {
      if (!by_id.count(id)) throw ValidationError("fold plan names unknown subject " + id);
      if (!planned.insert(id).second)
        throw ValidationError("fold plan repeats subject " + id);
    }
  if (planned.size() != dataset.size())
    throw ValidationError("fold plan covers " + std::to_string(planned.size()) + " of " +
                          std::to_string(dataset.size()) + " subjects");

  RunResult result;
  result.folds.resize(static_cast<std::size_t>(plan.k));
  Accumulator acc;
  std::array<std::map<std::string, SubjectPrediction>, kMethodCount> dumps;

  for (int f = 0; f < plan.k; ++f) {
    const std::string fold_tag = "fold" + std::to_string(f);
    auto fold_context = [&fold_tag](auto&& fn) {
      try {
        return fn();
      } catch (const TrainingError& e) {
        throw TrainingError(fold_tag + ": " + e.what());
      }
    };
    std::vector<Subject> train;
    for (int g = 0; g < plan.k; ++g) {
      if (g == f) continue;
      for (const std::string& id : plan.folds[static_cast<std::size_t>(g)])
        train.push_back(*by_id.at(id));
    }
    if (train.empty())
      throw ValidationError(fold_tag + " has an empty training set");

    std::vector<StackedSample> stacked;
    if (cfg.stacking == Stacking::kOutOfFold) {
      if (train.size() < 2)
        throw InsufficientDataError(
            "out-of-fold stacking needs at least 2 training subjects, " + fold_tag +
            " has " + std::to_string(train.size()));
      for (int c = 0; c < kStackingParts; ++c) {
        std::vector<Subject> part_train;
        std::vector<const Subject*> part_held;
        for (std::size_t i = 0; i < train.size(); ++i) {
          if (static_cast<int>(i % kStackingParts) == c)
            part_held.push_back(&train[i]);
          else
            part_train.push_back(train[i]);
        }
        if (part_held.empty()) continue;
        const std::string tag = fold_tag + "/stack" + std::to_string(c) + "/";
        const ModelWeights wd = fold_context([&] {
          return train_direct(part_train, with_seed(cfg.direct_train, cfg.seed, tag + "direct"));
        });
        const ModelWeights wu = fold_context([&] {
          return train_unet(part_train, with_seed(cfg.unet_train, cfg.seed, tag + "unet"));
        });
        const ModelWeights wm = fold_context([&] {
          return train_masknet(part_train,
                               with_seed(cfg.masknet_train, cfg.seed, tag + "masknet"));
        });
        DirectPredictor dp(wd);
        SegPredictor sp(wu, wm);
        for (const Subject* s : part_held)
          for (const Frame& fr : s->frames) {
            StackedSample sample;
            sample.direct = dp.predict(fr.image);
            sample.seg = sp.predict(fr.image).second;
            sample.truth = fr.truth;
            stacked.push_back(sample);
          }
      }
    }

    FoldArtifacts& art = result.folds[static_cast<std::size_t>(f)];
    art.direct = fold_context([&] {
      return train_direct(train, with_seed(cfg.direct_train, cfg.seed, fold_tag + "/direct"));
    });
    art.unet = fold_context([&] {
      return train_unet(train, with_seed(cfg.unet_train, cfg.seed, fold_tag + "/unet"));
    });
    art.masknet = fold_context([&] {
      return train_masknet(train, with_seed(cfg.masknet_train, cfg.seed, fold_tag + "/masknet"));
    });
    DirectPredictor direct(art.direct);
    SegPredictor seg(art.unet, art.masknet);

    if (cfg.stacking == Stacking::kInSample)
      for (const Subject& s : train)
        for (const Frame& fr : s.frames) {
          StackedSample sample;
          sample.direct = direct.predict(fr.image);
          sample.seg = seg.predict(fr.image).second;
          sample.truth = fr.truth;
          stacked.push_back(sample);
        }

    art.ensemble = fit_ensemble(stacked);
    for (int i = 0; i < IndexVector::kCount; ++i) {
      double d2 = 0.0;
      double s2 = 0.0;
      for (const StackedSample& sample : stacked) {
        const double rd = double(sample.truth[i]) - double(sample.direct[i]);
        const double rs = double(sample.truth[i]) - double(sample.seg[i]);
        d2 += rd * rd;
        s2 += rs * rs;
      }
      art.base_direct_mse[static_cast<std::size_t>(i)] = d2 / double(stacked.size());
      art.base_seg_mse[static_cast<std::size_t>(i)] = s2 / double(stacked.size());
    }

    for (const std::string& id : plan.folds[static_cast<std::size_t>(f)]) {
      const Subject& subj = *by_id.at(id);
      std::array<std::array<float, kFramesPerCycle>, kMethodCount> a1{};
      std::array<SubjectPrediction, kMethodCount> pred;
      for (auto& p : pred) p.id = id;
      std::array<std::array<std::array<double, kFramesPerCycle>, kGroupCount>, kMethodCount>
          rows{};
      for (int t = 0; t < kFramesPerCycle; ++t) {
        const Frame& fr = subj.frames.at(static_cast<std::size_t>(t));
        std::array<IndexVector, kMethodCount> est;
        est[0] = direct.predict(fr.image);
        est[1] = seg.predict(fr.image).second;
        est[2] = predict_ensemble(art.ensemble, est[0], est[1]);
        for (int m = 0; m < kMethodCount; ++m) {
          a1[static_cast<std::size_t>(m)][static_cast<std::size_t>(t)] = est[static_cast<std::size_t>(m)].a1();
          IndexVector scaled;
          for (int i = 0; i < IndexVector::kCount; ++i) {
            const double u = unit_scale(i, cfg.pixel_spacing_mm);
            const double err =
                std::fabs(double(est[static_cast<std::size_t>(m)][i]) - double(fr.truth[i])) * u;
            scaled[i] = static_cast<float>(double(est[static_cast<std::size_t>(m)][i]) * u);
            acc.abs_sum[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)] += err;
            acc.sq_sum[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)] += err * err;
            const int g = group_of_index(i);
            rows[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)]
                [static_cast<std::size_t>(t)] += err / group_size(g);
          }
          pred[static_cast<std::size_t>(m)].frames[static_cast<std::size_t>(t)] = scaled;
        }
      }
      acc.frames += kFramesPerCycle;

      PhaseSequence truth_bits{};
      for (int t = 0; t < kFramesPerCycle; ++t)
        truth_bits[static_cast<std::size_t>(t)] =
            subj.frames.at(static_cast<std::size_t>(t)).phase ? 1 : 0;
      acc.truth_phase.push_back(truth_bits);

      for (int m = 0; m < kMethodCount; ++m) {
        PhaseSequence raw{};
        try {
          raw = threshold_phase(a1[static_cast<std::size_t>(m)]);
        } catch (const DegenerateSequenceError&) {
          raw = PhaseSequence{};
        }
        const PhaseSequence reg = regularize_phase(raw);
        acc.raw_phase[static_cast<std::size_t>(m)].push_back(raw);
        acc.reg_phase[static_cast<std::size_t>(m)].push_back(reg);
        pred[static_cast<std::size_t>(m)].phase = reg;
        for (int g = 0; g < kGroupCount; ++g)
          acc.group_rows[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)].push_back(
              rows[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)]);
        dumps[static_cast<std::size_t>(m)].emplace(id, pred[static_cast<std::size_t>(m)]);
      }
    }
  }

  EvalReport& rep = result.report;
  for (int m = 0; m < kMethodCount; ++m) {
    for (int i = 0; i < IndexVector::kCount; ++i) {
      const double mean =
          acc.abs_sum[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)] / double(acc.frames);
      const double msq =
          acc.sq_sum[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)] / double(acc.frames);
      rep.per_index[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)] = {
          mean, std::sqrt(std::max(0.0, msq - mean * mean))};
    }
    for (int g = 0; g < kGroupCount; ++g) {
      double mae = 0.0;
      double sd = 0.0;
      for (int i = 0; i < IndexVector::kCount; ++i) {
        if (group_of_index(i) != g) continue;
        mae += rep.per_index[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)].mae;
        sd += rep.per_index[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)].std_dev;
      }
      rep.per_group[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)] = {
          mae / group_size(g), sd / group_size(g)};
      rep.curves[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)] = framewise_curve(
          acc.group_rows[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)]);
    }
    rep.phase_acc[static_cast<std::size_t>(m)] =
        phase_accuracy(acc.reg_phase[static_cast<std::size_t>(m)], acc.truth_phase);
    rep.raw_phase_acc[static_cast<std::size_t>(m)] =
        phase_accuracy(acc.raw_phase[static_cast<std::size_t>(m)], acc.truth_phase);
  }
  rep.seed = cfg.seed;
  rep.fold_count = plan.k;
  rep.subject_count = static_cast<int>(dataset.size());
  rep.image_size = size;
  rep.stacking = cfg.stacking == Stacking::kOutOfFold ? "out-of-fold" : "in-sample";
  rep.dataset_hash = cfg.dataset_hash;
  rep.unit = cfg.pixel_spacing_mm > 0.0 ? "mm" : "px";

  for (int m = 0; m < kMethodCount; ++m)
    for (auto& [id, p] : dumps[static_cast<std::size_t>(m)])
      result.predictions[static_cast<std::size_t>(m)].push_back(p);
  return result;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void emit_report(const RunResult& result, const std::string& out_dir) {
  const EvalReport& rep = result.report;
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());

  {
    const fs::path path = root / "report.csv";
    auto out = open_out(path);
    out << "method,group,index,mae,std\n";
    for (int m = 0; m < kMethodCount; ++m)
      for (int i = 0; i < IndexVector::kCount; ++i)
        out << kMethodNames[static_cast<std::size_t>(m)] << ','
            << kGroupNames[static_cast<std::size_t>(group_of_index(i))] << ','
            << kIndexNames[static_cast<std::size_t>(i)] << ','
            << fmt_fixed(rep.per_index[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)].mae, 6)
            << ','
            << fmt_fixed(rep.per_index[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)].std_dev, 6)
            << '\n';
    for (int m = 0; m < kMethodCount; ++m)
      for (int g = 0; g < kGroupCount; ++g)
        out << kMethodNames[static_cast<std::size_t>(m)] << ','
            << kGroupNames[static_cast<std::size_t>(g)] << ",average,"
            << fmt_fixed(rep.per_group[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)].mae, 6)
            << ','
            << fmt_fixed(rep.per_group[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)].std_dev, 6)
            << '\n';
    finish(out, path);
  }

  {
    const fs::path path = root / "report.md";
    auto out = open_out(path);
    out << "# Left-ventricle quantification benchmark\n\n";
    out << "- subjects: " << rep.subject_count << ", image size: " << rep.image_size
        << ", folds: " << rep.fold_count << ", seed: " << rep.seed << "\n";
    out << "- stacking: " << rep.stacking << ", unit: " << rep.unit << "\n";
    if (!rep.dataset_hash.empty()) out << "- dataset: " << rep.dataset_hash << "\n";
    out << "\n| Index | Direct | Seg | Ensemble |\n|---|---|---|---|\n";
    auto cell = [&](const IndexStats& st, double best) {
      const std::string body = fmt_fixed(st.mae, 3) + " ± " + fmt_fixed(st.std_dev, 3);
      return st.mae == best ? "**" + body + "**" : body;
    };
    auto emit_row = [&](const std::string& label,
                        const std::array<IndexStats, kMethodCount>& stats) {
      double best = stats[0].mae;
      for (const IndexStats& st : stats) best = std::min(best, st.mae);
      out << "| " << label;
      for (int m = 0; m < kMethodCount; ++m)
        out << " | " << cell(stats[static_cast<std::size_t>(m)], best);
      out << " |\n";
    };
    for (int g = 0; g < kGroupCount; ++g) {
      for (int i = 0; i < IndexVector::kCount; ++i) {
        if (group_of_index(i) != g) continue;
        std::array<IndexStats, kMethodCount> stats;
        for (int m = 0; m < kMethodCount; ++m)
          stats[static_cast<std::size_t>(m)] =
              rep.per_index[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)];
        emit_row(kIndexNames[static_cast<std::size_t>(i)], stats);
      }
      std::array<IndexStats, kMethodCount> stats;
      for (int m = 0; m < kMethodCount; ++m)
        stats[static_cast<std::size_t>(m)] =
            rep.per_group[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)];
      emit_row(kGroupNames[static_cast<std::size_t>(g)] + " avg", stats);
    }
    out << "\n| Method | Phase accuracy |\n|---|---|\n";
    for (int m = 0; m < kMethodCount; ++m)
      out << "| " << kMethodNames[static_cast<std::size_t>(m)] << " | "
          << fmt_fixed(rep.phase_acc[static_cast<std::size_t>(m)], 4) << " |\n";
    finish(out, path);
  }

  {
    const fs::path path = root / "curves.csv";
    auto out = open_out(path);
    out << "frame,method,group,mae\n";
    for (int t = 0; t < kFramesPerCycle; ++t)
      for (int m = 0; m < kMethodCount; ++m)
        for (int g = 0; g < kGroupCount; ++g)
          out << t << ',' << kMethodNames[static_cast<std::size_t>(m)] << ','
              << kGroupNames[static_cast<std::size_t>(g)] << ','
              << fmt_fixed(rep.curves[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)]
                                     [static_cast<std::size_t>(t)],
                           6)
              << '\n';
    finish(out, path);
  }

  {
    const fs::path path = root / "phase.csv";
    auto out = open_out(path);
    out << "method,accuracy\n";
    for (int m = 0; m < kMethodCount; ++m)
      out << kMethodNames[static_cast<std::size_t>(m)] << ','
          << fmt_fixed(rep.phase_acc[static_cast<std::size_t>(m)], 6) << '\n';
    finish(out, path);
  }

  for (int m = 0; m < kMethodCount; ++m) {
    const fs::path dir = root / "predictions" / kMethodNames[static_cast<std::size_t>(m)];
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (const SubjectPrediction& p : result.predictions[static_cast<std::size_t>(m)]) {
      const fs::path path = dir / (p.id + ".csv");
      auto out = open_out(path);
      out << "frame";
      for (int i = 0; i < IndexVector::kCount; ++i)
        out << ',' << kIndexNames[static_cast<std::size_t>(i)];
      out << ",phase\n";
      for (int t = 0; t < kFramesPerCycle; ++t) {
        out << t;
        for (int i = 0; i < IndexVector::kCount; ++i)
          out << ',' << fmt_exact(p.frames[static_cast<std::size_t>(t)][i]);
        out << ',' << int(p.phase[static_cast<std::size_t>(t)]) << '\n';
      }
      finish(out, path);
    }
  }

  for (std::size_t f = 0; f < result.folds.size(); ++f) {
    const fs::path dir = root / "models" / ("fold_" + std::to_string(f));
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const FoldArtifacts& art = result.folds[f];
    save_weights(art.direct, (dir / "direct").string());
    save_weights(art.unet, (dir / "unet").string());
    save_weights(art.masknet, (dir / "masknet").string());
    save_ensemble(art.ensemble, (dir / "ensemble.json").string());
  }
}

}  // namespace cq
