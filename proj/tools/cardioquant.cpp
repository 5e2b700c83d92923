#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "cardioquant/errors.hpp"
#include "cardioquant/harness.hpp"
#include "cardioquant/hash.hpp"
#include "cardioquant/models.hpp"
#include "cardioquant/pgm.hpp"
#include "cardioquant/phantom.hpp"
#include "cardioquant/rng.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class LogLevel { kOff = 0, kInfo = 1, kDebug = 2 };
LogLevel g_log = LogLevel::kOff;

void log_info(const std::string& msg) {
  if (g_log >= LogLevel::kInfo) std::cerr << "[cardioquant] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (g_log >= LogLevel::kDebug) std::cerr << "[cardioquant] " << msg << "\n";
}

void init_logging() {
  const char* env = std::getenv("CARDIOQUANT_LOG");
  if (env == nullptr) return;
  const std::string level(env);
  if (level == "off" || level.empty())
    g_log = LogLevel::kOff;
  else if (level == "info")
    g_log = LogLevel::kInfo;
  else if (level == "debug")
    g_log = LogLevel::kDebug;
  else
    std::cerr << "[cardioquant] ignoring unknown CARDIOQUANT_LOG value \"" << level << "\"\n";
}

// Benchmark definition: the json config file mirrors this struct one to one,
// and command-line flags override whatever the file set.
struct RunConfig {
  std::string data;
  std::string out;
  std::uint64_t seed = 7;
  int image_size = 64;
  int subjects = 45;
  int folds = 3;
  cq::TrainConfig direct = cq::direct_train_defaults();
  cq::TrainConfig unet = cq::unet_train_defaults();
  cq::TrainConfig masknet = cq::masknet_train_defaults();
  std::string stacking = "out-of-fold";
  double pixel_spacing_mm = 0.0;
};

void apply_model_keys(const json& j, const std::string& section, cq::TrainConfig& cfg,
                      const std::string& path) {
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs")
      cfg.epochs = value.get<int>();
    else if (key == "batch")
      cfg.batch = value.get<int>();
    else if (key == "lr")
      cfg.lr = value.get<double>();
    else
      throw cq::ParseError("config " + path + ": unknown key \"" + section + "." + key + "\"");
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cq::IoError("cannot open config " + path);
  json j;
  RunConfig cfg;
  try {
    in >> j;
    for (const auto& [key, value] : j.items()) {
      if (key == "data")
        cfg.data = value.get<std::string>();
      else if (key == "out")
        cfg.out = value.get<std::string>();
      else if (key == "seed")
        cfg.seed = value.get<std::uint64_t>();
      else if (key == "image_size")
        cfg.image_size = value.get<int>();
      else if (key == "subjects")
        cfg.subjects = value.get<int>();
      else if (key == "folds")
        cfg.folds = value.get<int>();
      else if (key == "direct")
        apply_model_keys(value, "direct", cfg.direct, path);
      else if (key == "unet")
        apply_model_keys(value, "unet", cfg.unet, path);
      else if (key == "masknet")
        apply_model_keys(value, "masknet", cfg.masknet, path);
      else if (key == "stacking")
        cfg.stacking = value.get<std::string>();
      else if (key == "pixel_spacing_mm")
        cfg.pixel_spacing_mm = value.get<double>();
      else
        throw cq::ParseError("config " + path + ": unknown key \"" + key + "\"");
    }
  } catch (const json::exception& e) {
    throw cq::ParseError("config " + path + ": " + e.what());
  }
  if (cfg.stacking != "out-of-fold" && cfg.stacking != "in-sample")
    throw cq::ParseError("config " + path + ": stacking must be out-of-fold or in-sample, got \"" +
                         cfg.stacking + "\"");
  return cfg;
}

// Per-subcommand copies of the flags shared by every command.
struct CommonFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 7;
  int threads = 1;
  CLI::Option* config_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  f.config_opt = cmd->add_option("--config", f.config, "json benchmark definition");
  f.out_opt = cmd->add_option("--out", f.out, "output directory");
  f.seed_opt = cmd->add_option("--seed", f.seed, "master seed for all randomness");
  cmd->add_option("--threads", f.threads, "BLAS worker threads (1 = fully deterministic)")
      ->check(CLI::Range(1, 256));
}

RunConfig merge_config(const CommonFlags& f) {
  RunConfig cfg;
  if (f.config_opt->count() > 0) cfg = load_config(f.config);
  if (f.out_opt->count() > 0) cfg.out = f.out;
  if (f.seed_opt->count() > 0) cfg.seed = f.seed;
  return cfg;
}

int require_value(const std::string& value, const std::string& what, CLI::App* cmd) {
  if (!value.empty()) return 0;
  std::cerr << "error: " << what << " is required (flag or config file)\n"
            << cmd->help() << "\n";
  return 2;
}

cq::Stacking parse_stacking(const std::string& token) {
  return token == "in-sample" ? cq::Stacking::kInSample : cq::Stacking::kOutOfFold;
}

std::string manifest_hash(const std::string& data_dir) {
  return cq::sha256_file((fs::path(data_dir) / "manifest.json").string());
}

// Frame images travel as [1,H,W]; the PGM writers take [H,W].
cq::Tensor squeeze_image(const cq::Tensor& img) {
  cq::Tensor flat({img.dim(1), img.dim(2)});
  flat.vec() = img.vec();
  return flat;
}

const cq::Subject& subject_at(const std::vector<cq::Subject>& subjects, int index) {
  if (index < 0 || index >= static_cast<int>(subjects.size()))
    throw cq::ValidationError("subject index " + std::to_string(index) + " outside 0.." +
                              std::to_string(subjects.size() - 1));
  return subjects[static_cast<std::size_t>(index)];
}

int cmd_gen(const CommonFlags& common, int subjects_flag, int size_flag, CLI::Option* subj_opt,
            CLI::Option* size_opt, CLI::App* cmd) {
  RunConfig cfg = merge_config(common);
  if (subj_opt->count() > 0) cfg.subjects = subjects_flag;
  if (size_opt->count() > 0) cfg.image_size = size_flag;
  if (int rc = require_value(cfg.out, "--out", cmd)) return rc;

  cq::PhantomSpec spec;
  spec.image_size = cfg.image_size;
  try {
    cq::validate(spec);
  } catch (const cq::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  log_info("generating " + std::to_string(cfg.subjects) + " subjects at " +
           std::to_string(cfg.image_size) + "px into " + cfg.out);
  cq::generate_dataset(spec, cfg.subjects, cfg.seed, cfg.out);
  std::cout << "wrote " << cfg.subjects << " subjects to " << cfg.out << "\n"
            << "manifest sha256: " << manifest_hash(cfg.out) << "\n";
  return 0;
}

int cmd_train(const CommonFlags& common, const std::string& model, const std::string& data_flag,
              int folds_exclude, CLI::Option* data_opt, CLI::App* cmd) {
  RunConfig cfg = merge_config(common);
  if (data_opt->count() > 0) cfg.data = data_flag;
  if (int rc = require_value(cfg.data, "--data", cmd)) return rc;
  if (cfg.out.empty()) cfg.out = ".";

  log_info("loading dataset " + cfg.data);
  const std::vector<cq::Subject> all = cq::load_dataset(cfg.data);
  std::vector<cq::Subject> train;
  if (folds_exclude >= 0) {
    std::vector<std::string> ids;
    for (const cq::Subject& s : all) ids.push_back(s.id);
    const cq::FoldPlan plan = cq::make_folds(ids, cfg.folds, cfg.seed);
    if (folds_exclude >= plan.k)
      throw cq::ValidationError("--folds-exclude " + std::to_string(folds_exclude) +
                                " outside 0.." + std::to_string(plan.k - 1));
    const auto& held = plan.folds[static_cast<std::size_t>(folds_exclude)];
    for (const cq::Subject& s : all)
      if (std::find(held.begin(), held.end(), s.id) == held.end()) train.push_back(s);
  } else {
    train = all;
  }

  cq::TrainConfig tc = model == "direct" ? cfg.direct : model == "unet" ? cfg.unet : cfg.masknet;
  tc.seed = cq::mix_seed(cfg.seed, "train/" + model);
  log_info("training " + model + " on " + std::to_string(train.size()) + " subjects, " +
           std::to_string(tc.epochs) + " epochs");
  cq::ModelWeights w;
  if (model == "direct")
    w = cq::train_direct(train, tc);
  else if (model == "unet")
    w = cq::train_unet(train, tc);
  else
    w = cq::train_masknet(train, tc);

  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw cq::IoError("cannot create " + cfg.out + ": " + ec.message());
  const std::string stem = (fs::path(cfg.out) / model).string();
  cq::save_weights(w, stem);
  std::cout << "trained " << model << " on " << train.size() << " subjects\n"
            << "final loss: " << w.final_loss << "\n"
            << "weights: " << stem << ".weights.json\n";
  return 0;
}

int cmd_eval(const CommonFlags& common, const std::string& data_flag,
             const std::string& stacking_flag, double spacing_flag, int folds_flag,
             CLI::Option* data_opt, CLI::Option* stacking_opt, CLI::Option* spacing_opt,
             CLI::Option* folds_opt, CLI::App* cmd) {
  RunConfig cfg = merge_config(common);
  if (data_opt->count() > 0) cfg.data = data_flag;
  if (stacking_opt->count() > 0) cfg.stacking = stacking_flag;
  if (spacing_opt->count() > 0) cfg.pixel_spacing_mm = spacing_flag;
  if (folds_opt->count() > 0) cfg.folds = folds_flag;
  if (int rc = require_value(cfg.data, "--data", cmd)) return rc;
  if (int rc = require_value(cfg.out, "--out", cmd)) return rc;

  log_info("loading dataset " + cfg.data);
  const std::vector<cq::Subject> subjects = cq::load_dataset(cfg.data);
  std::vector<std::string> ids;
  for (const cq::Subject& s : subjects) ids.push_back(s.id);
  const cq::FoldPlan plan = cq::make_folds(ids, cfg.folds, cfg.seed);

  cq::CvConfig cv;
  cv.direct_train = cfg.direct;
  cv.unet_train = cfg.unet;
  cv.masknet_train = cfg.masknet;
  cv.stacking = parse_stacking(cfg.stacking);
  cv.seed = cfg.seed;
  cv.pixel_spacing_mm = cfg.pixel_spacing_mm;
  cv.dataset_hash = manifest_hash(cfg.data);
  log_info("running " + std::to_string(cfg.folds) + "-fold cross-validation, stacking " +
           cfg.stacking);
  const cq::RunResult result = cq::run_cv(subjects, plan, cv);
  cq::emit_report(result, cfg.out);

  std::cout << "evaluated " << subjects.size() << " subjects (" << result.report.unit << ")\n";
  for (int g = 0; g < cq::kGroupCount; ++g) {
    std::cout << cq::kGroupNames[static_cast<std::size_t>(g)] << " MAE:";
    for (int m = 0; m < cq::kMethodCount; ++m) {
      const auto& st =
          result.report.per_group[static_cast<std::size_t>(m)][static_cast<std::size_t>(g)];
      std::cout << " " << cq::kMethodNames[static_cast<std::size_t>(m)] << "=" << st.mae;
    }
    std::cout << "\n";
  }
  std::cout << "phase accuracy (ensemble): "
            << result.report.phase_acc[static_cast<std::size_t>(2)] << "\n"
            << "report: " << (fs::path(cfg.out) / "report.csv").string() << "\n";
  return 0;
}

int cmd_viz(const CommonFlags& common, const std::string& kind, const std::string& data_flag,
            const std::string& weights, const std::string& masknet_stem, int subject, int frame,
            const std::string& layer, CLI::Option* data_opt, CLI::App* cmd) {
  RunConfig cfg = merge_config(common);
  if (data_opt->count() > 0) cfg.data = data_flag;
  if (int rc = require_value(cfg.data, "--data", cmd)) return rc;
  if (int rc = require_value(weights, "--weights", cmd)) return rc;
  if (cfg.out.empty()) cfg.out = ".";

  const std::vector<cq::Subject> subjects = cq::load_dataset(cfg.data);
  const cq::Subject& subj = subject_at(subjects, subject);
  const cq::Frame& fr = subj.frames.at(static_cast<std::size_t>(frame));

  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw cq::IoError("cannot create " + cfg.out + ": " + ec.message());

  if (kind == "featmaps") {
    const cq::ModelWeights w = cq::load_weights(weights);
    const std::string path =
        (fs::path(cfg.out) / ("featmaps_" + layer + ".pgm")).string();
    cq::export_feature_maps(w, fr.image, layer, path);
    std::cout << "wrote " << path << "\n";
    return 0;
  }

  if (int rc = require_value(masknet_stem, "--masknet", cmd)) return rc;
  const cq::ModelWeights unet = cq::load_weights(weights);
  const cq::ModelWeights masknet = cq::load_weights(masknet_stem);
  const auto [mask, indices] = cq::predict_seg(unet, masknet, fr.image);
  (void)indices;
  const std::string input_path = (fs::path(cfg.out) / "seg_input.pgm").string();
  const std::string truth_path = (fs::path(cfg.out) / "seg_truth.pgm").string();
  const std::string pred_path = (fs::path(cfg.out) / "seg_pred.pgm").string();
  cq::write_image_pgm(input_path, squeeze_image(fr.image));
  cq::write_label_pgm(truth_path, fr.labels);
  cq::write_label_pgm(pred_path, mask);
  std::cout << "wrote " << input_path << "\n"
            << "wrote " << truth_path << "\n"
            << "wrote " << pred_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Left-ventricle quantification workbench"};
  app.require_subcommand(1);

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic cine dataset");
  CommonFlags gen_common;
  add_common(gen, gen_common);
  int gen_subjects = 45;
  int gen_size = 64;
  CLI::Option* gen_subjects_opt =
      gen->add_option("--subjects", gen_subjects, "subjects to generate")
          ->check(CLI::Range(1, 100000));
  CLI::Option* gen_size_opt =
      gen->add_option("--size", gen_size, "image size in pixels")->check(CLI::Range(8, 1024));

  CLI::App* train = app.add_subcommand("train", "train one network on a dataset");
  CommonFlags train_common;
  add_common(train, train_common);
  std::string train_model;
  std::string train_data;
  int train_exclude = -1;
  train->add_option("--model", train_model, "network to train")
      ->required()
      ->check(CLI::IsMember({"direct", "unet", "masknet"}));
  CLI::Option* train_data_opt = train->add_option("--data", train_data, "dataset directory");
  train->add_option("--folds-exclude", train_exclude,
                    "hold out this fold of the 3-fold plan (default: train on everything)");

  CLI::App* eval = app.add_subcommand("eval", "run the cross-validation benchmark");
  CommonFlags eval_common;
  add_common(eval, eval_common);
  std::string eval_data;
  std::string eval_stacking;
  double eval_spacing = 0.0;
  int eval_folds = 3;
  CLI::Option* eval_data_opt = eval->add_option("--data", eval_data, "dataset directory");
  CLI::Option* eval_stacking_opt =
      eval->add_option("--stacking", eval_stacking, "2nd-level fit mode")
          ->check(CLI::IsMember({"out-of-fold", "in-sample"}));
  CLI::Option* eval_spacing_opt = eval->add_option(
      "--spacing", eval_spacing, "pixel spacing in mm (0 = report in pixels)");
  CLI::Option* eval_folds_opt =
      eval->add_option("--folds", eval_folds, "fold count")->check(CLI::Range(2, 1000));

  CLI::App* viz = app.add_subcommand("viz", "render diagnostic images");
  CommonFlags viz_common;
  add_common(viz, viz_common);
  std::string viz_kind;
  std::string viz_data;
  std::string viz_weights;
  std::string viz_masknet;
  std::string viz_layer = "conv1";
  int viz_subject = 0;
  int viz_frame = 0;
  viz->add_option("--kind", viz_kind, "featmaps or segtriptych")
      ->required()
      ->check(CLI::IsMember({"featmaps", "segtriptych"}));
  CLI::Option* viz_data_opt = viz->add_option("--data", viz_data, "dataset directory");
  viz->add_option("--weights", viz_weights,
                  "weights stem (direct net for featmaps, unet for segtriptych)");
  viz->add_option("--masknet", viz_masknet, "masknet weights stem (segtriptych)");
  viz->add_option("--subject", viz_subject, "subject index")->check(CLI::NonNegativeNumber);
  viz->add_option("--frame", viz_frame, "frame index")->check(CLI::Range(0, 19));
  viz->add_option("--layer", viz_layer, "conv block to render")
      ->check(CLI::IsMember({"conv1", "conv2", "conv3", "conv4"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const CommonFlags& common = gen->parsed()     ? gen_common
                              : train->parsed() ? train_common
                              : eval->parsed()  ? eval_common
                                                : viz_common;
  openblas_set_num_threads(common.threads);
  log_debug("threads: " + std::to_string(common.threads));

  try {
    if (gen->parsed())
      return cmd_gen(gen_common, gen_subjects, gen_size, gen_subjects_opt, gen_size_opt, gen);
    if (train->parsed())
      return cmd_train(train_common, train_model, train_data, train_exclude, train_data_opt,
                       train);
    if (eval->parsed())
      return cmd_eval(eval_common, eval_data, eval_stacking, eval_spacing, eval_folds,
                      eval_data_opt, eval_stacking_opt, eval_spacing_opt, eval_folds_opt, eval);
    return cmd_viz(viz_common, viz_kind, viz_data, viz_weights, viz_masknet, viz_subject,
                   viz_frame, viz_layer, viz_data_opt, viz);
  } catch (const cq::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
