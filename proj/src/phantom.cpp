#include "cardioquant/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cardioquant/errors.hpp"
#include "cardioquant/pgm.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace cq {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kFormatVersion = 1;

constexpr float kCavityGray = 0.85f;
constexpr float kMyoGray = 0.45f;
constexpr float kBackgroundGray = 0.15f;

// Fraction of the endo contraction applied to the epi contour; the wall
// thickens during systole and the nesting invariant stays intact.
constexpr double kEpiContractionShare = 0.3;

struct SubjectShape {
  double cx, cy;
  double scale;
  double a2, phi2, a3, phi3;
};

double contraction_profile(const PhantomSpec& spec, int t) {
  if (t <= spec.systole_onset || t >= spec.systole_offset) return 0.0;
  const double u = static_cast<double>(t - spec.systole_onset) /
                   static_cast<double>(spec.systole_offset - spec.systole_onset);
  const double s = std::sin(kPi * u);
  return s * s;
}

double contour_shape(const SubjectShape& sh, double theta) {
  return 1.0 + sh.a2 * std::cos(2.0 * theta + sh.phi2) + sh.a3 * std::cos(3.0 * theta + sh.phi3);
}

Tensor rasterize_labels(const PhantomSpec& spec, const SubjectShape& sh, double endo_scale,
                        double epi_scale) {
  const int S = spec.image_size;
  Tensor labels({S, S});
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double ox = (x + 0.5) - sh.cx;
      const double oy = (y + 0.5) - sh.cy;
      const double r = std::hypot(ox, oy);
      // theta measured from image "up", counter-clockwise on screen, matching
      // the quantification module's ray convention.
      const double theta = std::atan2(-ox, -oy);
      const double shape = contour_shape(sh, theta);
      const double endo = spec.endo_radius * sh.scale * endo_scale * shape;
      const double epi = spec.epi_radius * sh.scale * epi_scale * shape;
      if (r <= endo) {
        labels.at(y, x) = kCavity;
      } else if (r <= epi) {
        labels.at(y, x) = kMyocardium;
      }
    }
  }
  return labels;
}

struct TextureField {
  struct Wave {
    double fx, fy, phase;
  };
  std::vector<Wave> waves;
  double amplitude;

  float at(int x, int y) const {
    if (waves.empty() || amplitude == 0.0) return 0.0f;
    double acc = 0.0;
    for (const Wave& w : waves) acc += std::sin(w.fx * x + w.fy * y + w.phase);
    return static_cast<float>(amplitude * acc / static_cast<double>(waves.size()));
  }
};

TextureField draw_texture(const PhantomSpec& spec, Rng& rng) {
  TextureField f;
  f.amplitude = spec.texture_amplitude;
  for (int k = 0; k < 3; ++k) {
    const double cycles = rng.uniform(1.0, 3.0);
    const double ang = rng.uniform(0.0, 2.0 * kPi);
    TextureField::Wave w;
    w.fx = 2.0 * kPi * cycles * std::cos(ang) / spec.image_size;
    w.fy = 2.0 * kPi * cycles * std::sin(ang) / spec.image_size;
    w.phase = rng.uniform(0.0, 2.0 * kPi);
    f.waves.push_back(w);
  }
  return f;
}

// Mid-range threshold on the area curve, then reduced to exactly one cyclic
// systolic block so the phase sequence always has exactly 2 transitions.
std::vector<int> phase_bits(const std::vector<std::size_t>& areas) {
  const int n = static_cast<int>(areas.size());
  const auto [mn_it, mx_it] = std::minmax_element(areas.begin(), areas.end());
  const double threshold = 0.5 * (static_cast<double>(*mn_it) + static_cast<double>(*mx_it));
  std::vector<int> bits(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    bits[static_cast<std::size_t>(i)] = static_cast<double>(areas[static_cast<std::size_t>(i)]) < threshold ? 1 : 0;
  }

  // Cyclic runs of ones; keep the longest, clear the rest.
  struct Run {
    int start, len;
  };
  std::vector<Run> runs;
  for (int i = 0; i < n; ++i) {
    const int prev = (i + n - 1) % n;
    if (bits[static_cast<std::size_t>(i)] == 1 && bits[static_cast<std::size_t>(prev)] == 0) {
      int len = 0;
      while (len < n && bits[static_cast<std::size_t>((i + len) % n)] == 1) ++len;
      runs.push_back({i, len});
    }
  }
  if (runs.empty()) {
    const int arg = static_cast<int>(std::distance(areas.begin(), mn_it));
    if (std::count(bits.begin(), bits.end(), 1) == n) {
      // all systolic: flip the largest-area frame
      bits[static_cast<std::size_t>(std::distance(areas.begin(), mx_it))] = 0;
    } else {
      bits.assign(static_cast<std::size_t>(n), 0);
      bits[static_cast<std::size_t>(arg)] = 1;
    }
    return bits;
  }
  const Run best = *std::max_element(runs.begin(), runs.end(), [](const Run& a, const Run& b) {
    return a.len != b.len ? a.len < b.len : a.start > b.start;
  });
  bits.assign(static_cast<std::size_t>(n), 0);
  for (int k = 0; k < best.len; ++k) bits[static_cast<std::size_t>((best.start + k) % n)] = 1;
  return bits;
}

void spec_to_json(const PhantomSpec& s, json& j) {
  j["image_size"] = s.image_size;
  j["center_jitter"] = s.center_jitter;
  j["endo_radius"] = s.endo_radius;
  j["epi_radius"] = s.epi_radius;
  j["perturb_amp2"] = s.perturb_amp2;
  j["perturb_amp3"] = s.perturb_amp3;
  j["contraction_depth"] = s.contraction_depth;
  j["systole_onset"] = s.systole_onset;
  j["systole_offset"] = s.systole_offset;
  j["noise_sigma"] = s.noise_sigma;
  j["texture_amplitude"] = s.texture_amplitude;
  j["radius_scale_jitter"] = s.radius_scale_jitter;
  j["seed"] = s.seed;
}

void write_truth_csv(const std::string& path, const Subject& subj) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "frame,A1,A2,D1,D2,D3,RWT1,RWT2,RWT3,RWT4,RWT5,RWT6,phase\n";
  char buf[64];
  for (int t = 0; t < kFramesPerCycle; ++t) {
    const Frame& f = subj.frames[static_cast<std::size_t>(t)];
    out << t;
    for (int i = 0; i < IndexVector::kCount; ++i) {
      std::snprintf(buf, sizeof(buf), ",%.9g", static_cast<double>(f.truth[i]));
      out << buf;
    }
    out << "," << f.phase << "\n";
  }
  if (!out) throw IoError(path + ": write failed");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t next = line.find(',', pos);
    if (next == std::string::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return fields;
}

void read_truth_csv(const std::string& path, Subject& subj) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "frame,A1,A2,D1,D2,D3,RWT1,RWT2,RWT3,RWT4,RWT5,RWT6,phase") {
    throw ParseError(path + ": unexpected header '" + line + "'");
  }
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.back() == '\r') line.pop_back();
    const auto fields = split_csv_line(line);
    if (fields.size() != 13) {
      throw ParseError(path + ": row " + std::to_string(rows) + " has " +
                       std::to_string(fields.size()) + " fields, expected 13");
    }
    const int t = std::atoi(fields[0].c_str());
    if (t < 0 || t >= kFramesPerCycle) {
      throw ParseError(path + ": frame index " + fields[0] + " out of range");
    }
    Frame& f = subj.frames[static_cast<std::size_t>(t)];
    for (int i = 0; i < IndexVector::kCount; ++i) {
      f.truth[i] = std::strtof(fields[static_cast<std::size_t>(1 + i)].c_str(), nullptr);
    }
    f.phase = std::atoi(fields[12].c_str());
    ++rows;
  }
  if (rows != kFramesPerCycle) {
    throw ParseError(path + ": expected " + std::to_string(kFramesPerCycle) + " rows, found " +
                     std::to_string(rows));
  }
}

}  // namespace

void validate(const PhantomSpec& s) {
  auto fail = [](const std::string& msg) { throw ValidationError("phantom spec: " + msg); };
  if (s.image_size < 32 || s.image_size > 256) fail("image_size must be in [32,256]");
  if (s.epi_radius <= s.endo_radius) fail("epi radius must exceed endo radius");
  if (s.endo_radius <= 0.0) fail("endo radius must be positive");
  if (s.perturb_amp2 < 0.0 || s.perturb_amp3 < 0.0 || s.perturb_amp2 + s.perturb_amp3 >= 0.5) {
    fail("perturbation amplitudes must be non-negative and sum below 0.5");
  }
  if (s.contraction_depth < 0.1 || s.contraction_depth > 0.5) {
    fail("contraction depth must be in [0.1,0.5]");
  }
  if (s.systole_onset < 0 || s.systole_offset > kFramesPerCycle - 1 ||
      s.systole_offset - s.systole_onset < 2) {
    fail("systole window must satisfy 0 <= onset, onset+2 <= offset <= 19");
  }
  if (s.center_jitter < 0.0) fail("center jitter must be non-negative");
  if (s.noise_sigma < 0.0 || s.noise_sigma > 0.2) fail("noise sigma must be in [0,0.2]");
  if (s.texture_amplitude < 0.0 || s.texture_amplitude > 0.2) {
    fail("texture amplitude must be in [0,0.2]");
  }
  if (s.radius_scale_jitter < 0.0 || s.radius_scale_jitter > 0.3) {
    fail("radius scale jitter must be in [0,0.3]");
  }

  const double shape_min = 1.0 - s.perturb_amp2 - s.perturb_amp3;
  const double shape_max = 1.0 + s.perturb_amp2 + s.perturb_amp3;
  const double endo_min = s.endo_radius * (1.0 - s.radius_scale_jitter) * shape_min *
                          (1.0 - s.contraction_depth);
  if (endo_min < 2.0) fail("contraction can shrink the cavity below 2 px");
  const double epi_max = s.epi_radius * (1.0 + s.radius_scale_jitter) * shape_max;
  if (s.center_jitter + epi_max + 1.0 > 0.5 * s.image_size) {
    fail("epi contour can leave the canvas; enlarge image_size or shrink radii/jitter");
  }
}

Subject generate_subject(const PhantomSpec& spec, Rng& rng, const std::string& id) {
  validate(spec);
  const int S = spec.image_size;

  SubjectShape sh;
  sh.cx = 0.5 * S + rng.uniform(-spec.center_jitter, spec.center_jitter);
  sh.cy = 0.5 * S + rng.uniform(-spec.center_jitter, spec.center_jitter);
  sh.scale = 1.0 + spec.radius_scale_jitter * rng.uniform(-1.0, 1.0);
  sh.a2 = spec.perturb_amp2 * rng.uniform(0.25, 1.0);
  sh.phi2 = rng.uniform(0.0, 2.0 * kPi);
  sh.a3 = spec.perturb_amp3 * rng.uniform(0.25, 1.0);
  sh.phi3 = rng.uniform(0.0, 2.0 * kPi);
  const TextureField texture = draw_texture(spec, rng);

  Subject subj;
  subj.id = id;
  subj.frames.resize(kFramesPerCycle);
  std::vector<std::size_t> areas(kFramesPerCycle, 0);

  for (int t = 0; t < kFramesPerCycle; ++t) {
    Frame& f = subj.frames[static_cast<std::size_t>(t)];
    const double p = contraction_profile(spec, t);
    const double endo_scale = 1.0 - spec.contraction_depth * p;
    const double epi_scale = 1.0 - kEpiContractionShare * spec.contraction_depth * p;
    f.labels = rasterize_labels(spec, sh, endo_scale, epi_scale);

    f.image = Tensor({1, S, S});
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        const int l = static_cast<int>(std::lround(f.labels.at(y, x)));
        if (l == kCavity) ++areas[static_cast<std::size_t>(t)];
        float v = l == kCavity ? kCavityGray : (l == kMyocardium ? kMyoGray : kBackgroundGray);
        v += texture.at(x, y);
        v += static_cast<float>(spec.noise_sigma * rng.normal());
        f.image.at(0, y, x) = std::clamp(v, 0.0f, 1.0f);
      }
    }
    quantize_to_bytes(f.image);
    f.truth = quantify_mask(f.labels);
  }

  const auto bits = phase_bits(areas);
  for (int t = 0; t < kFramesPerCycle; ++t) {
    subj.frames[static_cast<std::size_t>(t)].phase = bits[static_cast<std::size_t>(t)];
  }
  return subj;
}

std::vector<Subject> generate_dataset(const PhantomSpec& spec, int n, std::uint64_t seed,
                                      const std::string& out_dir) {
  if (n < 3) throw ValidationError("dataset needs at least 3 subjects, got " + std::to_string(n));
  validate(spec);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir + ": cannot create directory (" + ec.message() + ")");

  std::vector<Subject> subjects;
  subjects.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const std::string id = "subj_" + std::to_string(k);
    Rng rng(mix_seed(seed, "phantom/" + std::to_string(k)));
    Subject subj = generate_subject(spec, rng, id);

    const fs::path dir = fs::path(out_dir) / id;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string() + ": cannot create directory (" + ec.message() + ")");
    for (int t = 0; t < kFramesPerCycle; ++t) {
      const Frame& f = subj.frames[static_cast<std::size_t>(t)];
      write_image_pgm((dir / ("frame_" + std::to_string(t) + ".pgm")).string(), f.image);
      write_label_pgm((dir / ("label_" + std::to_string(t) + ".pgm")).string(), f.labels);
    }
    write_truth_csv((dir / "truth.csv").string(), subj);
    subjects.push_back(std::move(subj));
  }

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["seed"] = seed;
  manifest["subjects"] = n;
  spec_to_json(spec, manifest["spec"]);
  const std::string mpath = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream out(mpath);
  if (!out) throw IoError(mpath + ": cannot open for writing");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError(mpath + ": write failed");

  return subjects;
}

std::vector<Subject> load_dataset(const std::string& root) {
  const fs::path mpath = fs::path(root) / "manifest.json";
  std::ifstream in(mpath);
  if (!in) {
    if (!fs::exists(root)) throw IoError(root + ": dataset directory does not exist");
    throw InsufficientDataError(root + ": no manifest.json, directory is not a dataset");
  }
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ParseError(mpath.string() + ": " + e.what());
  }
  if (!manifest.contains("format_version") || manifest["format_version"] != kFormatVersion) {
    throw ParseError(mpath.string() + ": unsupported format_version");
  }
  const int n = manifest.value("subjects", 0);
  if (n <= 0) throw InsufficientDataError(root + ": dataset contains no subjects");

  std::vector<Subject> subjects;
  subjects.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const std::string id = "subj_" + std::to_string(k);
    const fs::path dir = fs::path(root) / id;
    if (!fs::exists(dir)) throw IoError(dir.string() + ": subject directory missing");
    Subject subj;
    subj.id = id;
    subj.frames.resize(kFramesPerCycle);
    for (int t = 0; t < kFramesPerCycle; ++t) {
      Frame& f = subj.frames[static_cast<std::size_t>(t)];
      Tensor img = read_image_pgm((dir / ("frame_" + std::to_string(t) + ".pgm")).string());
      f.image = Tensor({1, img.dim(0), img.dim(1)}, img.vec());
      f.labels = read_label_pgm((dir / ("label_" + std::to_string(t) + ".pgm")).string());
    }
    read_truth_csv((dir / "truth.csv").string(), subj);
    subjects.push_back(std::move(subj));
  }
  return subjects;
}

}  // namespace cq
