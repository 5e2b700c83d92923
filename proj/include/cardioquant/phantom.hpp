#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cardioquant/geometry.hpp"
#include "cardioquant/rng.hpp"
#include "cardioquant/tensor.hpp"

namespace cq {

constexpr int kFramesPerCycle = 20;

// Generator knobs for one synthetic subject population. Lengths are pixels,
// intensities live on the [0,1] gray scale.
struct PhantomSpec {
  int image_size = 64;
  double center_jitter = 3.0;
  double endo_radius = 10.0;
  double epi_radius = 16.0;
  // Amplitude ceilings (fraction of radius) for the two contour harmonics.
  double perturb_amp2 = 0.08;
  double perturb_amp3 = 0.05;
  double contraction_depth = 0.30;  // in [0.1, 0.5]
  int systole_onset = 6;
  int systole_offset = 13;
  double noise_sigma = 0.05;
  double texture_amplitude = 0.05;
  // Per-subject uniform scaling of both radii, giving the population a
  // size spread (and the regression targets real variance).
  double radius_scale_jitter = 0.10;
  std::uint64_t seed = 1;
};

// Throws ValidationError when the spec can violate the mask invariants
// (wall collapse, cavity below 2 px, contour leaving the canvas).
void validate(const PhantomSpec& spec);

struct Frame {
  Tensor image;   // [1,H,W], quantized to the 8-bit grid
  Tensor labels;  // [H,W], classes 0/1/2
  IndexVector truth;
  int phase = 0;  // 1 systolic, 0 diastolic
};

struct Subject {
  std::string id;
  std::vector<Frame> frames;  // exactly kFramesPerCycle
};

Subject generate_subject(const PhantomSpec& spec, Rng& rng, const std::string& id);

// Generates n subjects on independent RNG streams derived from seed and
// writes the dataset layout under out_dir (manifest.json plus one directory
// per subject with PGM frames and truth.csv).
std::vector<Subject> generate_dataset(const PhantomSpec& spec, int n, std::uint64_t seed,
                                      const std::string& out_dir);

std::vector<Subject> load_dataset(const std::string& root);

}  // namespace cq
