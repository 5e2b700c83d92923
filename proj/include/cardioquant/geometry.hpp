#pragma once

#include <array>
#include <string>

#include "cardioquant/tensor.hpp"

namespace cq {

// Mask label values used throughout: 0 background, 1 myocardium, 2 cavity.
constexpr int kBackground = 0;
constexpr int kMyocardium = 1;
constexpr int kCavity = 2;

// The eleven quantification targets in their canonical order:
// [A1, A2, D1, D2, D3, RWT1..RWT6]. Areas in px^2, lengths in px.
struct IndexVector {
  static constexpr int kCount = 11;
  std::array<float, kCount> v{};

  float& operator[](int i) { return v[static_cast<std::size_t>(i)]; }
  float operator[](int i) const { return v[static_cast<std::size_t>(i)]; }

  float a1() const { return v[0]; }
  float a2() const { return v[1]; }
  float d(int i) const { return v[static_cast<std::size_t>(2 + i)]; }    // i in 0..2
  float rwt(int i) const { return v[static_cast<std::size_t>(5 + i)]; }  // i in 0..5
};

extern const std::array<std::string, IndexVector::kCount> kIndexNames;

// Measures all 11 indices from a label mask [H,W]. Areas are exact pixel
// counts. Radii come from 360 rays at 1 degree spacing out of the cavity
// centroid; the reference direction (0 degrees) is image "up" and angles grow
// counter-clockwise on screen. Diameters D1..D3 are opposite-ray endo radius
// sums at 0/60/120 degrees; RWT j averages (epi - endo) over the j-th 60
// degree sector starting at the reference axis.
IndexVector quantify_mask(const Tensor& labels);

// 2|P∩T| / (|P|+|T|) for the given class; 1.0 when both sets are empty.
double dice(const Tensor& pred, const Tensor& truth, int cls);

// Per-pixel argmax over the 3 channels (ties break toward the lowest class),
// then speckle cleanup: only the largest 4-connected component of the cavity
// and of the cavity+myocardium union survive, the rest becomes background.
Tensor mask_from_probs(const Tensor& probs);

}  // namespace cq
