#pragma once

#include <array>
#include <string>
#include <vector>

#include "cardioquant/geometry.hpp"

namespace cq {

// One stacking training sample: both base predictions and the ground truth
// for the same frame.
struct StackedSample {
  IndexVector direct;
  IndexVector seg;
  IndexVector truth;
};

// Per-index affine combination of the two base predictions.
struct EnsembleCoeff {
  double w_direct = 0.0;
  double w_seg = 0.0;
  double bias = 0.0;
};

struct EnsembleWeights {
  std::array<EnsembleCoeff, IndexVector::kCount> coeffs{};
  // Mean squared training residual of the unclamped affine map, per index.
  std::array<double, IndexVector::kCount> train_mse{};
  int samples = 0;
};

// Ordinary least squares per index on the design [direct, seg, 1], solved by
// Cholesky on the normal equations; a rank-deficient design (collinear base
// predictions) falls back to ridge with lambda = 1e-6.
EnsembleWeights fit_ensemble(const std::vector<StackedSample>& pairs);

// Applies the per-index affine map and clamps at 0.
IndexVector predict_ensemble(const EnsembleWeights& w, const IndexVector& direct,
                             const IndexVector& seg);

// JSON document with the 11 triplets plus metadata.
void save_ensemble(const EnsembleWeights& w, const std::string& path);
EnsembleWeights load_ensemble(const std::string& path);

}  // namespace cq
