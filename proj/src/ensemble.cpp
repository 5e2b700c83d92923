#include "cardioquant/ensemble.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cardioquant/errors.hpp"

namespace cq {
namespace {

constexpr double kRidgeLambda = 1e-6;

// Cholesky solve of a symmetric 3x3 system. Returns false when a pivot
// collapses, which is the rank-deficiency signal for the caller.
bool solve_spd3(const double a[3][3], const double b[3], double x[3]) {
  double l[3][3] = {};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[i][j];
      for (int k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      if (i == j) {
        if (s <= 1e-12 * (1.0 + a[i][i])) return false;
        l[i][i] = std::sqrt(s);
      } else {
        l[i][j] = s / l[j][j];
      }
    }
  }
  double y[3];
  for (int i = 0; i < 3; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l[i][k] * y[k];
    y[i] = s / l[i][i];
  }
  for (int i = 2; i >= 0; --i) {
    double s = y[i];
    for (int k = i + 1; k < 3; ++k) s -= l[k][i] * x[k];
    x[i] = s / l[i][i];
  }
  return true;
}

}  // namespace

EnsembleWeights fit_ensemble(const std::vector<StackedSample>& pairs) {
  if (pairs.size() < 3)
    throw InsufficientDataError("ensemble fit needs at least 3 samples, got " +
                                std::to_string(pairs.size()));
  for (const StackedSample& p : pairs)
    for (int i = 0; i < IndexVector::kCount; ++i)
      if (!std::isfinite(p.direct[i]) || !std::isfinite(p.seg[i]) || !std::isfinite(p.truth[i]))
        throw ValidationError("non-finite value in ensemble training data at index " +
                              kIndexNames[static_cast<std::size_t>(i)]);

  EnsembleWeights w;
  w.samples = static_cast<int>(pairs.size());
  for (int i = 0; i < IndexVector::kCount; ++i) {
    double xtx[3][3] = {};
    double xty[3] = {};
    for (const StackedSample& p : pairs) {
      const double f[3] = {p.direct[i], p.seg[i], 1.0};
      const double y = p.truth[i];
      for (int r = 0; r < 3; ++r) {
        for (int c = r; c < 3; ++c) xtx[r][c] += f[r] * f[c];
        xty[r] += f[r] * y;
      }
    }
    for (int r = 1; r < 3; ++r)
      for (int c = 0; c < r; ++c) xtx[r][c] = xtx[c][r];

    double beta[3];
    if (!solve_spd3(xtx, xty, beta)) {
      for (int d = 0; d < 3; ++d) xtx[d][d] += kRidgeLambda;
      if (!solve_spd3(xtx, xty, beta))
        throw ValidationError("ensemble normal equations unsolvable even with ridge at index " +
                              kIndexNames[static_cast<std::size_t>(i)]);
    }
    w.coeffs[static_cast<std::size_t>(i)] = {beta[0], beta[1], beta[2]};

    double sq = 0.0;
    for (const StackedSample& p : pairs) {
      const double r = p.truth[i] - (beta[0] * p.direct[i] + beta[1] * p.seg[i] + beta[2]);
      sq += r * r;
    }
    w.train_mse[static_cast<std::size_t>(i)] = sq / static_cast<double>(pairs.size());
  }
  return w;
}

IndexVector predict_ensemble(const EnsembleWeights& w, const IndexVector& direct,
                             const IndexVector& seg) {
  IndexVector out;
  for (int i = 0; i < IndexVector::kCount; ++i) {
    if (!std::isfinite(direct[i]) || !std::isfinite(seg[i]))
      throw ValidationError("non-finite base prediction at index " +
                            kIndexNames[static_cast<std::size_t>(i)]);
    const EnsembleCoeff& c = w.coeffs[static_cast<std::size_t>(i)];
    const double v = c.w_direct * direct[i] + c.w_seg * seg[i] + c.bias;
    out[i] = static_cast<float>(v > 0.0 ? v : 0.0);
  }
  return out;
}

void save_ensemble(const EnsembleWeights& w, const std::string& path) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["samples"] = w.samples;
  nlohmann::json indices = nlohmann::json::array();
  for (int i = 0; i < IndexVector::kCount; ++i) {
    const EnsembleCoeff& c = w.coeffs[static_cast<std::size_t>(i)];
    indices.push_back({{"name", kIndexNames[static_cast<std::size_t>(i)]},
                       {"w_direct", c.w_direct},
                       {"w_seg", c.w_seg},
                       {"bias", c.bias},
                       {"train_mse", w.train_mse[static_cast<std::size_t>(i)]}});
  }
  doc["indices"] = std::move(indices);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("short write to " + path);
}

EnsembleWeights load_ensemble(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  EnsembleWeights w;
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != 1)
      throw FormatVersionError("ensemble format version " + std::to_string(version) +
                               " is not supported");
    w.samples = doc.at("samples").get<int>();
    const nlohmann::json& indices = doc.at("indices");
    constexpr std::size_t kCount = static_cast<std::size_t>(IndexVector::kCount);
    if (indices.size() != kCount)
      throw ParseError(path + " lists " + std::to_string(indices.size()) +
                       " indices, expected " + std::to_string(IndexVector::kCount));
    for (std::size_t i = 0; i < kCount; ++i) {
      const nlohmann::json& e = indices[i];
      if (e.at("name").get<std::string>() != kIndexNames[i])
        throw ParseError(path + ": index " + std::to_string(i) + " is named '" +
                         e.at("name").get<std::string>() + "', expected '" + kIndexNames[i] + "'");
      w.coeffs[i] = {e.at("w_direct").get<double>(), e.at("w_seg").get<double>(),
                     e.at("bias").get<double>()};
      w.train_mse[i] = e.at("train_mse").get<double>();
      if (!std::isfinite(w.coeffs[i].w_direct) || !std::isfinite(w.coeffs[i].w_seg) ||
          !std::isfinite(w.coeffs[i].bias) || !std::isfinite(w.train_mse[i]))
        throw ParseError(path + ": non-finite coefficient for " + kIndexNames[i]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return w;
}

}  // namespace cq
