#pragma once

#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cardioquant/graph.hpp"
#include "cardioquant/rng.hpp"

namespace testutil {

struct FdReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// Central-difference check of every parameter against the stored analytic
// gradients from one backward pass, with the engine's tolerance
// |an - fd| <= 1e-2 * max(|an|, |fd|) + 1e-3.
//
// A whole network is only piecewise smooth: a +-h probe can flip a pooling
// argmax or cross a relu kink somewhere downstream, and on such a segment
// the difference quotient does not estimate the derivative at all. Those
// elements are detected by comparing the h and h/2 estimates (a kink makes
// them disagree by the slope jump, a smooth segment keeps them equal to
// O(h^2)) and skipped; a wrong analytic gradient is consistent across step
// sizes, survives the filter and still fails the comparison.
inline FdReport fd_check_smooth(cq::Graph& g, cq::Graph::NodeId loss) {
  constexpr float kH = 1e-3f;
  g.forward();
  g.backward(loss);
  std::map<std::string, std::vector<float>> analytic;
  for (const auto& name : g.parameter_names()) analytic[name] = g.param_grad(name).vec();

  FdReport report;
  const auto probe = [&](cq::Tensor& p, std::size_t i, float v) {
    p.data()[i] = v;
    g.forward();
    return static_cast<double>(g.value(loss).at(0));
  };
  for (const auto& name : g.parameter_names()) {
    cq::Tensor& p = g.param(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const float save = p.data()[i];
      const double fd1 =
          (probe(p, i, save + kH) - probe(p, i, save - kH)) / (2.0 * static_cast<double>(kH));
      const double fd2 = (probe(p, i, save + 0.5f * kH) - probe(p, i, save - 0.5f * kH)) /
                         static_cast<double>(kH);
      p.data()[i] = save;
      if (std::fabs(fd1 - fd2) > 5e-3 * std::max(std::fabs(fd1), std::fabs(fd2)) + 5e-4) {
        ++report.skipped;
        continue;
      }
      ++report.checked;
      const double an = analytic[name][i];
      const double tol = 1e-2 * std::max(std::fabs(an), std::fabs(fd2)) + 1e-3;
      if (std::fabs(an - fd2) > tol) {
        CAPTURE(name);
        CAPTURE(i);
        CAPTURE(an);
        CAPTURE(fd2);
        CHECK(std::fabs(an - fd2) <= tol);
      }
    }
  }
  return report;
}

}  // namespace testutil
