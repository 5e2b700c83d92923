#include "cardioquant/geometry.hpp"

#include <cmath>
#include <vector>

#include "cardioquant/errors.hpp"

namespace cq {

const std::array<std::string, IndexVector::kCount> kIndexNames = {
    "A1", "A2", "D1", "D2", "D3", "RWT1", "RWT2", "RWT3", "RWT4", "RWT5", "RWT6"};

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kRayStep = 0.1;

int label_at(const Tensor& m, int y, int x) {
  return static_cast<int>(std::lround(m.at(y, x)));
}

// Largest 4-connected component of the pixels where keep(label) holds;
// returns a membership flag per pixel.
template <class Pred>
std::vector<char> largest_component(const Tensor& m, Pred keep) {
  const int H = m.dim(0), W = m.dim(1);
  std::vector<int> comp(static_cast<std::size_t>(H) * W, -1);
  std::vector<std::size_t> sizes;
  std::vector<int> stack;
  for (int start = 0; start < H * W; ++start) {
    if (comp[static_cast<std::size_t>(start)] >= 0) continue;
    if (!keep(label_at(m, start / W, start % W))) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    stack.push_back(start);
    comp[static_cast<std::size_t>(start)] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++sizes[static_cast<std::size_t>(id)];
      const int y = p / W, x = p % W;
      const int ny[] = {y - 1, y + 1, y, y};
      const int nx[] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= H || nx[k] < 0 || nx[k] >= W) continue;
        const int q = ny[k] * W + nx[k];
        if (comp[static_cast<std::size_t>(q)] >= 0) continue;
        if (!keep(label_at(m, ny[k], nx[k]))) continue;
        comp[static_cast<std::size_t>(q)] = id;
        stack.push_back(q);
      }
    }
  }
  int best = -1;
  std::size_t best_size = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] > best_size) {
      best_size = sizes[i];
      best = static_cast<int>(i);
    }
  }
  std::vector<char> out(static_cast<std::size_t>(H) * W, 0);
  if (best >= 0) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = comp[i] == best ? 1 : 0;
  }
  return out;
}

}  // namespace

IndexVector quantify_mask(const Tensor& labels) {
  if (labels.rank() != 2) {
    throw ShapeError("quantify_mask expects a [H,W] mask, got " + shape_str(labels.shape()));
  }
  const int H = labels.dim(0), W = labels.dim(1);

  std::size_t a1 = 0, a2 = 0;
  double sx = 0.0, sy = 0.0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int l = label_at(labels, y, x);
      if (l == kCavity) {
        ++a1;
        sx += x + 0.5;
        sy += y + 0.5;
      } else if (l == kMyocardium) {
        ++a2;
      }
    }
  }
  if (a1 == 0) throw InvalidMaskError("mask has no cavity (class 2) pixels");
  if (a2 == 0) throw InvalidMaskError("mask has no myocardium (class 1) pixels");

  const double cx = sx / static_cast<double>(a1);
  const double cy = sy / static_cast<double>(a1);

  // 0 degrees points to image "up"; the angle grows counter-clockwise as seen
  // on screen (y axis points down).
  std::array<double, 360> endo{};
  std::array<double, 6> wall{};
  const double tmax = std::hypot(static_cast<double>(H), static_cast<double>(W));
  for (int a = 0; a < 360; ++a) {
    const double th = static_cast<double>(a) * kPi / 180.0;
    const double dx = -std::sin(th);
    const double dy = -std::cos(th);
    double last2 = 0.0, last1 = 0.0;
    for (double t = 0.0; t <= tmax; t += kRayStep) {
      const int px = static_cast<int>(std::floor(cx + dx * t));
      const int py = static_cast<int>(std::floor(cy + dy * t));
      if (px < 0 || px >= W || py < 0 || py >= H) break;
      const int l = label_at(labels, py, px);
      if (l == kCavity) {
        last2 = t;
      } else if (l == kMyocardium) {
        last1 = t;
      }
    }
    endo[static_cast<std::size_t>(a)] = last2;
    const double w = last1 - last2;
    wall[static_cast<std::size_t>(a / 60)] += w > 0.0 ? w : 0.0;
  }

  IndexVector iv;
  iv[0] = static_cast<float>(a1);
  iv[1] = static_cast<float>(a2);
  for (int i = 0; i < 3; ++i) {
    iv[2 + i] = static_cast<float>(endo[static_cast<std::size_t>(60 * i)] +
                                   endo[static_cast<std::size_t>(60 * i + 180)]);
  }
  for (int j = 0; j < 6; ++j) {
    iv[5 + j] = static_cast<float>(wall[static_cast<std::size_t>(j)] / 60.0);
  }
  return iv;
}

double dice(const Tensor& pred, const Tensor& truth, int cls) {
  if (!pred.same_shape(truth)) {
    throw ShapeError("dice shape mismatch: " + shape_str(pred.shape()) + " vs " +
                     shape_str(truth.shape()));
  }
  std::size_t np = 0, nt = 0, both = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool p = static_cast<int>(std::lround(pred.data()[i])) == cls;
    const bool t = static_cast<int>(std::lround(truth.data()[i])) == cls;
    np += p;
    nt += t;
    both += p && t;
  }
  if (np + nt == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(np + nt);
}

Tensor mask_from_probs(const Tensor& probs) {
  if (probs.rank() != 3 || probs.dim(0) != 3) {
    throw ShapeError("mask_from_probs expects [3,H,W] probabilities, got " +
                     shape_str(probs.shape()));
  }
  const int H = probs.dim(1), W = probs.dim(2);
  Tensor mask({H, W});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int best = 0;
      float bv = probs.at(0, y, x);
      for (int c = 1; c < 3; ++c) {
        if (probs.at(c, y, x) > bv) {
          bv = probs.at(c, y, x);
          best = c;
        }
      }
      mask.at(y, x) = static_cast<float>(best);
    }
  }

  const auto cav = largest_component(mask, [](int l) { return l == kCavity; });
  const auto disk = largest_component(mask, [](int l) { return l != kBackground; });
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      const int l = label_at(mask, y, x);
      if (l == kCavity && !(cav[i] && disk[i])) mask.at(y, x) = kBackground;
      if (l == kMyocardium && !disk[i]) mask.at(y, x) = kBackground;
    }
  }
  return mask;
}

}  // namespace cq
