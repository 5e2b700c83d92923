#include <doctest.h>

#include <cmath>
#include <vector>

#include "cardioquant/geometry.hpp"
#include "cardioquant/phantom.hpp"
#include "cardioquant/rng.hpp"
#include "mask_rotation.hpp"

using namespace cq;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent rasterizer: pixel-center inclusion against analytic contours.
// radius_fn(theta) gives endo/epi radii with theta measured from image up,
// counter-clockwise on screen.
template <class EndoFn, class EpiFn>
Tensor rasterize(int size, double cx, double cy, EndoFn endo, EpiFn epi) {
  Tensor m({size, size});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double ox = (x + 0.5) - cx;
      const double oy = (y + 0.5) - cy;
      const double r = std::hypot(ox, oy);
      const double theta = std::atan2(-ox, -oy);
      if (r <= endo(theta)) {
        m.at(y, x) = kCavity;
      } else if (r <= epi(theta)) {
        m.at(y, x) = kMyocardium;
      }
    }
  }
  return m;
}

Tensor circles_mask(int size, double cx, double cy, double r_endo, double r_epi) {
  return rasterize(
      size, cx, cy, [&](double) { return r_endo; }, [&](double) { return r_epi; });
}

std::size_t count_class(const Tensor& m, int cls) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.numel(); ++i) {
    if (static_cast<int>(std::lround(m.data()[i])) == cls) ++n;
  }
  return n;
}

// Test-side 4-connected component counter, independent of the library's
// cleanup implementation.
int component_count(const Tensor& m, int cls) {
  const int H = m.dim(0), W = m.dim(1);
  std::vector<char> seen(static_cast<std::size_t>(H) * W, 0);
  int comps = 0;
  std::vector<int> stack;
  for (int s = 0; s < H * W; ++s) {
    if (seen[static_cast<std::size_t>(s)]) continue;
    if (static_cast<int>(std::lround(m.data()[s])) != cls) continue;
    ++comps;
    stack.push_back(s);
    seen[static_cast<std::size_t>(s)] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / W, x = p % W;
      const int ny[] = {y - 1, y + 1, y, y};
      const int nx[] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= H || nx[k] < 0 || nx[k] >= W) continue;
        const int q = ny[k] * W + nx[k];
        if (seen[static_cast<std::size_t>(q)]) continue;
        if (static_cast<int>(std::lround(m.data()[q])) != cls) continue;
        seen[static_cast<std::size_t>(q)] = 1;
        stack.push_back(q);
      }
    }
  }
  return comps;
}

}  // namespace

TEST_CASE("concentric circles quantify to the analytic values") {
  const Tensor m = circles_mask(64, 32.0, 32.0, 10.0, 16.0);
  const IndexVector iv = quantify_mask(m);

  CHECK(iv.a1() == doctest::Approx(kPi * 100.0).epsilon(0.02));
  CHECK(static_cast<double>(iv.a1()) == static_cast<double>(count_class(m, kCavity)));
  CHECK(static_cast<double>(iv.a2()) == static_cast<double>(count_class(m, kMyocardium)));
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(iv.d(i) - 20.0) <= 1.0);
  for (int j = 0; j < 6; ++j) CHECK(std::fabs(iv.rwt(j) - 6.0) <= 0.5);
}

TEST_CASE("axis-aligned ellipse diameters match the analytic chords") {
  // Cavity semi-axes: 12 along the 0-degree (up) axis, 8 across; epi adds 4.
  auto ell = [](double a, double b) {
    return [a, b](double theta) {
      const double c = std::cos(theta), s = std::sin(theta);
      return a * b / std::sqrt(b * b * c * c + a * a * s * s);
    };
  };
  const Tensor m = rasterize(64, 32.0, 32.0, ell(12.0, 8.0), ell(16.0, 12.0));
  const IndexVector iv = quantify_mask(m);

  CHECK(std::fabs(iv.d(0) - 24.0) <= 1.0);
  // The 60/120 degree rays cut the pixel staircase obliquely, which costs up
  // to ~0.7 px per ray end, so these two get a wider budget than the
  // lattice-aligned axes.
  const double r60 = 12.0 * 8.0 / std::sqrt(64.0 * 0.25 + 144.0 * 0.75);
  CHECK(std::fabs(iv.d(1) - 2.0 * r60) <= 1.5);
  CHECK(std::fabs(iv.d(2) - 2.0 * r60) <= 1.5);

  // Rotate the ellipse a quarter turn: the short axis lands on the D1 rays.
  const Tensor q = rasterize(64, 32.0, 32.0,
                             [&](double theta) { return ell(12.0, 8.0)(theta + kPi / 2.0); },
                             [&](double theta) { return ell(16.0, 12.0)(theta + kPi / 2.0); });
  CHECK(std::fabs(quantify_mask(q).d(0) - 16.0) <= 1.0);
}

TEST_CASE("quantify_mask rejects masks with a missing class") {
  Tensor no_cavity({16, 16});
  no_cavity.at(8, 8) = kMyocardium;
  CHECK_THROWS_AS(quantify_mask(no_cavity), InvalidMaskError);

  Tensor no_myo({16, 16});
  no_myo.at(8, 8) = kCavity;
  CHECK_THROWS_AS(quantify_mask(no_myo), InvalidMaskError);
}

TEST_CASE("quantify_mask is exactly invariant to integer translations") {
  const Tensor base = circles_mask(64, 26.0, 24.0, 9.0, 14.0);
  const IndexVector a = quantify_mask(base);

  Tensor shifted({64, 64});
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const int sy = y - 7, sx = x - 5;
      if (sy >= 0 && sy < 64 && sx >= 0 && sx < 64) shifted.at(y, x) = base.at(sy, sx);
    }
  }
  const IndexVector b = quantify_mask(shifted);
  for (int i = 0; i < IndexVector::kCount; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("rotating a mask by 60 degrees permutes sectors and diameters") {
  // A mask feature at angle theta lands at theta+60 after rotation, so sector
  // j of the original becomes sector j+1 and the diameter axes shift by one:
  // D1' ~ D3, D2' ~ D1, D3' ~ D2.
  PhantomSpec spec;
  for (int k = 0; k < 5; ++k) {
    Rng rng(mix_seed(7, "rotcheck/" + std::to_string(k)));
    const Subject s = generate_subject(spec, rng, "s");
    const Tensor& m = s.frames[static_cast<std::size_t>(k % kFramesPerCycle)].labels;

    const IndexVector a = quantify_mask(m);
    const IndexVector b = quantify_mask(testutil::rotate_mask(m, 60.0));

    CAPTURE(k);
    for (int j = 0; j < 6; ++j) CHECK(std::fabs(b.rwt((j + 1) % 6) - a.rwt(j)) <= 1.0);
    CHECK(std::fabs(b.d(1) - a.d(0)) <= 1.0);
    CHECK(std::fabs(b.d(2) - a.d(1)) <= 1.0);
    CHECK(std::fabs(b.d(0) - a.d(2)) <= 1.0);
  }
}

TEST_CASE("dice on identical, disjoint, and half-overlapping masks") {
  Tensor a({2, 2}, {1, 1, 0, 0});
  Tensor b({2, 2}, {1, 1, 0, 0});
  CHECK(dice(a, b, 1) == 1.0);

  Tensor c({2, 2}, {0, 0, 1, 1});
  Tensor d({2, 2}, {1, 1, 0, 0});
  CHECK(dice(c, d, 1) == 0.0);

  Tensor p({2, 2}, {1, 0, 1, 0});
  Tensor t({2, 2}, {1, 1, 1, 1});
  CHECK(dice(p, t, 1) == doctest::Approx(2.0 / 3.0));

  CHECK(dice(p, t, 2) == 1.0);  // class 2 absent from both
  CHECK(dice(p, t, 1) == dice(t, p, 1));
  CHECK_THROWS_AS(dice(Tensor({2, 2}), Tensor({2, 3}), 1), ShapeError);
}

TEST_CASE("mask_from_probs takes the argmax with ties toward background") {
  Tensor probs({3, 1, 2});
  probs.at(0, 0, 0) = 0.1f;
  probs.at(1, 0, 0) = 0.2f;
  probs.at(2, 0, 0) = 0.7f;
  for (int c = 0; c < 3; ++c) probs.at(c, 0, 1) = 1.0f / 3.0f;
  const Tensor m = mask_from_probs(probs);
  CHECK(static_cast<int>(m.at(0, 0)) == kCavity);
  CHECK(static_cast<int>(m.at(0, 1)) == kBackground);
}

TEST_CASE("mask_from_probs cleanup removes speckles away from the main mask") {
  const Tensor clean = circles_mask(64, 32.0, 32.0, 10.0, 16.0);
  Tensor probs({3, 64, 64});
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      probs.at(static_cast<int>(std::lround(clean.at(y, x))), y, x) = 1.0f;
    }
  }
  // Isolated speckles far from the ring: stray cavity pixels and a stray
  // myocardium pixel in the background corner.
  auto set_onehot = [&](int y, int x, int cls) {
    for (int c = 0; c < 3; ++c) probs.at(c, y, x) = c == cls ? 1.0f : 0.0f;
  };
  set_onehot(2, 2, kCavity);
  set_onehot(2, 3, kCavity);
  set_onehot(60, 60, kMyocardium);
  set_onehot(5, 58, kCavity);

  const Tensor m = mask_from_probs(probs);
  CHECK(component_count(m, kCavity) == 1);
  CHECK(static_cast<int>(m.at(2, 2)) == kBackground);
  CHECK(static_cast<int>(m.at(2, 3)) == kBackground);
  CHECK(static_cast<int>(m.at(60, 60)) == kBackground);
  CHECK(static_cast<int>(m.at(5, 58)) == kBackground);
  for (std::size_t i = 0; i < m.numel(); ++i) CHECK(m.data()[i] == clean.data()[i]);
}

TEST_CASE("index vector accessors and names line up") {
  IndexVector iv;
  for (int i = 0; i < IndexVector::kCount; ++i) iv[i] = static_cast<float>(i);
  CHECK(iv.a1() == 0.0f);
  CHECK(iv.a2() == 1.0f);
  CHECK(iv.d(2) == 4.0f);
  CHECK(iv.rwt(0) == 5.0f);
  CHECK(iv.rwt(5) == 10.0f);
  CHECK(kIndexNames[0] == "A1");
  CHECK(kIndexNames[4] == "D3");
  CHECK(kIndexNames[10] == "RWT6");
}
