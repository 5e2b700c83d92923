#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cardioquant/graph.hpp"
#include "cardioquant/rng.hpp"

using namespace cq;

namespace {

constexpr float kH = 1e-3f;

Tensor random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform_f(lo, hi);
  return t;
}

// Values spaced far enough apart that a +-h probe can never reorder a pooling
// window or cross the relu kink.
Tensor separated_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::vector<int> levels(t.numel());
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = static_cast<int>(i);
  rng.shuffle(levels);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    float v = (static_cast<float>(levels[i]) - 0.5f * static_cast<float>(t.numel())) * 0.07f +
              rng.uniform_f(-0.01f, 0.01f);
    if (std::fabs(v) < 0.05f) v = v < 0.0f ? v - 0.05f : v + 0.05f;
    t.data()[i] = v;
  }
  return t;
}

// Central-difference check of every parameter against the stored analytic
// gradients from one backward pass.
void fd_check_all(Graph& g, Graph::NodeId loss) {
  g.forward();
  g.backward(loss);
  std::map<std::string, std::vector<float>> analytic;
  for (const auto& name : g.parameter_names()) analytic[name] = g.param_grad(name).vec();

  for (const auto& name : g.parameter_names()) {
    Tensor& p = g.param(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const float save = p.data()[i];
      p.data()[i] = save + kH;
      g.forward();
      const double lp = g.value(loss).at(0);
      p.data()[i] = save - kH;
      g.forward();
      const double lm = g.value(loss).at(0);
      p.data()[i] = save;
      const double fd = (lp - lm) / (2.0 * static_cast<double>(kH));
      const double an = analytic[name][i];
      const double tol = 1e-2 * std::max(std::fabs(an), std::fabs(fd)) + 1e-3;
      if (std::fabs(an - fd) > tol) {
        CAPTURE(name);
        CAPTURE(i);
        CAPTURE(an);
        CAPTURE(fd);
        CHECK(std::fabs(an - fd) <= tol);
      }
    }
  }
}

}  // namespace

TEST_CASE("conv2d gradients agree with central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/conv"));
    Graph g;
    auto x = g.parameter("x", random_tensor({2, 2, 4, 4}, rng));
    auto w = g.parameter("w", random_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f));
    auto b = g.parameter("b", random_tensor({3}, rng));
    auto y = g.conv2d(x, w, b);
    auto t = g.input({2, 3, 4, 4});
    g.set_value(t, random_tensor({2, 3, 4, 4}, rng));
    auto loss = g.mse_loss(y, t);
    fd_check_all(g, loss);
  }
}

TEST_CASE("dense gradients agree with central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/dense"));
    Graph g;
    auto x = g.parameter("x", random_tensor({3, 5}, rng));
    auto w = g.parameter("w", random_tensor({5, 4}, rng));
    auto b = g.parameter("b", random_tensor({4}, rng));
    auto y = g.dense(x, w, b);
    auto t = g.input({3, 4});
    g.set_value(t, random_tensor({3, 4}, rng));
    auto loss = g.mse_loss(y, t);
    fd_check_all(g, loss);
  }
}

TEST_CASE("batch_norm train-mode gradients agree with central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/bn"));
    Graph g;
    auto x = g.parameter("x", random_tensor({3, 2, 2, 2}, rng, -2.0f, 2.0f));
    auto y = g.batch_norm(x, "bn");
    g.param("bn.gamma").at(0) = 1.3f;
    g.param("bn.beta").at(1) = -0.4f;
    auto t = g.input({3, 2, 2, 2});
    g.set_value(t, random_tensor({3, 2, 2, 2}, rng));
    auto loss = g.mse_loss(y, t);
    g.set_mode(Mode::Train);
    fd_check_all(g, loss);
  }
}

TEST_CASE("batch_norm infer-mode gradients agree with central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/bn-infer"));
    Graph g;
    auto x = g.parameter("x", random_tensor({2, 2, 2, 2}, rng, -2.0f, 2.0f));
    auto y = g.batch_norm(x, "bn");
    auto t = g.input({2, 2, 2, 2});
    g.set_value(t, random_tensor({2, 2, 2, 2}, rng));
    auto loss = g.mse_loss(y, t);
    g.buffer("bn.running_mean").at(0) = 0.2f;
    g.buffer("bn.running_var").at(1) = 2.5f;
    g.set_mode(Mode::Infer);
    fd_check_all(g, loss);
  }
}

TEST_CASE("relu gradients agree with central differences away from the kink") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/relu"));
    Graph g;
    auto x = g.parameter("x", separated_tensor({2, 8}, rng));
    auto y = g.relu(x);
    auto t = g.input({2, 8});
    g.set_value(t, random_tensor({2, 8}, rng));
    auto loss = g.mse_loss(y, t);
    fd_check_all(g, loss);
  }
}

TEST_CASE("sigmoid gradients agree with central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/sigmoid"));
    Graph g;
    auto x = g.parameter("x", random_tensor({2, 6}, rng, -2.0f, 2.0f));
    auto y = g.sigmoid(x);
    auto t = g.input({2, 6});
    g.set_value(t, random_tensor({2, 6}, rng));
    auto loss = g.mse_loss(y, t);
    fd_check_all(g, loss);
  }
}

TEST_CASE("softmax with cross entropy gradients agree with central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/softmax-ce"));
    Graph g;
    auto z = g.parameter("z", random_tensor({4, 5}, rng, -2.0f, 2.0f));
    auto p = g.softmax_channels(z);
    auto lab = g.input({4});
    Tensor labels({4});
    for (int i = 0; i < 4; ++i) labels.at(i) = static_cast<float>(rng.uniform_int(0, 4));
    g.set_value(lab, labels);
    auto loss = g.cross_entropy_loss(p, lab);
    fd_check_all(g, loss);
  }
}

TEST_CASE("dense-map softmax with cross entropy gradients agree with central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/softmax-ce-map"));
    Graph g;
    auto z = g.parameter("z", random_tensor({2, 3, 2, 2}, rng, -2.0f, 2.0f));
    auto p = g.softmax_channels(z);
    auto lab = g.input({2, 2, 2});
    Tensor labels({2, 2, 2});
    for (std::size_t i = 0; i < labels.numel(); ++i) {
      labels.data()[i] = static_cast<float>(rng.uniform_int(0, 2));
    }
    g.set_value(lab, labels);
    auto loss = g.cross_entropy_loss(p, lab);
    fd_check_all(g, loss);
  }
}

TEST_CASE("max_pool2 gradients agree with central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/pool"));
    Graph g;
    auto x = g.parameter("x", separated_tensor({2, 2, 4, 4}, rng));
    auto y = g.max_pool2(x);
    auto t = g.input({2, 2, 2, 2});
    g.set_value(t, random_tensor({2, 2, 2, 2}, rng));
    auto loss = g.mse_loss(y, t);
    fd_check_all(g, loss);
  }
}

TEST_CASE("upsample2_concat gradients agree with central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/upconcat"));
    Graph g;
    auto lo = g.parameter("lo", random_tensor({2, 2, 2, 2}, rng));
    auto sk = g.parameter("sk", random_tensor({2, 1, 4, 4}, rng));
    auto y = g.upsample2_concat(lo, sk);
    auto t = g.input({2, 3, 4, 4});
    g.set_value(t, random_tensor({2, 3, 4, 4}, rng));
    auto loss = g.mse_loss(y, t);
    fd_check_all(g, loss);
  }
}

TEST_CASE("mse gradients flow to both prediction and target") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(mix_seed(seed, "grad/mse"));
    Graph g;
    auto a = g.parameter("a", random_tensor({3, 4}, rng));
    auto b = g.parameter("b", random_tensor({3, 4}, rng));
    auto loss = g.mse_loss(a, b);
    fd_check_all(g, loss);
  }
}

TEST_CASE("stacked network gradients agree with central differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(mix_seed(seed, "grad/stack"));
    Graph g;
    auto x = g.parameter("x", separated_tensor({2, 1, 4, 4}, rng));
    auto w1 = g.parameter("w1", random_tensor({2, 1, 3, 3}, rng, -0.5f, 0.5f));
    auto b1 = g.parameter("b1", random_tensor({2}, rng, -0.2f, 0.2f));
    auto c1 = g.conv2d(x, w1, b1);
    auto n1 = g.batch_norm(c1, "bn1");
    auto r1 = g.relu(n1);
    auto p1 = g.max_pool2(r1);
    auto fl = g.flatten(p1);
    auto w2 = g.parameter("w2", random_tensor({8, 3}, rng, -0.5f, 0.5f));
    auto b2 = g.parameter("b2", random_tensor({3}, rng, -0.2f, 0.2f));
    auto d = g.dense(fl, w2, b2);
    auto s = g.sigmoid(d);
    auto t = g.input({2, 3});
    g.set_value(t, random_tensor({2, 3}, rng));
    auto loss = g.mse_loss(s, t);
    g.set_mode(Mode::Train);
    fd_check_all(g, loss);
  }
}
