#include "cardioquant/graph.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>

namespace cq {

namespace {
constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.9f;
constexpr float kProbClamp = 1e-7f;
}  // namespace

Graph::NodeId Graph::add_node(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

void Graph::check_id(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
    throw StateError("unknown graph node id " + std::to_string(id));
  }
}

Graph::NodeId Graph::input(std::vector<int> shape) {
  Node n;
  n.op = Op::Input;
  n.val = Tensor(std::move(shape));
  return add_node(std::move(n));
}

Graph::NodeId Graph::parameter(const std::string& name, Tensor init) {
  if (params_.count(name)) throw StateError("duplicate parameter name: " + name);
  Node n;
  n.op = Op::Param;
  n.val = std::move(init);
  n.grad = Tensor(n.val.shape());
  n.needs_grad = true;
  NodeId id = add_node(std::move(n));
  params_.emplace(name, id);
  param_names_.push_back(name);
  return id;
}

Graph::NodeId Graph::conv2d(NodeId x, NodeId kernel, NodeId bias) {
  check_id(x);
  check_id(kernel);
  check_id(bias);
  const Tensor& xv = node(x).val;
  const Tensor& wv = node(kernel).val;
  const Tensor& bv = node(bias).val;
  if (xv.rank() != 4) throw ShapeError("conv2d input must be [N,C,H,W], got " + shape_str(xv.shape()));
  if (wv.rank() != 4 || wv.dim(2) != 3 || wv.dim(3) != 3) {
    throw ShapeError("conv2d kernel must be [K,C,3,3], got " + shape_str(wv.shape()));
  }
  if (wv.dim(1) != xv.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(xv.dim(1)) +
                     ", kernel expects " + std::to_string(wv.dim(1)));
  }
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(0)) {
    throw ShapeError("conv2d bias must be [K], got " + shape_str(bv.shape()));
  }
  Node n;
  n.op = Op::Conv2d;
  n.in = {x, kernel, bias};
  n.val = Tensor({xv.dim(0), wv.dim(0), xv.dim(2), xv.dim(3)});
  n.needs_grad = true;
  n.grad = Tensor(n.val.shape());
  return add_node(std::move(n));
}

Graph::NodeId Graph::dense(NodeId x, NodeId weight, NodeId bias) {
  check_id(x);
  check_id(weight);
  check_id(bias);
  const Tensor& xv = node(x).val;
  const Tensor& wv = node(weight).val;
  const Tensor& bv = node(bias).val;
  if (xv.rank() != 2) throw ShapeError("dense input must be [N,F], got " + shape_str(xv.shape()));
  if (wv.rank() != 2) throw ShapeError("dense weight must be [F,G], got " + shape_str(wv.shape()));
  if (xv.dim(1) != wv.dim(0)) {
    throw ShapeError("dense inner dimension mismatch: input " + shape_str(xv.shape()) +
                     " vs weight " + shape_str(wv.shape()));
  }
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) {
    throw ShapeError("dense bias must be [G], got " + shape_str(bv.shape()));
  }
  Node n;
  n.op = Op::Dense;
  n.in = {x, weight, bias};
  n.val = Tensor({xv.dim(0), wv.dim(1)});
  n.needs_grad = true;
  n.grad = Tensor(n.val.shape());
  return add_node(std::move(n));
}

Graph::NodeId Graph::batch_norm(NodeId x, const std::string& name) {
  check_id(x);
  // Copied, not referenced: the parameter() calls below can reallocate nodes_.
  const std::vector<int> xshape = node(x).val.shape();
  if (xshape.size() != 4) {
    throw ShapeError("batch_norm input must be [N,C,H,W], got " + shape_str(xshape));
  }
  const int c = xshape[1];
  NodeId gamma = parameter(name + ".gamma", Tensor::full({c}, 1.0f));
  NodeId beta = parameter(name + ".beta", Tensor::zeros({c}));
  for (const char* suffix : {".running_mean", ".running_var"}) {
    std::string key = name + suffix;
    if (buffers_.count(key)) throw StateError("duplicate batch_norm name: " + name);
    buffers_.emplace(key, std::strcmp(suffix, ".running_var") == 0 ? Tensor::full({c}, 1.0f)
                                                                   : Tensor::zeros({c}));
    buffer_names_.push_back(key);
  }
  Node n;
  n.op = Op::BatchNorm;
  n.in = {x, gamma, beta};
  n.val = Tensor(xshape);
  n.needs_grad = true;
  n.grad = Tensor(n.val.shape());
  n.bn_name = name;
  n.bn_mean.assign(static_cast<std::size_t>(c), 0.0f);
  n.bn_invstd.assign(static_cast<std::size_t>(c), 0.0f);
  return add_node(std::move(n));
}

Graph::NodeId Graph::relu(NodeId x) {
  check_id(x);
  Node n;
  n.op = Op::Relu;
  n.in = {x};
  n.val = Tensor(node(x).val.shape());
  n.needs_grad = node(x).needs_grad;
  if (n.needs_grad) n.grad = Tensor(n.val.shape());
  return add_node(std::move(n));
}

Graph::NodeId Graph::sigmoid(NodeId x) {
  check_id(x);
  Node n;
  n.op = Op::Sigmoid;
  n.in = {x};
  n.val = Tensor(node(x).val.shape());
  n.needs_grad = node(x).needs_grad;
  if (n.needs_grad) n.grad = Tensor(n.val.shape());
  return add_node(std::move(n));
}

Graph::NodeId Graph::softmax_channels(NodeId x) {
  check_id(x);
  const Tensor& xv = node(x).val;
  if (xv.rank() != 2 && xv.rank() != 4) {
    throw ShapeError("softmax_channels input must be [N,F] or [N,C,H,W]");
  }
  Node n;
  n.op = Op::SoftmaxChannels;
  n.in = {x};
  n.val = Tensor(xv.shape());
  n.needs_grad = node(x).needs_grad;
  if (n.needs_grad) n.grad = Tensor(n.val.shape());
  return add_node(std::move(n));
}

Graph::NodeId Graph::max_pool2(NodeId x) {
  check_id(x);
  const Tensor& xv = node(x).val;
  if (xv.rank() != 4) throw ShapeError("max_pool2 input must be [N,C,H,W]");
  if (xv.dim(2) % 2 != 0 || xv.dim(3) % 2 != 0) {
    throw ShapeError("max_pool2 requires even spatial extents, got " + shape_str(xv.shape()));
  }
  Node n;
  n.op = Op::MaxPool2;
  n.in = {x};
  n.val = Tensor({xv.dim(0), xv.dim(1), xv.dim(2) / 2, xv.dim(3) / 2});
  n.needs_grad = node(x).needs_grad;
  if (n.needs_grad) n.grad = Tensor(n.val.shape());
  n.argmax.assign(n.val.numel(), 0);
  return add_node(std::move(n));
}

Graph::NodeId Graph::upsample2_concat(NodeId low, NodeId skip) {
  check_id(low);
  check_id(skip);
  const Tensor& lv = node(low).val;
  const Tensor& sv = node(skip).val;
  if (lv.rank() != 4 || sv.rank() != 4) throw ShapeError("upsample2_concat inputs must be [N,C,H,W]");
  if (lv.dim(0) != sv.dim(0) || sv.dim(2) != 2 * lv.dim(2) || sv.dim(3) != 2 * lv.dim(3)) {
    throw ShapeError("upsample2_concat: skip " + shape_str(sv.shape()) +
                     " must be spatially double of low " + shape_str(lv.shape()));
  }
  Node n;
  n.op = Op::Upsample2Concat;
  n.in = {low, skip};
  n.val = Tensor({lv.dim(0), lv.dim(1) + sv.dim(1), sv.dim(2), sv.dim(3)});
  n.needs_grad = node(low).needs_grad || node(skip).needs_grad;
  if (n.needs_grad) n.grad = Tensor(n.val.shape());
  return add_node(std::move(n));
}

Graph::NodeId Graph::flatten(NodeId x) {
  check_id(x);
  const Tensor& xv = node(x).val;
  if (xv.rank() != 4) throw ShapeError("flatten input must be [N,C,H,W]");
  Node n;
  n.op = Op::Flatten;
  n.in = {x};
  n.val = Tensor({xv.dim(0), xv.dim(1) * xv.dim(2) * xv.dim(3)});
  n.needs_grad = node(x).needs_grad;
  if (n.needs_grad) n.grad = Tensor(n.val.shape());
  return add_node(std::move(n));
}

Graph::NodeId Graph::mse_loss(NodeId pred, NodeId target) {
  check_id(pred);
  check_id(target);
  if (!node(pred).val.same_shape(node(target).val)) {
    throw ShapeError("mse_loss shape mismatch: " + shape_str(node(pred).val.shape()) + " vs " +
                     shape_str(node(target).val.shape()));
  }
  Node n;
  n.op = Op::MseLoss;
  n.in = {pred, target};
  n.val = Tensor({1});
  n.needs_grad = node(pred).needs_grad || node(target).needs_grad;
  if (n.needs_grad) n.grad = Tensor({1});
  return add_node(std::move(n));
}

Graph::NodeId Graph::cross_entropy_loss(NodeId probs, NodeId labels) {
  check_id(probs);
  check_id(labels);
  const Tensor& pv = node(probs).val;
  const Tensor& lv = node(labels).val;
  bool ok = false;
  if (pv.rank() == 4 && lv.rank() == 3) {
    ok = pv.dim(0) == lv.dim(0) && pv.dim(2) == lv.dim(1) && pv.dim(3) == lv.dim(2);
  } else if (pv.rank() == 2 && lv.rank() == 1) {
    ok = pv.dim(0) == lv.dim(0);
  }
  if (!ok) {
    throw ShapeError("cross_entropy_loss: probs " + shape_str(pv.shape()) +
                     " incompatible with labels " + shape_str(lv.shape()));
  }
  Node n;
  n.op = Op::CrossEntropyLoss;
  n.in = {probs, labels};
  n.val = Tensor({1});
  n.needs_grad = node(probs).needs_grad;
  if (n.needs_grad) n.grad = Tensor({1});
  return add_node(std::move(n));
}

Graph::NodeId Graph::sum_all(NodeId x) {
  check_id(x);
  Node n;
  n.op = Op::SumAll;
  n.in = {x};
  n.val = Tensor({1});
  n.needs_grad = node(x).needs_grad;
  if (n.needs_grad) n.grad = Tensor({1});
  return add_node(std::move(n));
}

void Graph::set_value(NodeId id, const Tensor& v) {
  check_id(id);
  Node& n = node(id);
  if (n.op != Op::Input) throw StateError("set_value is only valid on input nodes");
  if (!n.val.same_shape(v)) {
    throw ShapeError("set_value shape mismatch: node expects " + shape_str(n.val.shape()) +
                     ", got " + shape_str(v.shape()));
  }
  n.val = v;
}

const Tensor& Graph::value(NodeId id) const {
  check_id(id);
  return node(id).val;
}

const Tensor& Graph::grad(NodeId id) const {
  check_id(id);
  return node(id).grad;
}

Tensor& Graph::mutable_grad(NodeId id) {
  check_id(id);
  return node(id).grad;
}

const std::vector<int>& Graph::pool_argmax(NodeId id) const {
  check_id(id);
  if (node(id).op != Op::MaxPool2) throw StateError("node is not a max_pool2");
  return node(id).argmax;
}

Graph::NodeId Graph::param_node(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw StateError("unknown parameter: " + name);
  return it->second;
}

Tensor& Graph::param(const std::string& name) { return node(param_node(name)).val; }
const Tensor& Graph::param(const std::string& name) const { return node(param_node(name)).val; }
const Tensor& Graph::param_grad(const std::string& name) const { return node(param_node(name)).grad; }
Tensor& Graph::mutable_param_grad(const std::string& name) { return node(param_node(name)).grad; }

Tensor& Graph::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw StateError("unknown buffer: " + name);
  return it->second;
}

const Tensor& Graph::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw StateError("unknown buffer: " + name);
  return it->second;
}

void Graph::forward() {
  for (Node& n : nodes_) forward_node(n);
  forward_ran_ = true;
}

void Graph::backward(NodeId loss) {
  check_id(loss);
  if (!forward_ran_) throw StateError("backward called before forward");
  Node& ln = node(loss);
  if (ln.val.numel() != 1) throw StateError("backward requires a scalar loss node");
  if (!ln.needs_grad) throw StateError("loss does not depend on any parameter");
  for (Node& n : nodes_) {
    if (n.needs_grad) n.grad.fill(0.0f);
  }
  ln.grad.at(0) = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->needs_grad) backward_node(*it);
  }
}

void Graph::forward_node(Node& n) {
  switch (n.op) {
    case Op::Input:
    case Op::Param:
      return;
    case Op::Conv2d:
      conv_forward(n);
      return;
    case Op::Dense:
      dense_forward(n);
      return;
    case Op::BatchNorm:
      bn_forward(n);
      return;
    case Op::Relu: {
      const float* x = node(n.in[0]).val.data();
      float* y = n.val.data();
      const std::size_t m = n.val.numel();
      for (std::size_t i = 0; i < m; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
      return;
    }
    case Op::Sigmoid: {
      const float* x = node(n.in[0]).val.data();
      float* y = n.val.data();
      const std::size_t m = n.val.numel();
      for (std::size_t i = 0; i < m; ++i) y[i] = 1.0f / (1.0f + std::exp(-x[i]));
      return;
    }
    case Op::SoftmaxChannels:
      softmax_forward(n);
      return;
    case Op::MaxPool2: {
      const Tensor& x = node(n.in[0]).val;
      const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const float* xd = x.data();
      float* y = n.val.data();
      int* am = n.argmax.data();
      std::size_t o = 0;
      for (int b = 0; b < N; ++b) {
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (static_cast<std::size_t>(b) * C + c) * H * W;
          for (int i = 0; i < H; i += 2) {
            for (int j = 0; j < W; j += 2) {
              std::size_t i00 = base + static_cast<std::size_t>(i) * W + j;
              std::size_t best = i00;
              float bv = xd[i00];
              if (xd[i00 + 1] > bv) { bv = xd[i00 + 1]; best = i00 + 1; }
              if (xd[i00 + W] > bv) { bv = xd[i00 + W]; best = i00 + W; }
              if (xd[i00 + W + 1] > bv) { bv = xd[i00 + W + 1]; best = i00 + W + 1; }
              y[o] = bv;
              am[o] = static_cast<int>(best);
              ++o;
            }
          }
        }
      }
      return;
    }
    case Op::Upsample2Concat: {
      const Tensor& lo = node(n.in[0]).val;
      const Tensor& sk = node(n.in[1]).val;
      const int N = lo.dim(0), C = lo.dim(1), H = lo.dim(2), W = lo.dim(3);
      const int C2 = sk.dim(1);
      for (int b = 0; b < N; ++b) {
        for (int c = 0; c < C; ++c) {
          for (int y = 0; y < 2 * H; ++y) {
            const float* src = &lo.at(b, c, y / 2, 0);
            float* dst = &n.val.at(b, c, y, 0);
            for (int x = 0; x < W; ++x) {
              dst[2 * x] = src[x];
              dst[2 * x + 1] = src[x];
            }
          }
        }
        for (int c = 0; c < C2; ++c) {
          std::memcpy(&n.val.at(b, C + c, 0, 0), &sk.at(b, c, 0, 0),
                      sizeof(float) * static_cast<std::size_t>(4 * H * W));
        }
      }
      return;
    }
    case Op::Flatten:
      std::memcpy(n.val.data(), node(n.in[0]).val.data(), sizeof(float) * n.val.numel());
      return;
    case Op::MseLoss: {
      const Tensor& p = node(n.in[0]).val;
      const Tensor& t = node(n.in[1]).val;
      const std::size_t m = p.numel();
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = static_cast<double>(p.at(static_cast<int>(i))) - t.at(static_cast<int>(i));
        acc += d * d;
      }
      n.val.at(0) = static_cast<float>(acc / static_cast<double>(m));
      return;
    }
    case Op::CrossEntropyLoss: {
      const Tensor& p = node(n.in[0]).val;
      const Tensor& l = node(n.in[1]).val;
      double acc = 0.0;
      if (p.rank() == 4) {
        const int N = p.dim(0), C = p.dim(1), H = p.dim(2), W = p.dim(3);
        for (int b = 0; b < N; ++b) {
          for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
              const int cls = static_cast<int>(std::lround(l.at(b, y, x)));
              if (cls < 0 || cls >= C) {
                throw ValidationError("cross_entropy label " + std::to_string(cls) +
                                      " out of range [0," + std::to_string(C - 1) + "]");
              }
              acc += std::log(std::max(p.at(b, cls, y, x), kProbClamp));
            }
          }
        }
        n.val.at(0) = static_cast<float>(-acc / static_cast<double>(static_cast<std::size_t>(N) * H * W));
      } else {
        const int N = p.dim(0), C = p.dim(1);
        for (int b = 0; b < N; ++b) {
          const int cls = static_cast<int>(std::lround(l.at(b)));
          if (cls < 0 || cls >= C) {
            throw ValidationError("cross_entropy label " + std::to_string(cls) + " out of range");
          }
          acc += std::log(std::max(p.at(b, cls), kProbClamp));
        }
        n.val.at(0) = static_cast<float>(-acc / static_cast<double>(N));
      }
      return;
    }
    case Op::SumAll: {
      const Tensor& x = node(n.in[0]).val;
      double acc = 0.0;
      for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
      n.val.at(0) = static_cast<float>(acc);
      return;
    }
  }
}

void Graph::backward_node(Node& n) {
  switch (n.op) {
    case Op::Input:
    case Op::Param:
      return;
    case Op::Conv2d:
      conv_backward(n);
      return;
    case Op::Dense:
      dense_backward(n);
      return;
    case Op::BatchNorm:
      bn_backward(n);
      return;
    case Op::Relu: {
      Node& xn = node(n.in[0]);
      if (!xn.needs_grad) return;
      const float* x = xn.val.data();
      const float* gy = n.grad.data();
      float* gx = xn.grad.data();
      for (std::size_t i = 0; i < n.val.numel(); ++i) {
        if (x[i] > 0.0f) gx[i] += gy[i];
      }
      return;
    }
    case Op::Sigmoid: {
      Node& xn = node(n.in[0]);
      if (!xn.needs_grad) return;
      const float* y = n.val.data();
      const float* gy = n.grad.data();
      float* gx = xn.grad.data();
      for (std::size_t i = 0; i < n.val.numel(); ++i) gx[i] += gy[i] * y[i] * (1.0f - y[i]);
      return;
    }
    case Op::SoftmaxChannels:
      softmax_backward(n);
      return;
    case Op::MaxPool2: {
      Node& xn = node(n.in[0]);
      if (!xn.needs_grad) return;
      const float* gy = n.grad.data();
      float* gx = xn.grad.data();
      const int* am = n.argmax.data();
      for (std::size_t i = 0; i < n.val.numel(); ++i) gx[am[i]] += gy[i];
      return;
    }
    case Op::Upsample2Concat: {
      Node& lo = node(n.in[0]);
      Node& sk = node(n.in[1]);
      const int N = lo.val.dim(0), C = lo.val.dim(1), H = lo.val.dim(2), W = lo.val.dim(3);
      const int C2 = sk.val.dim(1);
      if (lo.needs_grad) {
        for (int b = 0; b < N; ++b) {
          for (int c = 0; c < C; ++c) {
            for (int y = 0; y < 2 * H; ++y) {
              const float* g = &n.grad.at(b, c, y, 0);
              float* dst = &lo.grad.at(b, c, y / 2, 0);
              for (int x = 0; x < W; ++x) dst[x] += g[2 * x] + g[2 * x + 1];
            }
          }
        }
      }
      if (sk.needs_grad) {
        for (int b = 0; b < N; ++b) {
          for (int c = 0; c < C2; ++c) {
            const float* g = &n.grad.at(b, C + c, 0, 0);
            float* dst = &sk.grad.at(b, c, 0, 0);
            for (int i = 0; i < 4 * H * W; ++i) dst[i] += g[i];
          }
        }
      }
      return;
    }
    case Op::Flatten: {
      Node& xn = node(n.in[0]);
      if (!xn.needs_grad) return;
      const float* gy = n.grad.data();
      float* gx = xn.grad.data();
      for (std::size_t i = 0; i < n.val.numel(); ++i) gx[i] += gy[i];
      return;
    }
    case Op::MseLoss: {
      Node& pn = node(n.in[0]);
      Node& tn = node(n.in[1]);
      const float g = n.grad.at(0);
      const std::size_t m = pn.val.numel();
      const float scale = 2.0f * g / static_cast<float>(m);
      const float* p = pn.val.data();
      const float* t = tn.val.data();
      if (pn.needs_grad) {
        float* gp = pn.grad.data();
        for (std::size_t i = 0; i < m; ++i) gp[i] += scale * (p[i] - t[i]);
      }
      if (tn.needs_grad) {
        float* gt = tn.grad.data();
        for (std::size_t i = 0; i < m; ++i) gt[i] -= scale * (p[i] - t[i]);
      }
      return;
    }
    case Op::CrossEntropyLoss: {
      Node& pn = node(n.in[0]);
      if (!pn.needs_grad) return;
      const Tensor& p = pn.val;
      const Tensor& l = node(n.in[1]).val;
      const float g = n.grad.at(0);
      if (p.rank() == 4) {
        const int N = p.dim(0), H = p.dim(2), W = p.dim(3);
        const float scale = g / static_cast<float>(static_cast<std::size_t>(N) * H * W);
        for (int b = 0; b < N; ++b) {
          for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
              const int cls = static_cast<int>(std::lround(l.at(b, y, x)));
              const float pv = p.at(b, cls, y, x);
              if (pv > kProbClamp) pn.grad.at(b, cls, y, x) -= scale / pv;
            }
          }
        }
      } else {
        const int N = p.dim(0);
        const float scale = g / static_cast<float>(N);
        for (int b = 0; b < N; ++b) {
          const int cls = static_cast<int>(std::lround(l.at(b)));
          const float pv = p.at(b, cls);
          if (pv > kProbClamp) pn.grad.at(b, cls) -= scale / pv;
        }
      }
      return;
    }
    case Op::SumAll: {
      Node& xn = node(n.in[0]);
      if (!xn.needs_grad) return;
      const float g = n.grad.at(0);
      float* gx = xn.grad.data();
      for (std::size_t i = 0; i < xn.val.numel(); ++i) gx[i] += g;
      return;
    }
  }
}

// col rows are (c*9 + ky*3 + kx), columns are (n*H*W + y*W + x); zero padding
// appears as zeroed border entries.
void Graph::im2col(const Tensor& x, std::vector<float>& col) const {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const std::size_t NHW = static_cast<std::size_t>(N) * HW;
  col.resize(static_cast<std::size_t>(C) * 9 * NHW);
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        float* rowbase = col.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * NHW;
        const int dy = ky - 1, dx = kx - 1;
        for (int b = 0; b < N; ++b) {
          const float* xc = x.data() + (static_cast<std::size_t>(b) * C + c) * HW;
          float* dst = rowbase + static_cast<std::size_t>(b) * HW;
          for (int y = 0; y < H; ++y) {
            float* drow = dst + static_cast<std::size_t>(y) * W;
            const int sy = y + dy;
            if (sy < 0 || sy >= H) {
              std::memset(drow, 0, sizeof(float) * static_cast<std::size_t>(W));
              continue;
            }
            const float* srow = xc + static_cast<std::size_t>(sy) * W;
            if (dx == 0) {
              std::memcpy(drow, srow, sizeof(float) * static_cast<std::size_t>(W));
            } else if (dx < 0) {
              drow[0] = 0.0f;
              std::memcpy(drow + 1, srow, sizeof(float) * static_cast<std::size_t>(W - 1));
            } else {
              std::memcpy(drow, srow + 1, sizeof(float) * static_cast<std::size_t>(W - 1));
              drow[W - 1] = 0.0f;
            }
          }
        }
      }
    }
  }
}

void Graph::col2im_add(const std::vector<float>& col, Tensor& gx) const {
  const int N = gx.dim(0), C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const std::size_t NHW = static_cast<std::size_t>(N) * HW;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const float* rowbase = col.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * NHW;
        const int dy = ky - 1, dx = kx - 1;
        for (int b = 0; b < N; ++b) {
          float* xc = gx.data() + (static_cast<std::size_t>(b) * C + c) * HW;
          const float* src = rowbase + static_cast<std::size_t>(b) * HW;
          for (int y = 0; y < H; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= H) continue;
            const float* srow = src + static_cast<std::size_t>(y) * W;
            float* drow = xc + static_cast<std::size_t>(sy) * W;
            if (dx == 0) {
              for (int x = 0; x < W; ++x) drow[x] += srow[x];
            } else if (dx < 0) {
              for (int x = 1; x < W; ++x) drow[x - 1] += srow[x];
            } else {
              for (int x = 0; x < W - 1; ++x) drow[x + 1] += srow[x];
            }
          }
        }
      }
    }
  }
}

void Graph::conv_forward(Node& n) {
  const Tensor& x = node(n.in[0]).val;
  const Tensor& w = node(n.in[1]).val;
  const Tensor& b = node(n.in[2]).val;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int K = w.dim(0);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const std::size_t NHW = static_cast<std::size_t>(N) * HW;
  im2col(x, col_);
  pack_.resize(static_cast<std::size_t>(K) * NHW);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, K, static_cast<int>(NHW), C * 9, 1.0f,
              w.data(), C * 9, col_.data(), static_cast<int>(NHW), 0.0f, pack_.data(),
              static_cast<int>(NHW));
  for (int bi = 0; bi < N; ++bi) {
    for (int k = 0; k < K; ++k) {
      const float* src = pack_.data() + static_cast<std::size_t>(k) * NHW + static_cast<std::size_t>(bi) * HW;
      float* dst = &n.val.at(bi, k, 0, 0);
      const float bk = b.at(k);
      for (std::size_t p = 0; p < HW; ++p) dst[p] = src[p] + bk;
    }
  }
}

void Graph::conv_backward(Node& n) {
  Node& xn = node(n.in[0]);
  Node& wn = node(n.in[1]);
  Node& bn = node(n.in[2]);
  const Tensor& x = xn.val;
  const Tensor& w = wn.val;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int K = w.dim(0);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const std::size_t NHW = static_cast<std::size_t>(N) * HW;

  packg_.resize(static_cast<std::size_t>(K) * NHW);
  for (int bi = 0; bi < N; ++bi) {
    for (int k = 0; k < K; ++k) {
      std::memcpy(packg_.data() + static_cast<std::size_t>(k) * NHW + static_cast<std::size_t>(bi) * HW,
                  &n.grad.at(bi, k, 0, 0), sizeof(float) * HW);
    }
  }
  if (bn.needs_grad) {
    for (int k = 0; k < K; ++k) {
      const float* row = packg_.data() + static_cast<std::size_t>(k) * NHW;
      double acc = 0.0;
      for (std::size_t p = 0; p < NHW; ++p) acc += row[p];
      bn.grad.at(k) += static_cast<float>(acc);
    }
  }
  if (wn.needs_grad) {
    im2col(x, col_);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, K, C * 9, static_cast<int>(NHW), 1.0f,
                packg_.data(), static_cast<int>(NHW), col_.data(), static_cast<int>(NHW), 1.0f,
                wn.grad.data(), C * 9);
  }
  if (xn.needs_grad) {
    colg_.resize(static_cast<std::size_t>(C) * 9 * NHW);
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, C * 9, static_cast<int>(NHW), K, 1.0f,
                w.data(), C * 9, packg_.data(), static_cast<int>(NHW), 0.0f, colg_.data(),
                static_cast<int>(NHW));
    col2im_add(colg_, xn.grad);
  }
}

void Graph::dense_forward(Node& n) {
  const Tensor& x = node(n.in[0]).val;
  const Tensor& w = node(n.in[1]).val;
  const Tensor& b = node(n.in[2]).val;
  const int N = x.dim(0), F = x.dim(1), G = w.dim(1);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, N, G, F, 1.0f, x.data(), F, w.data(), G,
              0.0f, n.val.data(), G);
  for (int i = 0; i < N; ++i) {
    float* row = &n.val.at(i, 0);
    for (int j = 0; j < G; ++j) row[j] += b.at(j);
  }
}

void Graph::dense_backward(Node& n) {
  Node& xn = node(n.in[0]);
  Node& wn = node(n.in[1]);
  Node& bn = node(n.in[2]);
  const int N = xn.val.dim(0), F = xn.val.dim(1), G = wn.val.dim(1);
  if (bn.needs_grad) {
    for (int j = 0; j < G; ++j) {
      double acc = 0.0;
      for (int i = 0; i < N; ++i) acc += n.grad.at(i, j);
      bn.grad.at(j) += static_cast<float>(acc);
    }
  }
  if (wn.needs_grad) {
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, F, G, N, 1.0f, xn.val.data(), F,
                n.grad.data(), G, 1.0f, wn.grad.data(), G);
  }
  if (xn.needs_grad) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, N, F, G, 1.0f, n.grad.data(), G,
                wn.val.data(), G, 1.0f, xn.grad.data(), F);
  }
}

void Graph::bn_forward(Node& n) {
  const Tensor& x = node(n.in[0]).val;
  const Tensor& gamma = node(n.in[1]).val;
  const Tensor& beta = node(n.in[2]).val;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const std::size_t M = static_cast<std::size_t>(N) * HW;
  Tensor& rmean = buffer(n.bn_name + ".running_mean");
  Tensor& rvar = buffer(n.bn_name + ".running_var");

  if (mode_ == Mode::Train && M < 2) {
    throw DegenerateBatchError("batch_norm '" + n.bn_name +
                               "' needs at least 2 samples per channel in train mode");
  }
  for (int c = 0; c < C; ++c) {
    float mean, invstd;
    if (mode_ == Mode::Train) {
      double sum = 0.0;
      for (int b = 0; b < N; ++b) {
        const float* p = &x.at(b, c, 0, 0);
        for (std::size_t i = 0; i < HW; ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(M);
      double ss = 0.0;
      for (int b = 0; b < N; ++b) {
        const float* p = &x.at(b, c, 0, 0);
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(M);  // population variance
      mean = static_cast<float>(mu);
      invstd = static_cast<float>(1.0 / std::sqrt(var + kBnEps));
      rmean.at(c) = kBnMomentum * rmean.at(c) + (1.0f - kBnMomentum) * mean;
      rvar.at(c) = kBnMomentum * rvar.at(c) + (1.0f - kBnMomentum) * static_cast<float>(var);
    } else {
      mean = rmean.at(c);
      invstd = 1.0f / std::sqrt(rvar.at(c) + kBnEps);
    }
    n.bn_mean[c] = mean;
    n.bn_invstd[c] = invstd;
    const float g = gamma.at(c), be = beta.at(c);
    const float scale = g * invstd;
    const float shift = be - scale * mean;
    for (int b = 0; b < N; ++b) {
      const float* p = &x.at(b, c, 0, 0);
      float* q = &n.val.at(b, c, 0, 0);
      for (std::size_t i = 0; i < HW; ++i) q[i] = scale * p[i] + shift;
    }
  }
}

void Graph::bn_backward(Node& n) {
  Node& xn = node(n.in[0]);
  Node& gn = node(n.in[1]);
  Node& bn = node(n.in[2]);
  const Tensor& x = xn.val;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const double M = static_cast<double>(static_cast<std::size_t>(N) * HW);
  for (int c = 0; c < C; ++c) {
    const float mean = n.bn_mean[c];
    const float invstd = n.bn_invstd[c];
    double s1 = 0.0, s2 = 0.0;
    for (int b = 0; b < N; ++b) {
      const float* gy = &n.grad.at(b, c, 0, 0);
      const float* p = &x.at(b, c, 0, 0);
      for (std::size_t i = 0; i < HW; ++i) {
        s1 += gy[i];
        s2 += static_cast<double>(gy[i]) * ((p[i] - mean) * invstd);
      }
    }
    gn.grad.at(c) += static_cast<float>(s2);
    bn.grad.at(c) += static_cast<float>(s1);
    if (!xn.needs_grad) continue;
    const float g = node(n.in[1]).val.at(c);
    if (mode_ == Mode::Train) {
      const float coef = g * invstd / static_cast<float>(M);
      const float c1 = static_cast<float>(s1);
      const float c2 = static_cast<float>(s2);
      for (int b = 0; b < N; ++b) {
        const float* gy = &n.grad.at(b, c, 0, 0);
        const float* p = &x.at(b, c, 0, 0);
        float* gx = &xn.grad.at(b, c, 0, 0);
        for (std::size_t i = 0; i < HW; ++i) {
          const float xhat = (p[i] - mean) * invstd;
          gx[i] += coef * (static_cast<float>(M) * gy[i] - c1 - xhat * c2);
        }
      }
    } else {
      const float scale = g * invstd;
      for (int b = 0; b < N; ++b) {
        const float* gy = &n.grad.at(b, c, 0, 0);
        float* gx = &xn.grad.at(b, c, 0, 0);
        for (std::size_t i = 0; i < HW; ++i) gx[i] += scale * gy[i];
      }
    }
  }
}

void Graph::softmax_forward(Node& n) {
  const Tensor& x = node(n.in[0]).val;
  if (x.rank() == 2) {
    const int N = x.dim(0), C = x.dim(1);
    for (int b = 0; b < N; ++b) {
      float mx = x.at(b, 0);
      for (int c = 1; c < C; ++c) mx = std::max(mx, x.at(b, c));
      double sum = 0.0;
      for (int c = 0; c < C; ++c) {
        const float e = std::exp(x.at(b, c) - mx);
        n.val.at(b, c) = e;
        sum += e;
      }
      const float inv = static_cast<float>(1.0 / sum);
      for (int c = 0; c < C; ++c) n.val.at(b, c) *= inv;
    }
    return;
  }
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (int b = 0; b < N; ++b) {
    const float* xb = &x.at(b, 0, 0, 0);
    float* yb = &n.val.at(b, 0, 0, 0);
    for (std::size_t p = 0; p < HW; ++p) {
      float mx = xb[p];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xb[c * HW + p]);
      double sum = 0.0;
      for (int c = 0; c < C; ++c) {
        const float e = std::exp(xb[c * HW + p] - mx);
        yb[c * HW + p] = e;
        sum += e;
      }
      const float inv = static_cast<float>(1.0 / sum);
      for (int c = 0; c < C; ++c) yb[c * HW + p] *= inv;
    }
  }
}

void Graph::softmax_backward(Node& n) {
  Node& xn = node(n.in[0]);
  if (!xn.needs_grad) return;
  const Tensor& y = n.val;
  if (y.rank() == 2) {
    const int N = y.dim(0), C = y.dim(1);
    for (int b = 0; b < N; ++b) {
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += static_cast<double>(n.grad.at(b, c)) * y.at(b, c);
      for (int c = 0; c < C; ++c) {
        xn.grad.at(b, c) += y.at(b, c) * (n.grad.at(b, c) - static_cast<float>(dot));
      }
    }
    return;
  }
  const int N = y.dim(0), C = y.dim(1), H = y.dim(2), W = y.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (int b = 0; b < N; ++b) {
    const float* yb = &y.at(b, 0, 0, 0);
    const float* gb = &n.grad.at(b, 0, 0, 0);
    float* xb = &xn.grad.at(b, 0, 0, 0);
    for (std::size_t p = 0; p < HW; ++p) {
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += static_cast<double>(gb[c * HW + p]) * yb[c * HW + p];
      for (int c = 0; c < C; ++c) {
        xb[c * HW + p] += yb[c * HW + p] * (gb[c * HW + p] - static_cast<float>(dot));
      }
    }
  }
}

}  // namespace cq
