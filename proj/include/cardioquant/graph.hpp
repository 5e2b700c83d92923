#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cardioquant/tensor.hpp"

namespace cq {

enum class Mode { Train, Infer };

// Static computation graph with reverse-mode differentiation. Nodes are
// appended in topological order at build time; shapes are fixed at build so
// every mismatch surfaces as a ShapeError before any arithmetic runs.
// Convolutions are 3x3, stride 1, zero same-padding throughout.
class Graph {
 public:
  using NodeId = int;

  // leaves
  NodeId input(std::vector<int> shape);
  NodeId parameter(const std::string& name, Tensor init);

  // layers
  NodeId conv2d(NodeId x, NodeId kernel, NodeId bias);
  NodeId dense(NodeId x, NodeId weight, NodeId bias);
  // Creates parameters <name>.gamma/<name>.beta and running-stat buffers
  // <name>.running_mean/<name>.running_var.
  NodeId batch_norm(NodeId x, const std::string& name);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId softmax_channels(NodeId x);
  NodeId max_pool2(NodeId x);
  NodeId upsample2_concat(NodeId low, NodeId skip);
  NodeId flatten(NodeId x);

  // objectives (scalar outputs)
  NodeId mse_loss(NodeId pred, NodeId target);
  NodeId cross_entropy_loss(NodeId probs, NodeId labels);
  NodeId sum_all(NodeId x);

  void set_value(NodeId id, const Tensor& v);
  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;
  Tensor& mutable_grad(NodeId id);
  const std::vector<int>& pool_argmax(NodeId id) const;

  void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }

  void forward();
  void backward(NodeId loss);

  int node_count() const { return static_cast<int>(nodes_.size()); }

  const std::vector<std::string>& parameter_names() const { return param_names_; }
  NodeId param_node(const std::string& name) const;
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  const Tensor& param_grad(const std::string& name) const;
  Tensor& mutable_param_grad(const std::string& name);

  const std::vector<std::string>& buffer_names() const { return buffer_names_; }
  Tensor& buffer(const std::string& name);
  const Tensor& buffer(const std::string& name) const;

 private:
  enum class Op {
    Input,
    Param,
    Conv2d,
    Dense,
    BatchNorm,
    Relu,
    Sigmoid,
    SoftmaxChannels,
    MaxPool2,
    Upsample2Concat,
    Flatten,
    MseLoss,
    CrossEntropyLoss,
    SumAll,
  };

  struct Node {
    Op op;
    std::vector<NodeId> in;
    Tensor val;
    Tensor grad;
    bool needs_grad = false;
    // op caches
    std::vector<int> argmax;                  // MaxPool2
    std::vector<float> bn_mean, bn_invstd;    // BatchNorm (per channel, as used)
    std::string bn_name;                      // BatchNorm buffer key
  };

  NodeId add_node(Node n);
  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  void check_id(NodeId id) const;

  void forward_node(Node& n);
  void backward_node(Node& n);

  void conv_forward(Node& n);
  void conv_backward(Node& n);
  void dense_forward(Node& n);
  void dense_backward(Node& n);
  void bn_forward(Node& n);
  void bn_backward(Node& n);
  void softmax_forward(Node& n);
  void softmax_backward(Node& n);

  void im2col(const Tensor& x, std::vector<float>& col) const;
  void col2im_add(const std::vector<float>& col, Tensor& gx) const;

  std::vector<Node> nodes_;
  std::vector<std::string> param_names_;
  std::unordered_map<std::string, NodeId> params_;
  std::vector<std::string> buffer_names_;
  std::unordered_map<std::string, Tensor> buffers_;
  Mode mode_ = Mode::Train;
  bool forward_ran_ = false;

  // scratch reused across ops
  std::vector<float> col_, colg_, pack_, packg_;
};

}  // namespace cq
