#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cardioquant/errors.hpp"

namespace cq {

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major float32 array with shape metadata. The universal numeric
// carrier for images, feature maps, weights and gradients.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), 0.0f);
  }

  Tensor(std::vector<int> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, float v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& at(int i) { return data_[static_cast<std::size_t>(i)]; }
  const float& at(int i) const { return data_[static_cast<std::size_t>(i)]; }

  float& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
  const float& at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }

  float& at(int n, int h, int w) {
    return data_[(static_cast<std::size_t>(n) * dim(1) + h) * dim(2) + w];
  }
  const float& at(int n, int h, int w) const {
    return data_[(static_cast<std::size_t>(n) * dim(1) + h) * dim(2) + w];
  }

  float& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
  }
  const float& at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
  }

  void fill(float v) {
    for (auto& x : data_) x = v;
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (int e : shape_) {
      if (e < 1) throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape_));
    }
  }

  std::vector<int> shape_;
  std::vector<float> data_;
};

}  // namespace cq
