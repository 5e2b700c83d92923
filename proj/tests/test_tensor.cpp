#include <doctest.h>

#include "cardioquant/tensor.hpp"

using cq::ShapeError;
using cq::Tensor;

TEST_CASE("tensor construction zero-fills and records shape") {
  Tensor t({2, 3, 4});
  CHECK(t.rank() == 3);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t.dim(2) == 4);
  CHECK(t.numel() == 24);
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t.data()[i] == 0.0f);
}

TEST_CASE("tensor rejects invalid shapes") {
  CHECK_THROWS_AS(Tensor(std::vector<int>{}), ShapeError);
  CHECK_THROWS_AS(Tensor({3, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({-1}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
}

TEST_CASE("row-major indexing") {
  Tensor t({2, 3});
  t.at(1, 2) = 7.0f;
  CHECK(t.data()[5] == 7.0f);

  Tensor u({2, 2, 3, 4});
  u.at(1, 0, 2, 3) = 5.0f;
  CHECK(u.data()[1 * 24 + 0 * 12 + 2 * 4 + 3] == 5.0f);

  Tensor v({2, 3, 4});
  v.at(1, 2, 3) = 9.0f;
  CHECK(v.data()[1 * 12 + 2 * 4 + 3] == 9.0f);
}

TEST_CASE("full and fill") {
  Tensor t = Tensor::full({3}, 2.5f);
  CHECK(t.at(0) == 2.5f);
  CHECK(t.at(2) == 2.5f);
  t.fill(-1.0f);
  CHECK(t.at(1) == -1.0f);
}
