#include <catch2/catch_amalgamated.hpp>

#include "unmar/tensor.hpp"

using namespace unmar;

TEST_CASE("shape helpers") {
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK(shape_numel({}) == 1);
  CHECK(shape_str({2, 3}) == "[2,3]");
  CHECK(same_shape({1, 2}, {1, 2}));
  CHECK_FALSE(same_shape({1, 2}, {2, 1}));
}

TEST_CASE("tensor factories") {
  Tensor z = Tensor::zeros({2, 3});
  REQUIRE(z.defined());
  CHECK(z.rank() == 2);
  CHECK(z.dim(0) == 2);
  CHECK(z.dim(1) == 3);
  CHECK(z.numel() == 6);
  for (float v : z.values()) CHECK(v == 0.0f);

  Tensor f = Tensor::full({4}, 2.5f);
  for (float v : f.values()) CHECK(v == 2.5f);

  Tensor d = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(d.data()[3] == 4.0f);

  Tensor s = Tensor::scalar(7.0f);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 7.0f);
}

TEST_CASE("from_data length mismatch rejected") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("item on non-scalar rejected") {
  CHECK_THROWS_AS(Tensor::zeros({2}).item(), ShapeError);
}

TEST_CASE("default tensor is undefined and unusable") {
  Tensor t;
  CHECK_FALSE(t.defined());
  CHECK_THROWS_AS(t.shape(), Error);
  CHECK_THROWS_AS(t.numel(), Error);
}

TEST_CASE("copies are shallow handles") {
  Tensor a = Tensor::zeros({3});
  Tensor b = a;
  b.data()[0] = 5.0f;
  CHECK(a.data()[0] == 5.0f);
  CHECK(a.id() == b.id());
}

TEST_CASE("gradient lifecycle") {
  Tensor t = Tensor::zeros({3}, true);
  CHECK(t.requires_grad());
  CHECK_FALSE(t.has_grad());

  t.accumulate_grad(std::vector<float>{1, 2, 3});
  REQUIRE(t.has_grad());
  CHECK(t.grad()[1] == 2.0f);

  // accumulation sums
  t.accumulate_grad(std::vector<float>{1, 1, 1});
  CHECK(t.grad()[0] == 2.0f);
  CHECK(t.grad()[2] == 4.0f);

  t.zero_grad();
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("gradient cannot leak into non-grad tensors") {
  Tensor t = Tensor::zeros({2});
  CHECK_THROWS_AS(t.accumulate_grad(std::vector<float>{1, 1}), Error);
}

TEST_CASE("gradient length checked") {
  Tensor t = Tensor::zeros({2}, true);
  CHECK_THROWS_AS(t.accumulate_grad(std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("reading an absent gradient throws") {
  const Tensor t = Tensor::zeros({2}, true);
  CHECK_THROWS_AS(t.grad(), Error);
}

TEST_CASE("detach copies values and drops grad tracking") {
  Tensor a = Tensor::from_data({2}, {1, 2}, true);
  Tensor d = a.detach();
  CHECK_FALSE(d.requires_grad());
  CHECK(d.id() != a.id());
  d.data()[0] = 9.0f;
  CHECK(a.data()[0] == 1.0f);
}

TEST_CASE("clone keeps grad flag and accumulated gradient") {
  Tensor a = Tensor::from_data({2}, {1, 2}, true);
  a.accumulate_grad(std::vector<float>{3, 4});
  Tensor c = a.clone();
  CHECK(c.requires_grad());
  REQUIRE(c.has_grad());
  CHECK(c.grad()[1] == 4.0f);
  CHECK(c.id() != a.id());
}
