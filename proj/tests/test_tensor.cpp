#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "morphogen/conv.hpp"
#include "morphogen/nn.hpp"
#include "morphogen/parallel.hpp"
#include "morphogen/rng.hpp"
#include "morphogen/tensor.hpp"

using namespace morphogen;

namespace {

Tensor<float> random_tensor(Shape shape, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.value()) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("conv3d of all-ones has 27 at the fully-covered centre") {
  Tensor<float> x = Tensor<float>::full({1, 1, 4, 4, 4}, 1.0f);
  Tensor<float> w = Tensor<float>::full({1, 1, 3, 3, 3}, 1.0f);
  Tensor<float> y = conv3d(x, w, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 4, 4, 4});
  // centre voxel (1,1,1): full 3^3 window of ones
  const int64_t idx = (1 * 4 + 1) * 4 + 1;
  CHECK(y.value()[idx] == doctest::Approx(27.0f));
  // corner (0,0,0): only the 2^3 in-bounds part contributes
  CHECK(y.value()[0] == doctest::Approx(8.0f));
}

TEST_CASE("conv3d output shape follows convolution arithmetic") {
  Tensor<float> x = random_tensor({2, 3, 8, 8, 8}, 1);
  Tensor<float> w = random_tensor({5, 3, 4, 4, 4}, 2);
  Tensor<float> y = conv3d(x, w, 2, 1);
  CHECK(y.shape() == Shape{2, 5, 4, 4, 4});
}

TEST_CASE("conv3d rejects channel mismatch naming the dimensions") {
  Tensor<float> x = random_tensor({1, 2, 4, 4, 4}, 3);
  Tensor<float> w = random_tensor({1, 3, 3, 3, 3}, 4);
  CHECK_THROWS_AS(conv3d(x, w, 1, 1), Error);
  try {
    conv3d(x, w, 1, 1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
    CHECK(std::string(e.what()).find("channels") != std::string::npos);
  }
}

TEST_CASE("non-finite input is rejected") {
  Tensor<float> x = Tensor<float>::full({1, 1, 2, 2, 2}, 1.0f);
  x.value()[3] = std::numeric_limits<float>::quiet_NaN();
  Tensor<float> w = Tensor<float>::full({1, 1, 1, 1, 1}, 1.0f);
  try {
    conv3d(x, w, 1, 0);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteInput);
  }
}

TEST_CASE("relu clamps negatives") {
  Tensor<float> x = Tensor<float>::from({2}, {-2.5f, 3.0f});
  Tensor<float> y = relu(x);
  CHECK(y.value()[0] == 0.0f);
  CHECK(y.value()[1] == 3.0f);
}

TEST_CASE("instance_norm of a constant channel is all zeros before affine") {
  Tensor<float> x = Tensor<float>::full({1, 1, 2, 2, 2}, 7.25f);
  Tensor<float> y = instance_norm(x, 1e-5f);
  for (float v : y.value()) CHECK(v == doctest::Approx(0.0f));
}

TEST_CASE("softmax sums to 1 along the chosen axis") {
  Tensor<float> x = random_tensor({3, 5, 4}, 7);
  for (size_t axis : {0u, 1u, 2u}) {
    Tensor<float> y = softmax(x, axis);
    const Shape& s = x.shape();
    int64_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= s[d];
    for (size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        double sum = 0;
        for (int64_t j = 0; j < s[axis]; ++j)
          sum += y.value()[o * s[axis] * inner + j * inner + i];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
  }
}

TEST_CASE("conv then conv_transpose with matching attrs restores extent") {
  struct Attrs {
    int64_t k, s, p;
  };
  for (Attrs a : {Attrs{4, 2, 1}, Attrs{2, 2, 0}, Attrs{3, 1, 1}}) {
    Tensor<float> x = random_tensor({1, 2, 8, 8, 8}, 11);
    Tensor<float> w = random_tensor({3, 2, a.k, a.k, a.k}, 12);
    Tensor<float> y = conv3d(x, w, a.s, a.p);
    Tensor<float> wt = random_tensor({3, 2, a.k, a.k, a.k}, 13);
    Tensor<float> z = conv_transpose3d(y, wt, a.s, a.p);
    CHECK(z.shape()[2] == 8);
    CHECK(z.shape()[3] == 8);
    CHECK(z.shape()[4] == 8);
  }
}

TEST_CASE("conv3d is bit-identical across thread counts") {
  Tensor<float> x = random_tensor({2, 3, 6, 6, 6}, 21);
  Tensor<float> w = random_tensor({4, 3, 3, 3, 3}, 22);
  set_thread_count(1);
  Tensor<float> y1 = conv3d(x, w, 1, 1);
  set_thread_count(4);
  Tensor<float> y4 = conv3d(x, w, 1, 1);
  set_thread_count(1);
  REQUIRE(y1.numel() == y4.numel());
  for (int64_t i = 0; i < y1.numel(); ++i)
    CHECK(y1.value()[i] == y4.value()[i]);
}

TEST_CASE("forward results are bit-identical across repeated runs") {
  auto run = [] {
    Rng rng(99);
    Tensor<float> x(Shape{1, 2, 5, 5, 5});
    for (auto& v : x.value()) v = static_cast<float>(rng.normal());
    Tensor<float> w(Shape{3, 2, 3, 3, 3});
    for (auto& v : w.value()) v = static_cast<float>(rng.normal());
    Tensor<float> y = silu(instance_norm(conv3d(x, w, 1, 1)));
    return y.value();
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
}

TEST_CASE("backward on a consumed tape throws") {
  Tensor<double> w = Tensor<double>::scalar(2.0);
  w.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss = mean(mul(w, w));
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("backward requires a scalar loss") {
  Tensor<double> w = Tensor<double>::from({2}, {1.0, 2.0});
  w.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y = mul(w, w);
  CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("hand chain rule: loss = mean((w*x - y)^2)") {
  // w=2, x=3, y=5: dloss/dw = 2*(6-5)*3 = 6
  Tensor<double> w = Tensor<double>::scalar(2.0);
  w.set_requires_grad(true);
  Tensor<double> x = Tensor<double>::scalar(3.0);
  Tensor<double> y = Tensor<double>::scalar(5.0);
  Tape<double> tape;
  Tensor<double> loss = mse(mul(w, x), y);
  tape.backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("stop_gradient blocks the barred branch exactly") {
  Tensor<double> a = Tensor<double>::scalar(1.5);
  a.set_requires_grad(true);
  Tensor<double> b = Tensor<double>::scalar(-0.5);
  b.set_requires_grad(true);
  Tape<double> tape;
  // loss = mean(a * sg(b)); d/db must be exactly zero
  Tensor<double> loss = mean(mul(a, stop_gradient(b)));
  tape.backward(loss);
  CHECK(a.grad()[0] == doctest::Approx(-0.5));
  CHECK((b.grad_allocated() ? b.grad()[0] : 0.0) == 0.0);
}

TEST_CASE("unreachable tensors read zero grad after backward") {
  Tensor<double> used = Tensor<double>::scalar(3.0);
  used.set_requires_grad(true);
  Tensor<double> unused = Tensor<double>::scalar(4.0);
  unused.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss = mean(mul(used, used));
  tape.backward(loss);
  CHECK(used.grad()[0] == doctest::Approx(6.0));
  CHECK_FALSE(unused.grad_allocated());
}

TEST_CASE("concat/slice round-trip on the channel axis") {
  Tensor<float> a = random_tensor({2, 3, 2, 2, 2}, 31);
  Tensor<float> b = random_tensor({2, 5, 2, 2, 2}, 32);
  Tensor<float> c = concat<float>({a, b}, 1);
  CHECK(c.shape() == Shape{2, 8, 2, 2, 2});
  Tensor<float> a2 = slice(c, 1, 0, 3);
  Tensor<float> b2 = slice(c, 1, 3, 5);
  CHECK(a2.value() == a.value());
  CHECK(b2.value() == b.value());
}

TEST_CASE("scaled_dot_attention shape and single-position degeneracy") {
  Tensor<float> q = random_tensor({2, 4, 8}, 41);
  Tensor<float> k = random_tensor({2, 6, 8}, 42);
  Tensor<float> v = random_tensor({2, 6, 8}, 43);
  Tensor<float> y = scaled_dot_attention(q, k, v);
  CHECK(y.shape() == Shape{2, 4, 8});

  // single key: softmax over one entry is 1, so output == v broadcast
  Tensor<float> k1 = random_tensor({1, 1, 8}, 44);
  Tensor<float> v1 = random_tensor({1, 1, 8}, 45);
  Tensor<float> q1 = random_tensor({1, 3, 8}, 46);
  Tensor<float> y1 = scaled_dot_attention(q1, k1, v1);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 8; ++j)
      CHECK(y1.value()[i * 8 + j] == doctest::Approx(v1.value()[j]));
}

TEST_CASE("embedding_gather picks rows and scatters grads") {
  Tensor<double> entries =
      Tensor<double>::from({3, 2}, {0.0, 1.0, 10.0, 11.0, 20.0, 21.0});
  entries.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> picked = embedding_gather(entries, {2, 0, 2});
  CHECK(picked.value() == std::vector<double>{20.0, 21.0, 0.0, 1.0, 20.0, 21.0});
  Tensor<double> loss = mean(picked);
  tape.backward(loss);
  // row 2 picked twice, row 0 once, row 1 never
  CHECK(entries.grad()[0] == doctest::Approx(1.0 / 6.0));
  CHECK(entries.grad()[2] == doctest::Approx(0.0));
  CHECK(entries.grad()[4] == doctest::Approx(2.0 / 6.0));
}
