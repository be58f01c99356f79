#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck_util.hpp"
#include "morphogen/conv.hpp"
#include "morphogen/nn.hpp"
#include "morphogen/tensor.hpp"

using namespace morphogen;
using gradcheck::check;
using gradcheck::random_input;
using gradcheck::random_input_away_from_zero;
using gradcheck::weights_like;

namespace {

Tensor<double> weighted(const Tensor<double>& y, uint64_t seed) {
  return mean(mul(y, weights_like(y.shape(), seed)));
}

}  // namespace

TEST_CASE("gradcheck add/sub/mul/scale") {
  auto a = random_input({2, 3}, 1);
  auto b = random_input({2, 3}, 2);
  auto r1 = check([&] { return weighted(add(a, b), 10); }, {a, b});
  CHECK_MESSAGE(r1.ok, r1.detail);
  auto r2 = check([&] { return weighted(sub(a, b), 11); }, {a, b});
  CHECK_MESSAGE(r2.ok, r2.detail);
  auto r3 = check([&] { return weighted(mul(a, b), 12); }, {a, b});
  CHECK_MESSAGE(r3.ok, r3.detail);
  auto r4 = check([&] { return weighted(scale(a, 1.7), 13); }, {a});
  CHECK_MESSAGE(r4.ok, r4.detail);
}

TEST_CASE("gradcheck activations: relu, silu, tanh, hinge_relu") {
  auto x = random_input_away_from_zero({3, 4}, 3);
  auto r1 = check([&] { return weighted(relu(x), 20); }, {x});
  CHECK_MESSAGE(r1.ok, r1.detail);
  auto r2 = check([&] { return weighted(silu(x), 21); }, {x});
  CHECK_MESSAGE(r2.ok, r2.detail);
  auto r3 = check([&] { return weighted(tanh_op(x), 22); }, {x});
  CHECK_MESSAGE(r3.ok, r3.detail);
  // keep 1 - x away from the kink
  auto y = random_input({3, 4}, 4, -0.8, 0.8);
  auto r4 = check([&] { return weighted(hinge_relu(y, 1.0, -1.0), 23); }, {y});
  CHECK_MESSAGE(r4.ok, r4.detail);
}

TEST_CASE("gradcheck reductions: mean, mse, l1") {
  auto a = random_input({7}, 5);
  auto b = random_input({7}, 6);
  // keep |a-b| away from the l1 kink
  for (size_t i = 0; i < a.value().size(); ++i)
    if (std::abs(a.value()[i] - b.value()[i]) < 0.05) a.value()[i] += 0.1;
  auto r1 = check([&] { return mean(a); }, {a});
  CHECK_MESSAGE(r1.ok, r1.detail);
  auto r2 = check([&] { return mse(a, b); }, {a, b});
  CHECK_MESSAGE(r2.ok, r2.detail);
  auto r3 = check([&] { return l1(a, b); }, {a, b});
  CHECK_MESSAGE(r3.ok, r3.detail);
}

TEST_CASE("gradcheck matmul plain, batched, transposed") {
  auto a = random_input({3, 4}, 7);
  auto b = random_input({4, 5}, 8);
  auto r1 = check([&] { return weighted(matmul(a, b), 30); }, {a, b});
  CHECK_MESSAGE(r1.ok, r1.detail);

  auto ab = random_input({2, 3, 4}, 9);
  auto bb = random_input({2, 4, 5}, 10);
  auto r2 = check([&] { return weighted(matmul(ab, bb), 31); }, {ab, bb});
  CHECK_MESSAGE(r2.ok, r2.detail);

  auto bt = random_input({5, 4}, 11);
  auto r3 = check([&] { return weighted(matmul(a, bt, true), 32); }, {a, bt});
  CHECK_MESSAGE(r3.ok, r3.detail);
}

TEST_CASE("gradcheck softmax on every axis") {
  auto x = random_input({2, 3, 4}, 12);
  for (size_t axis : {0u, 1u, 2u}) {
    auto r = check([&] { return weighted(softmax(x, axis), 40 + axis); }, {x});
    CHECK_MESSAGE(r.ok, r.detail);
  }
}

TEST_CASE("gradcheck instance_norm") {
  auto x = random_input({2, 3, 2, 2, 2}, 13);
  auto r = check([&] { return weighted(instance_norm(x), 50); }, {x});
  CHECK_MESSAGE(r.ok, r.detail);
}

TEST_CASE("gradcheck scaled_dot_attention") {
  auto q = random_input({2, 3, 4}, 14);
  auto k = random_input({2, 5, 4}, 15);
  auto v = random_input({2, 5, 4}, 16);
  auto r = check([&] { return weighted(scaled_dot_attention(q, k, v), 51); },
                 {q, k, v});
  CHECK_MESSAGE(r.ok, r.detail);
}

TEST_CASE("gradcheck conv3d stride 1 and stride 2, with bias") {
  auto x = random_input({2, 2, 4, 4, 4}, 17);
  auto w = random_input({3, 2, 3, 3, 3}, 18);
  auto b = random_input({3}, 19);
  auto r1 = check([&] { return weighted(conv3d(x, w, b, 1, 1), 60); },
                  {x, w, b});
  CHECK_MESSAGE(r1.ok, r1.detail);
  auto r2 = check([&] { return weighted(conv3d(x, w, b, 2, 1), 61); },
                  {x, w, b});
  CHECK_MESSAGE(r2.ok, r2.detail);
}

TEST_CASE("gradcheck conv_transpose3d stride 1 and stride 2, with bias") {
  auto x = random_input({2, 2, 3, 3, 3}, 20);
  auto w = random_input({2, 3, 3, 3, 3}, 21);
  auto b = random_input({3}, 22);
  auto r1 = check([&] { return weighted(conv_transpose3d(x, w, b, 1, 1), 62); },
                  {x, w, b});
  CHECK_MESSAGE(r1.ok, r1.detail);
  auto r2 = check([&] { return weighted(conv_transpose3d(x, w, b, 2, 1), 63); },
                  {x, w, b});
  CHECK_MESSAGE(r2.ok, r2.detail);
}

TEST_CASE("gradcheck shape ops: reshape, concat, slice") {
  auto x = random_input({2, 6}, 23);
  auto r1 = check([&] { return weighted(reshape(x, {3, 4}), 70); }, {x});
  CHECK_MESSAGE(r1.ok, r1.detail);

  auto a = random_input({2, 2, 3}, 24);
  auto b = random_input({2, 4, 3}, 25);
  auto r2 = check([&] { return weighted(concat<double>({a, b}, 1), 71); },
                  {a, b});
  CHECK_MESSAGE(r2.ok, r2.detail);

  auto c = random_input({2, 5, 3}, 26);
  auto r3 = check([&] { return weighted(slice(c, 1, 1, 3), 72); }, {c});
  CHECK_MESSAGE(r3.ok, r3.detail);
}

TEST_CASE("gradcheck broadcast helpers: add_bc_bias, channel_affine") {
  auto x = random_input({2, 3, 4}, 27);
  auto bias = random_input({2, 3}, 28);
  auto r1 = check([&] { return weighted(add_bc_bias(x, bias), 80); },
                  {x, bias});
  CHECK_MESSAGE(r1.ok, r1.detail);

  auto gamma = random_input({3}, 29);
  auto beta = random_input({3}, 30);
  auto r2 = check(
      [&] { return weighted(channel_affine(x, gamma, beta), 81); },
      {x, gamma, beta});
  CHECK_MESSAGE(r2.ok, r2.detail);
}

TEST_CASE("gradcheck permute and add_row_bias") {
  auto x = random_input({2, 3, 4, 2, 2}, 33);
  auto r1 = check(
      [&] { return weighted(permute(x, {0, 2, 3, 4, 1}), 83); }, {x});
  CHECK_MESSAGE(r1.ok, r1.detail);

  auto rows = random_input({5, 3}, 34);
  auto bias = random_input({3}, 35);
  auto r2 = check([&] { return weighted(add_row_bias(rows, bias), 84); },
                  {rows, bias});
  CHECK_MESSAGE(r2.ok, r2.detail);
}

TEST_CASE("permute round-trips through its inverse") {
  auto x = random_input({2, 3, 4}, 36);
  auto y = permute(permute(x, {2, 0, 1}), {1, 2, 0});
  CHECK(y.value() == x.value());
  CHECK(y.shape() == x.shape());
}

TEST_CASE("gradcheck embedding_gather") {
  auto entries = random_input({5, 3}, 31);
  std::vector<int64_t> idx = {0, 3, 3, 1};
  auto r = check([&] { return weighted(embedding_gather(entries, idx), 82); },
                 {entries});
  CHECK_MESSAGE(r.ok, r.detail);
}

TEST_CASE("straight-through estimator: identity to latent, zero to entries") {
  // out = latent + sg(quantized - latent); value equals quantized, gradient
  // flows to latent as identity and never into the argmin selection.
  auto latent = random_input({4, 3}, 32);
  auto entries = random_input({5, 3}, 33);
  latent.set_requires_grad(true);
  entries.set_requires_grad(true);
  Tape<double> tape;
  std::vector<int64_t> idx = {1, 2, 0, 4};
  Tensor<double> q = embedding_gather(entries, idx);
  Tensor<double> st = add(latent, stop_gradient(sub(q, latent)));
  CHECK(st.value() == q.value());
  Tensor<double> loss = mean(st);
  tape.backward(loss);
  for (size_t i = 0; i < latent.value().size(); ++i)
    CHECK(latent.grad()[i] == doctest::Approx(1.0 / 12.0));
  CHECK_FALSE(entries.grad_allocated());
}
