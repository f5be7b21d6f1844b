#include "doctest.h"
#include "segdiff/autograd.hpp"
#include "testing.hpp"

using namespace segdiff;
using testing::grad_check;
using testing::random_tensor;

namespace {

// Contract an arbitrary output to a scalar with fixed random weights so every
// output element contributes to the checked gradient.
ag::Var probe(const ag::Var& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ag::dot(y, ag::constant(random_tensor(y->value.shape(), rng)));
}

}  // namespace

TEST_CASE("elementwise ops pass finite-difference checks") {
  std::mt19937_64 rng(1);
  auto a = ag::parameter(random_tensor({3, 4}, rng));
  auto b = ag::parameter(random_tensor({3, 4}, rng));
  CHECK(grad_check(a, [&] { return probe(ag::add(a, b)); }) < 1e-6);
  CHECK(grad_check(b, [&] { return probe(ag::sub(a, b)); }) < 1e-6);
  CHECK(grad_check(a, [&] { return probe(ag::mul(a, b)); }) < 1e-6);
  CHECK(grad_check(a, [&] { return probe(ag::scale(a, -2.5)); }) < 1e-6);
  CHECK(grad_check(a, [&] { return probe(ag::tanh(a)); }) < 1e-6);
  CHECK(grad_check(a, [&] { return probe(ag::gelu(a)); }) < 1e-6);
  CHECK(grad_check(a, [&] { return probe(ag::relu(a)); }) < 1e-6);
  CHECK(grad_check(a, [&] { return probe(ag::reshape(a, {4, 3})); }) < 1e-6);
}

TEST_CASE("reductions pass finite-difference checks") {
  std::mt19937_64 rng(2);
  auto a = ag::parameter(random_tensor({7}, rng));
  auto b = ag::parameter(random_tensor({7}, rng));
  auto target = random_tensor({7}, rng);
  CHECK(grad_check(a, [&] { return ag::sum(ag::mul(a, a)); }) < 1e-6);
  CHECK(grad_check(a, [&] { return ag::dot(a, b); }) < 1e-6);
  CHECK(grad_check(a, [&] { return ag::squared_error(a, target); }) < 1e-6);
  CHECK(grad_check(a, [&] { return ag::logsumexp(a); }) < 1e-6);
  CHECK(grad_check(a, [&] { return ag::pick(ag::tanh(a), 3); }) < 1e-6);
  CHECK(grad_check(a, [&] { return probe(ag::stack({ag::pick(a, 1), ag::dot(a, b), ag::pick(a, 1)})); }) < 1e-6);
}

TEST_CASE("matrix ops pass finite-difference checks") {
  std::mt19937_64 rng(3);
  auto x = ag::parameter(random_tensor({5, 6}, rng));
  auto w = ag::parameter(random_tensor({6, 4}, rng));
  auto b = ag::parameter(random_tensor({4}, rng));
  auto r = ag::parameter(random_tensor({6}, rng));
  auto g = ag::parameter(random_tensor({6}, rng, 0.5, 1.5));
  CHECK(grad_check(x, [&] { return probe(ag::matmul(x, w)); }) < 1e-6);
  CHECK(grad_check(w, [&] { return probe(ag::matmul(x, w)); }) < 1e-6);
  CHECK(grad_check(x, [&] { return probe(ag::linear(x, w, b)); }) < 1e-6);
  CHECK(grad_check(w, [&] { return probe(ag::linear(x, w, b)); }) < 1e-6);
  CHECK(grad_check(b, [&] { return probe(ag::linear(x, w, b)); }) < 1e-6);
  CHECK(grad_check(r, [&] { return probe(ag::add_row(x, r)); }) < 1e-6);
  CHECK(grad_check(x, [&] { return probe(ag::layer_norm(x, g, r)); }) < 1e-5);
  CHECK(grad_check(g, [&] { return probe(ag::layer_norm(x, g, r)); }) < 1e-6);
  CHECK(grad_check(r, [&] { return probe(ag::layer_norm(x, g, r)); }) < 1e-6);
  CHECK(grad_check(x, [&] { return probe(ag::concat_rows({x, ag::slice_rows(x, 1, 2)})); }) < 1e-6);
  CHECK(grad_check(x, [&] { return probe(ag::slice_cols(x, 2, 3)); }) < 1e-6);
}

TEST_CASE("attention passes finite-difference checks") {
  std::mt19937_64 rng(4);
  auto q = ag::parameter(random_tensor({5, 8}, rng));
  auto k = ag::parameter(random_tensor({5, 8}, rng));
  auto v = ag::parameter(random_tensor({5, 8}, rng));
  auto f = [&] { return probe(ag::attention(q, k, v, 2)); };
  CHECK(grad_check(q, f) < 1e-5);
  CHECK(grad_check(k, f) < 1e-5);
  CHECK(grad_check(v, f) < 1e-5);
}

TEST_CASE("convolutions pass finite-difference checks") {
  std::mt19937_64 rng(5);
  auto x = ag::parameter(random_tensor({40}, rng));
  auto w = ag::parameter(random_tensor({3, 8}, rng));
  auto b = ag::parameter(random_tensor({3}, rng));
  CHECK(grad_check(x, [&] { return probe(ag::conv1d(x, w, b, 4)); }) < 1e-6);
  CHECK(grad_check(w, [&] { return probe(ag::conv1d(x, w, b, 4)); }) < 1e-6);
  CHECK(grad_check(b, [&] { return probe(ag::conv1d(x, w, b, 4)); }) < 1e-6);

  auto z = ag::parameter(random_tensor({3, 6}, rng));
  auto b1 = ag::parameter(random_tensor({1}, rng));
  CHECK(ag::conv_transpose1d(z, w, b1, 4)->value.size() == 5 * 4 + 8);
  CHECK(grad_check(z, [&] { return probe(ag::conv_transpose1d(z, w, b1, 4)); }) < 1e-6);
  CHECK(grad_check(w, [&] { return probe(ag::conv_transpose1d(z, w, b1, 4)); }) < 1e-6);
  CHECK(grad_check(b1, [&] { return probe(ag::conv_transpose1d(z, w, b1, 4)); }) < 1e-6);

  auto img = ag::parameter(random_tensor({2, 7, 9}, rng));
  auto w2 = ag::parameter(random_tensor({3, 2, 3, 3}, rng));
  auto b2 = ag::parameter(random_tensor({3}, rng));
  auto f = [&] { return probe(ag::conv2d(img, w2, b2, 2, 1)); };
  CHECK(ag::conv2d(img, w2, b2, 2, 1)->value.shape() == Shape{3, 4, 5});
  CHECK(grad_check(img, f) < 1e-6);
  CHECK(grad_check(w2, f) < 1e-6);
  CHECK(grad_check(b2, f) < 1e-6);
  CHECK(grad_check(img, [&] { return probe(ag::global_max_pool(img)); }) < 1e-6);
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  auto a = ag::parameter(Tensor({2}, {1.5, -2.0}));
  auto y = ag::add(ag::mul(a, a), a);  // a^2 + a
  ag::backward(ag::sum(y));
  CHECK(a->grad[0] == doctest::Approx(4.0));
  CHECK(a->grad[1] == doctest::Approx(-3.0));
}

TEST_CASE("constants record no history") {
  auto c = ag::constant(Tensor({2}, 1.0));
  auto y = ag::mul(c, c);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}
