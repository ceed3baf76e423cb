#include "doctest.h"
#include "gradient_cases.hpp"
#include "support.hpp"

#include "dualpose/optim.hpp"
#include "dualpose/tensor.hpp"

#include <cstring>

using namespace test_support;
using ad::Tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> grads(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST_CASE("matmul") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({3, 4}, rng, -1, 1, false);
  const Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(values(ad::matmul(eye, x)) == values(x));

  const Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from_data({2, 1}, {1, 1});
  const Tensor ab = ad::matmul(a, b);
  CHECK(ab.shape() == ad::Shape{2, 1});
  CHECK(values(ab) == std::vector<double>{3, 7});

  // d sum(A B) / dA = ones B^T
  Tensor ga = random_tensor({3, 4}, rng, -1, 1);
  const Tensor gb = random_tensor({4, 2}, rng, -1, 1, false);
  ad::backward(ad::sum_all(ad::matmul(ga, gb)));
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k)
      CHECK(ga.grad()[i * 4 + k] == doctest::Approx(gb.data()[k * 2] + gb.data()[k * 2 + 1]).epsilon(1e-14));

  CHECK_THROWS_AS(ad::matmul(a, Tensor::zeros({3, 1})), ad::TensorError);
}

TEST_CASE("pointwise ops") {
  CHECK(ad::leaky_relu(Tensor::scalar(-1.0), 0.2).item() == doctest::Approx(-0.2));
  CHECK(ad::leaky_relu(Tensor::scalar(2.0), 0.2).item() == 2.0);
  CHECK(ad::relu(Tensor::scalar(-3.0)).item() == 0.0);
  CHECK(ad::exp(Tensor::scalar(0.0)).item() == 1.0);
  CHECK(ad::sigmoid(Tensor::scalar(0.0)).item() == 0.5);

  Tensor x = Tensor::scalar(4.0, true);
  ad::backward(ad::sqrt(x));
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
  const double h = 1e-5;
  const double fd = (std::sqrt(4.0 + h) - std::sqrt(4.0 - h)) / (2 * h);
  CHECK(std::abs(x.grad()[0] - fd) < 1e-6);

  SUBCASE("broadcasting over size-1 axes only") {
    const Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor col = Tensor::from_data({2, 1}, {10, 20});
    CHECK(values(a + col) == std::vector<double>{11, 12, 13, 24, 25, 26});
    CHECK_THROWS_AS(a + Tensor::zeros({2, 2}), ad::TensorError);
    CHECK_THROWS_AS(a + Tensor::zeros({3}), ad::TensorError);
  }

  SUBCASE("checked mode rejects non-finite results") {
    CHECK(ad::checked_mode());
    CHECK_THROWS_AS(ad::div(Tensor::scalar(1.0), Tensor::scalar(0.0)), ad::TensorError);
    CHECK_THROWS_AS(ad::log(Tensor::scalar(-1.0)), ad::TensorError);
    ad::set_checked_mode(false);
    CHECK(std::isinf(ad::div(Tensor::scalar(1.0), Tensor::scalar(0.0)).item()));
    ad::set_checked_mode(true);
  }
}

TEST_CASE("reductions") {
  const Tensor v = Tensor::from_data({1, 3}, {1, 2, 3});
  CHECK(ad::mean(v, 1).item() == 2.0);
  CHECK(ad::sum(v, 1).item() == 6.0);
  CHECK(ad::mean(v, 1).shape() == ad::Shape{1, 1});

  const Tensor c = Tensor::full({1, 5}, 0.7);
  CHECK(ad::std(c, 1, 1e-5).item() == doctest::Approx(std::sqrt(1e-5)).epsilon(1e-12));
  // Biased variance: {-1, 1} has variance 1.
  CHECK(ad::std(Tensor::from_data({1, 2}, {-1, 1}), 1, 1e-5).item() ==
        doctest::Approx(std::sqrt(1 + 1e-5)).epsilon(1e-12));

  CHECK_THROWS_AS(ad::sum(Tensor::zeros({2, 0}), 1), ad::TensorError);
  CHECK_THROWS_AS(ad::sum(v, 2), ad::TensorError);

  std::mt19937_64 rng(3);
  const double err = gradient_error([](const std::vector<Tensor>& x) { return ad::sum_all(ad::mean(x[0], 1)); },
                                    {random_tensor({2, 5}, rng, -1, 1)});
  CHECK(err <= 1e-6);

  // logsumexp is stable for large arguments
  CHECK(ad::logsumexp(Tensor::from_data({1, 2}, {1000, 1000}), 1).item() ==
        doctest::Approx(1000 + std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("conv1d_pointwise") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 3, 5}, rng, -1, 1, false);
  const Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(values(ad::conv1d_pointwise(x, eye, Tensor::zeros({3}))) == values(x));

  const Tensor w = random_tensor({4, 3}, rng, -1, 1, false);
  const Tensor b = random_tensor({4}, rng, -1, 1, false);
  const Tensor x1 = random_tensor({1, 3, 1}, rng, -1, 1, false);
  const Tensor y = ad::conv1d_pointwise(x1, w, b);
  const Tensor ref = ad::matmul(w, ad::reshape(x1, {3, 1}));
  for (int o = 0; o < 4; ++o) CHECK(y.data()[o] == doctest::Approx(ref.data()[o] + b.data()[o]).epsilon(1e-14));

  CHECK_THROWS_AS(ad::conv1d_pointwise(x, Tensor::zeros({4, 2})), ad::TensorError);
}

TEST_CASE("backward contract") {
  Tensor x = Tensor::from_data({4}, {1, -2, 3, 0.5}, true);
  Tensor loss = ad::sum_all(x);
  ad::backward(loss);
  CHECK(grads(x) == std::vector<double>{1, 1, 1, 1});
  CHECK_THROWS_AS(ad::backward(loss), ad::TensorError);

  CHECK_THROWS_AS(ad::backward(ad::scale(x, 2.0)), ad::TensorError);

  // f(x) = mean((x W)^2) against central differences
  std::mt19937_64 rng(9);
  const double err = gradient_error(
      [](const std::vector<Tensor>& v) { return ad::mean(ad::reshape(ad::square(ad::matmul(v[0], v[1])), {1, 6}), 1); },
      {random_tensor({2, 4}, rng, -1, 1), random_tensor({4, 3}, rng, -1, 1)});
  CHECK(err <= 1e-4);
}

TEST_CASE("stop_gradient and straight_through") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  const Tensor s = ad::stop_gradient(x);
  CHECK(values(s) == values(x));
  ad::backward(ad::sum_all(ad::mul(ad::square(x), Tensor::zeros({3})) + ad::square(s)));
  CHECK(grads(x) == std::vector<double>{0, 0, 0});

  Tensor y = Tensor::from_data({3}, {1, 2, 3}, true);
  ad::backward(ad::sum_all(ad::scale(ad::stop_gradient(y, true), 5.0)));
  CHECK(grads(y) == std::vector<double>{5, 5, 5});

  Tensor z = Tensor::from_data({2}, {1, 2}, true);
  const Tensor replaced = ad::straight_through(z, {10, 20});
  CHECK(values(replaced) == std::vector<double>{10, 20});
  ad::backward(ad::sum_all(ad::square(replaced)));
  // gradient evaluated at the replaced values, passed through unchanged
  CHECK(grads(z) == std::vector<double>{20, 40});
}

TEST_CASE("finite-difference suite over every differentiable op") {
  for (const GradientCase& c : gradient_cases()) {
    if (c.name.rfind("composed", 0) == 0) continue;  // exercised in the trainer tests
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) worst = std::max(worst, c.run(seed));
    INFO(c.name << " worst relative error " << worst);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("tape replay is bitwise deterministic") {
  const auto run = [] {
    std::mt19937_64 rng(17);
    Tensor w = random_tensor({4, 3}, rng, -1, 1);
    const Tensor x = random_tensor({2, 3, 6}, rng, -1, 1, false);
    const Tensor y = ad::leaky_relu(ad::conv1d_pointwise(x, w), 0.2);
    ad::backward(ad::sum_all(ad::square(ad::std(y, 2, 1e-5))));
    return std::pair{values(y), grads(w)};
  };
  const auto a = run();
  const auto b = run();
  CHECK(std::memcmp(a.first.data(), b.first.data(), a.first.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.second.data(), b.second.data(), a.second.size() * sizeof(double)) == 0);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> p = {Tensor::from_data({2}, {1.5, -2}, true)};
    p[0].mutable_grad();
    ad::AdamState state;
    state.learning_rate = 0.1;
    ad::adam_step(p, state);
    CHECK(values(p[0]) == std::vector<double>{1.5, -2});
  }
  SUBCASE("descent on w^2") {
    std::vector<Tensor> p = {Tensor::scalar(1.0, true)};
    ad::AdamState state;
    state.learning_rate = 0.1;
    ad::backward(ad::square(p[0]));
    ad::adam_step(p, state);
    CHECK(std::abs(p[0].item()) < 1.0);
  }
  SUBCASE("converges on (w - 3)^2") {
    std::vector<Tensor> p = {Tensor::scalar(0.0, true)};
    ad::AdamState state;
    state.learning_rate = 0.1;
    for (int i = 0; i < 1000; ++i) {
      p[0].zero_grad();
      ad::backward(ad::square(ad::add_scalar(p[0], -3.0)));
      ad::adam_step(p, state);
    }
    CHECK(std::abs(p[0].item() - 3.0) < 1e-2);
    CHECK(state.first_moment[0].size() == 1);
    CHECK(state.step == 1000);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto dir = scratch_dir("checkpoint");
  std::mt19937_64 rng(2);
  std::vector<ad::NamedTensor> saved = {{"a.weight", random_tensor({3, 2}, rng, -1, 1)},
                                        {"a.bias", random_tensor({3}, rng, -1, 1)}};
  const std::string prefix = (dir / "ck").string();
  ad::save_checkpoint(prefix, saved, 12);
  CHECK(std::filesystem::exists(prefix + ".bin"));
  CHECK(std::filesystem::exists(prefix + ".json"));

  const ad::Checkpoint ck = ad::load_checkpoint(prefix);
  CHECK(ck.step == 12);
  REQUIRE(ck.tensors.size() == 2);
  CHECK(ck.tensors[0].first == "a.weight");
  CHECK(ck.tensors[0].second.shape() == ad::Shape{3, 2});

  std::vector<ad::NamedTensor> target = {{"a.weight", Tensor::zeros({3, 2}, true)}, {"a.bias", Tensor::zeros({3}, true)}};
  ad::restore_parameters(ck, target);
  CHECK(values(target[0].second) == values(saved[0].second));
  CHECK(values(target[1].second) == values(saved[1].second));

  std::vector<ad::NamedTensor> wrong = {{"a.weight", Tensor::zeros({2, 3}, true)}};
  CHECK_THROWS(ad::restore_parameters(ck, wrong));
  CHECK_THROWS(ad::load_checkpoint((dir / "missing").string()));
}
