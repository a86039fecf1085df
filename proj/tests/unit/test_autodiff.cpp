#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "datr/autodiff/ops.hpp"
#include "datr/error.hpp"
#include "support/gradcheck.hpp"

using namespace datr;
using ad::Tensor;
using datr::testing::gradcheck;
using datr::testing::random_tensor;

namespace {

// sum(y ⊙ r) for a fixed random r, so every output element matters.
Tensor project(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return ad::sum(ad::mul(y, random_tensor(rng, y.shape(), false)));
}

std::size_t dim(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

void check(const char* what, const std::function<Tensor()>& f, const std::vector<ad::NamedTensor>& inputs) {
  const auto r = gradcheck(f, inputs);
  INFO(what << " worst " << r.worst);
  CHECK(r.max_rel_error < 1e-4);
}

std::vector<double> triple_loop(const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.rows() * b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out[i * b.cols() + j] += a.at(i, k) * b.at(k, j);
  return out;
}

}  // namespace

TEST_CASE("matmul values") {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor m({2, 2}, {1, 2, 3, 4});
  CHECK(ad::matmul(eye, m).data()[3] == 4.0);
  CHECK(ad::matmul(Tensor({1, 2}, {1, 0}), Tensor({2, 1}, {0, 1})).item() == 0.0);

  std::mt19937_64 rng(7);
  const auto a = random_tensor(rng, {3, 4}, false), b = random_tensor(rng, {4, 2}, false);
  const auto c = ad::matmul(a, b);
  const auto ref = triple_loop(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  const auto nt = ad::matmul_nt(a, ad::transpose(b));
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(nt.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("shape mismatch names both shapes") {
  try {
    ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::add(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), DimensionError);
  CHECK_THROWS_AS(ad::concat_rows(std::vector<Tensor>{Tensor::zeros({1, 2}), Tensor::zeros({1, 3})}),
                  DimensionError);
}

TEST_CASE("softmax rows") {
  const auto s = ad::softmax_rows(Tensor({3, 3}, {0, 0, 0, 1000, 0, 0, 1, 2, 3}));
  CHECK(s.at(0, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(s.at(1, 0) == doctest::Approx(1.0));
  CHECK(s.at(1, 1) == doctest::Approx(0.0));
  CHECK(s.at(2, 0) == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(s.at(2, 1) == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(s.at(2, 2) == doctest::Approx(0.66524).epsilon(1e-4));

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor(rng, {4, 7}, false, 30.0);
    const auto y = ad::softmax_rows(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) total += y.at(r, c);
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("non-finite values raise NumericError") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ad::softmax_rows(Tensor({1, 2}, {nan, 0.0})), NumericError);
  CHECK_THROWS_AS(ad::exp(Tensor({1, 1}, {1000.0})), NumericError);
  CHECK_THROWS_AS(ad::div_by_scalar(Tensor({1, 1}, {1.0}), Tensor::scalar(0.0)), NumericError);
  CHECK_THROWS_AS(ad::l2_normalize_rows(Tensor::zeros({1, 4})), ZeroNormError);
}

TEST_CASE("relu and conv lengths") {
  const auto r = ad::relu(Tensor({1, 3}, {-1, 0, 2}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 0.0);
  CHECK(r.data()[2] == 2.0);
  CHECK(ad::conv1d_output_length(32, 3, 2, 1) == 16);
  CHECK(ad::conv1d_output_length(1, 3, 2, 1) == 1);
  CHECK(ad::conv1d_output_length(1, 5, 2, 0) == 0);
  CHECK_THROWS_AS(ad::conv1d(Tensor::zeros({1, 2}), Tensor::zeros({5, 2, 2}), 2, 0), DimensionError);
  CHECK(ad::conv1d(Tensor::zeros({32, 2}), Tensor::zeros({3, 2, 4}), 2, 1).shape() == ad::Shape{16, 4});
}

TEST_CASE("conv1d matches a direct sum") {
  std::mt19937_64 rng(11);
  const auto x = random_tensor(rng, {7, 3}, false), k = random_tensor(rng, {3, 3, 2}, false);
  const auto y = ad::conv1d(x, k, 2, 1);
  REQUIRE(y.shape() == ad::Shape{4, 2});
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        const long src = static_cast<long>(2 * t + j) - 1;
        if (src < 0 || src >= 7) continue;
        for (std::size_t i = 0; i < 3; ++i) acc += x.at(static_cast<std::size_t>(src), i) * k.data()[(j * 3 + i) * 2 + o];
      }
      CHECK(y.at(t, o) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward basics") {
  auto x = Tensor({2, 2}, {1, -2, 3, 0.5}, true);
  {
    ad::Tape tape;
    tape.backward(ad::sum(x));
  }
  for (auto g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  {
    ad::Tape tape;
    tape.backward(ad::scale(ad::sum(ad::mul(x, x)), 0.5));
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(x.data()[i]));

  // A second backward without zero_grad accumulates.
  {
    ad::Tape tape;
    tape.backward(ad::sum(x));
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(x.data()[i] + 1.0));

  ad::Tape tape;
  CHECK_THROWS_AS(tape.backward(ad::mul(x, x)), ContractError);
}

TEST_CASE("no tape means no history") {
  auto x = Tensor({1, 2}, {1, 2}, true);
  const auto y = ad::sum(ad::mul(x, x));
  CHECK(y.node()->parents.empty());
  ad::Tape tape;
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("primitive gradients over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    const auto m = dim(rng, 1, 4), k = dim(rng, 1, 5), n = dim(rng, 1, 4);
    auto a = random_tensor(rng, {m, k}), b = random_tensor(rng, {k, n}), c = random_tensor(rng, {m, k});
    auto bt = random_tensor(rng, {n, k}), bias = random_tensor(rng, {1, k});
    auto s = Tensor::scalar(0.5 + std::uniform_real_distribution<double>(0.0, 2.0)(rng), true);
    auto gain = random_tensor(rng, {1, k}), shift = random_tensor(rng, {1, k});

    check("matmul", [&] { return project(ad::matmul(a, b), seed); }, {{"a", a}, {"b", b}});
    check("matmul_nt", [&] { return project(ad::matmul_nt(a, bt), seed); }, {{"a", a}, {"bt", bt}});
    check("transpose", [&] { return project(ad::transpose(a), seed); }, {{"a", a}});
    check("add", [&] { return project(ad::add(a, c), seed); }, {{"a", a}, {"c", c}});
    check("sub", [&] { return project(ad::sub(a, c), seed); }, {{"a", a}, {"c", c}});
    check("mul", [&] { return project(ad::mul(a, c), seed); }, {{"a", a}, {"c", c}});
    check("add_row", [&] { return project(ad::add_row(a, bias), seed); }, {{"a", a}, {"bias", bias}});
    check("scale", [&] { return project(ad::scale(a, -1.7), seed); }, {{"a", a}});
    check("add_scalar", [&] { return project(ad::add_scalar(a, 0.3), seed); }, {{"a", a}});
    check("mul_by_scalar", [&] { return project(ad::mul_by_scalar(a, s), seed); }, {{"a", a}, {"s", s}});
    check("div_by_scalar", [&] { return project(ad::div_by_scalar(a, s), seed); }, {{"a", a}, {"s", s}});
    check("relu", [&] { return project(ad::relu(a), seed); }, {{"a", a}});
    check("exp", [&] { return project(ad::exp(a), seed); }, {{"a", a}});
    check("clamp", [&] { return project(ad::clamp(a, -0.5, 0.7), seed); }, {{"a", a}});
    check("softmax", [&] { return project(ad::softmax_rows(a), seed); }, {{"a", a}});
    check("log_softmax", [&] { return project(ad::log_softmax_rows(a), seed); }, {{"a", a}});
    check("layer_norm", [&] { return project(ad::layer_norm_rows(a, gain, shift), seed); },
          {{"a", a}, {"gain", gain}, {"shift", shift}});
    check("l2_normalize", [&] { return project(ad::l2_normalize_rows(a), seed); }, {{"a", a}});
    check("concat_last_dim", [&] { return project(ad::concat_last_dim(std::vector<Tensor>{a, c}), seed); },
          {{"a", a}, {"c", c}});
    check("concat_rows", [&] { return project(ad::concat_rows(std::vector<Tensor>{a, c}), seed); },
          {{"a", a}, {"c", c}});
    const auto lo = dim(rng, 0, k - 1);
    const auto hi = dim(rng, lo + 1, k);
    check("slice_cols", [&] { return project(ad::slice_cols(a, lo, hi), seed); }, {{"a", a}});
    std::vector<std::size_t> picks;
    for (int i = 0; i < 5; ++i) picks.push_back(dim(rng, 0, m - 1));
    check("gather_rows", [&] { return project(ad::gather_rows(a, picks), seed); }, {{"a", a}});
    auto sq = random_tensor(rng, {m, m});
    check("diagonal", [&] { return project(ad::diagonal(sq), seed); }, {{"sq", sq}});
    check("mean axis 0", [&] { return project(ad::mean_over_axis(a, 0), seed); }, {{"a", a}});
    check("mean axis 1", [&] { return project(ad::mean_over_axis(a, 1), seed); }, {{"a", a}});
    check("mean", [&] { return ad::mean(ad::mul(a, c)); }, {{"a", a}, {"c", c}});

    const auto t = dim(rng, 1, 9), din = dim(rng, 1, 3), dout = dim(rng, 1, 3);
    auto x = random_tensor(rng, {t, din}), kern = random_tensor(rng, {3, din, dout});
    check("conv1d", [&] { return project(ad::conv1d(x, kern, 2, 1), seed); }, {{"x", x}, {"kern", kern}});
  }
}

TEST_CASE("identical inputs give bit-identical values") {
  std::mt19937_64 r1(5), r2(5);
  const auto a1 = random_tensor(r1, {6, 6}, false), a2 = random_tensor(r2, {6, 6}, false);
  const auto y1 = ad::layer_norm_rows(ad::softmax_rows(ad::matmul(a1, a1)), Tensor::zeros({1, 6}),
                                      Tensor::zeros({1, 6}));
  const auto y2 = ad::layer_norm_rows(ad::softmax_rows(ad::matmul(a2, a2)), Tensor::zeros({1, 6}),
                                      Tensor::zeros({1, 6}));
  CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}
