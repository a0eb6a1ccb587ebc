// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <span>

#include "mmfusion/gradcheck.hpp"
#include "mmfusion/ops.hpp"
#include "oracles.hpp"

using mmf::Rng;
using mmf::Shape;
using mmf::Tensor;
using oracle::random_tensor;

namespace {

// Weighted sum so every output element carries a distinct upstream gradient.
Tensor weighted_sum(const Tensor& y, const Tensor& weights) { return mmf::sum(mmf::mul(y, weights)); }

bool throws_with(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const std::exception& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

}  // namespace

TEST_CASE("matmul") {
  SUBCASE("identity") {
    auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    auto c = mmf::matmul(eye, b);
    CHECK(c.shape() == Shape{2, 2});
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{3, 4, 5, 6});
  }
  SUBCASE("dot product") {
    auto c = mmf::matmul(Tensor::from_data({1, 2}, {1, 2}), Tensor::from_data({2, 1}, {3, 4}));
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c.item() == 11.0);
  }
  SUBCASE("gradient of sum equals ones * b^T and finite differences") {
    Rng rng(3);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto loss = mmf::sum(mmf::matmul(a, b));
    loss.backward();
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < 4; ++k) {
        const double expected = b.at({k, 0}) + b.at({k, 1});
        CHECK(a.grad()[i * 4 + k] == doctest::Approx(expected).epsilon(1e-14));
      }
    auto f = [&] { return mmf::sum(mmf::matmul(a, b)).item(); };
    CHECK(oracle::max_rel_error(a.grad(), oracle::fd_gradient(f, a)) < 1e-6);
    CHECK(oracle::max_rel_error(b.grad(), oracle::fd_gradient(f, b)) < 1e-6);
  }
  SUBCASE("batched forms agree with per-sample products") {
    Rng rng(4);
    auto a = random_tensor({3, 2, 4}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto bb = random_tensor({3, 4, 5}, rng);
    auto shared = mmf::matmul(a, w);
    auto batched = mmf::matmul(a, bb);
    CHECK(shared.shape() == Shape{3, 2, 5});
    for (std::size_t i = 0; i < 3; ++i) {
      oracle::Mat ai(2, 4, a.data().subspan(i * 8, 8));
      auto ref1 = oracle::matmul(ai, oracle::Mat(4, 5, w.data()));
      auto ref2 = oracle::matmul(ai, oracle::Mat(4, 5, bb.data().subspan(i * 20, 20)));
      CHECK(oracle::max_abs_diff(shared.data().subspan(i * 10, 10), ref1.v) < 1e-14);
      CHECK(oracle::max_abs_diff(batched.data().subspan(i * 10, 10), ref2.v) < 1e-14);
    }
  }
  SUBCASE("shape mismatch names both shapes") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({4, 2});
    CHECK(throws_with([&] { (void)mmf::matmul(a, b); }, "[2x3] and [4x2]"));
  }
}

namespace {

// Direct nested-loop convolution: forward and gradients for loss = sum(y * w).
struct ConvOracle {
  std::vector<double> y, dx, dk, db;
};

ConvOracle conv_oracle(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride, const Tensor& upstream) {
  const std::size_t T = x.dim(0), C = x.dim(1), W = k.dim(0), F = k.dim(2);
  const std::size_t out_t = (T - W) / stride + 1;
  ConvOracle o;
  o.y.assign(out_t * F, 0.0);
  o.dx.assign(T * C, 0.0);
  o.dk.assign(W * C * F, 0.0);
  o.db.assign(F, 0.0);
  for (std::size_t t = 0; t < out_t; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      double s = b.data()[f];
      const double g = upstream.data()[t * F + f];
      for (std::size_t w = 0; w < W; ++w)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t xi = (t * stride + w) * C + c;
          const std::size_t ki = (w * C + c) * F + f;
          s += x.data()[xi] * k.data()[ki];
          o.dx[xi] += g * k.data()[ki];
          o.dk[ki] += g * x.data()[xi];
        }
      o.y[t * F + f] = s;
      o.db[f] += g;
    }
  return o;
}

}  // namespace

TEST_CASE("conv1d") {
  SUBCASE("output length") {
    auto y = mmf::conv1d(Tensor::zeros({10, 1}), Tensor::zeros({2, 1, 3}), Tensor::zeros({3}), 1);
    CHECK(y.shape() == Shape{9, 3});
    auto y2 = mmf::conv1d(Tensor::zeros({10, 1}), Tensor::zeros({3, 1, 3}), Tensor::zeros({3}), 2);
    CHECK(y2.shape() == Shape{4, 3});
  }
  SUBCASE("zero input yields the bias") {
    Rng rng(1);
    auto bias = random_tensor({4}, rng);
    auto y = mmf::conv1d(Tensor::zeros({6, 2}), random_tensor({2, 2, 4}, rng), bias, 1);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t f = 0; f < 4; ++f) CHECK(y.at({t, f}) == bias.data()[f]);
  }
  SUBCASE("matches nested-loop oracle including gradients") {
    for (std::size_t stride : {1u, 2u}) {
      Rng rng(7 + stride);
      auto x = random_tensor({8, 3}, rng);
      auto k = random_tensor({2, 3, 4}, rng);
      auto b = random_tensor({4}, rng);
      const std::size_t out_t = (8 - 2) / stride + 1;
      auto up = random_tensor({out_t, 4}, rng, false);
      auto y = mmf::conv1d(x, k, b, stride);
      weighted_sum(y, up).backward();
      auto ref = conv_oracle(x, k, b, stride, up);
      CHECK(oracle::max_rel_error(y.data(), ref.y) < 1e-6);
      CHECK(oracle::max_rel_error(x.grad(), ref.dx) < 1e-6);
      CHECK(oracle::max_rel_error(k.grad(), ref.dk) < 1e-6);
      CHECK(oracle::max_rel_error(b.grad(), ref.db) < 1e-6);
    }
  }
  SUBCASE("batched input equals per-sample convolution") {
    Rng rng(9);
    auto x = random_tensor({3, 7, 2}, rng);
    auto k = random_tensor({3, 2, 5}, rng);
    auto b = random_tensor({5}, rng);
    auto y = mmf::conv1d(x, k, b, 1);
    CHECK(y.shape() == Shape{3, 5, 5});
    for (std::size_t i = 0; i < 3; ++i) {
      auto xi = mmf::reshape(mmf::slice(x, 0, i, 1), {7, 2});
      auto yi = mmf::conv1d(xi, k, b, 1);
      CHECK(oracle::max_abs_diff(yi.data(), y.data().subspan(i * 25, 25)) < 1e-14);
    }
  }
  SUBCASE("input shorter than kernel") {
    CHECK_THROWS_AS((void)mmf::conv1d(Tensor::zeros({1, 1}), Tensor::zeros({2, 1, 1}), Tensor::zeros({1})),
                    mmf::ShapeError);
  }
}

TEST_CASE("max_pool1d") {
  SUBCASE("basic") {
    auto y = mmf::max_pool1d(Tensor::from_data({4, 1}, {1, 5, 3, 2}), 2);
    CHECK(y.shape() == Shape{2, 1});
    CHECK(y.at({0, 0}) == 5);
    CHECK(y.at({1, 0}) == 3);
  }
  SUBCASE("ties route gradient to the earliest element") {
    auto x = Tensor::full({6, 1}, 2.0, true);
    auto y = mmf::max_pool1d(x, 3);
    mmf::sum(y).backward();
    CHECK(y.at({0, 0}) == 2.0);
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 0, 0, 1, 0, 0});
  }
  SUBCASE("scan oracle with trailing element dropped") {
    Rng rng(5);
    auto x = random_tensor({9, 2}, rng);
    auto up = random_tensor({4, 2}, rng, false);
    auto y = mmf::max_pool1d(x, 2);
    CHECK(y.shape() == Shape{4, 2});
    weighted_sum(y, up).backward();
    std::vector<double> dx(18, 0.0);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 0; t < 4; ++t) {
        std::size_t best = 2 * t;
        for (std::size_t w = 2 * t; w < 2 * t + 2; ++w)
          if (x.at({w, c}) > x.at({best, c})) best = w;
        CHECK(y.at({t, c}) == x.at({best, c}));
        dx[best * 2 + c] += up.at({t, c});
      }
    CHECK(x.grad()[16] == 0.0);
    CHECK(x.grad()[17] == 0.0);
    CHECK(oracle::max_abs_diff(x.grad(), dx) == 0.0);
  }
  SUBCASE("window larger than input") { CHECK_THROWS((void)mmf::max_pool1d(Tensor::zeros({2, 1}), 3)); }
}

TEST_CASE("global_avg_pool") {
  auto y = mmf::global_avg_pool(Tensor::from_data({2, 2}, {1, 3, 5, 7}));
  CHECK(y.shape() == Shape{2});
  CHECK(y.data()[0] == 3.0);
  CHECK(y.data()[1] == 5.0);

  auto single = Tensor::from_data({1, 3}, {4, -1, 2});
  auto ys = mmf::global_avg_pool(single);
  CHECK(std::vector<double>(ys.data().begin(), ys.data().end()) == std::vector<double>{4, -1, 2});

  Rng rng(2);
  auto x = random_tensor({50, 8}, rng);
  auto m = mmf::global_avg_pool(x);
  for (std::size_t c = 0; c < 8; ++c) {
    double s = 0.0;
    for (std::size_t t = 0; t < 50; ++t) s += x.at({t, c});
    CHECK(std::abs(m.data()[c] - s / 50.0) < 1e-12);
  }
  mmf::sum(m).backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 50.0).epsilon(1e-15));

  CHECK_THROWS_AS((void)mmf::global_avg_pool(Tensor::zeros({0, 3})), mmf::ShapeError);
}

TEST_CASE("activation") {
  SUBCASE("relu value and gradient") {
    auto x = Tensor::from_data({2}, {-2.0, 2.0}, true);
    auto y = mmf::relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 2.0);
    mmf::sum(y).backward();
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
  }
  SUBCASE("softmax of a constant row is uniform") {
    for (std::size_t n : {1u, 3u, 7u}) {
      auto y = mmf::softmax(Tensor::full({2, n}, 4.2));
      for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / static_cast<double>(n)).epsilon(1e-15));
    }
  }
  SUBCASE("softmax overflow guard") {
    auto y = mmf::softmax(Tensor::from_data({2}, {1000.0, 1000.5}));
    // Extended-precision reference: 1 / (1 + e^{0.5}).
    const long double p0 = 1.0L / (1.0L + std::exp(0.5L));
    CHECK(std::isfinite(y.data()[0]));
    CHECK(std::abs(y.data()[0] - static_cast<double>(p0)) < 1e-15);
    CHECK(std::abs(y.data()[0] + y.data()[1] - 1.0) < 1e-15);
  }
  SUBCASE("softmax rows sum to one and are positive") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t w = 1 + rng.uniform_index(12);
      auto y = mmf::softmax(random_tensor({3, w}, rng, false, -30.0, 30.0));
      for (std::size_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
          CHECK(y.at({r, j}) > 0.0);
          s += y.at({r, j});
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("concat and slice") {
  Rng rng(6);
  SUBCASE("last axis widths add") {
    std::vector<Tensor> parts{random_tensor({2, 4}, rng), random_tensor({2, 6}, rng)};
    CHECK(mmf::concat(parts, -1).shape() == Shape{2, 10});
  }
  SUBCASE("single input is the identity") {
    auto x = random_tensor({3, 2}, rng);
    std::vector<Tensor> parts{x};
    auto y = mmf::concat(parts, 0);
    CHECK(oracle::max_abs_diff(x.data(), y.data()) == 0.0);
  }
  SUBCASE("round trip through complementary slices") {
    std::vector<Tensor> parts{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
    auto y = mmf::concat(parts, 0);
    CHECK(y.shape() == Shape{6, 3});
    for (std::size_t i = 0; i < 3; ++i) {
      auto back = mmf::slice(y, 0, 2 * i, 2);
      CHECK(oracle::max_abs_diff(back.data(), parts[i].data()) == 0.0);
    }
    auto up = random_tensor({6, 3}, rng, false);
    weighted_sum(y, up).backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(oracle::max_abs_diff(parts[i].grad(), up.data().subspan(6 * i, 6)) == 0.0);
  }
  SUBCASE("mismatch names the offending input") {
    std::vector<Tensor> parts{Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), Tensor::zeros({4, 3})};
    CHECK(throws_with([&] { (void)mmf::concat(parts, 1); }, "input 2"));
  }
  SUBCASE("property: random splits of random tensors") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t rows = 1 + rng.uniform_index(4), cols = 2 + rng.uniform_index(8);
      auto x = random_tensor({rows, cols}, rng, false);
      const std::size_t cut = 1 + rng.uniform_index(cols - 1);
      std::vector<Tensor> halves{mmf::slice(x, 1, 0, cut), mmf::slice(x, 1, cut, cols - cut)};
      CHECK(oracle::max_abs_diff(mmf::concat(halves, 1).data(), x.data()) == 0.0);
    }
  }
}

TEST_CASE("embedding_lookup") {
  Rng rng(8);
  auto table = random_tensor({5, 3}, rng);
  SUBCASE("repeated ids accumulate") {
    std::vector<std::int32_t> ids{0, 0};
    auto y = mmf::embedding_lookup(table, ids);
    CHECK(y.shape() == Shape{2, 3});
    auto up = random_tensor({2, 3}, rng, false);
    weighted_sum(y, up).backward();
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(y.at({0, j}) == table.at({0, j}));
      CHECK(y.at({1, j}) == table.at({0, j}));
      CHECK(table.grad()[j] == doctest::Approx(up.at({0, j}) + up.at({1, j})));
    }
    for (std::size_t i = 3; i < 15; ++i) CHECK(table.grad()[i] == 0.0);
  }
  SUBCASE("empty sequence") {
    auto y = mmf::embedding_lookup(table, std::span<const std::int32_t>{});
    CHECK(y.shape() == Shape{0, 3});
  }
  SUBCASE("finite differences with repeats") {
    std::vector<std::int32_t> ids{4, 1, 4, 2, 1};
    auto up = random_tensor({5, 3}, rng, false);
    auto f = [&] { return weighted_sum(mmf::embedding_lookup(table, ids), up).item(); };
    weighted_sum(mmf::embedding_lookup(table, ids), up).backward();
    CHECK(oracle::max_rel_error(table.grad(), oracle::fd_gradient(f, table)) < 1e-6);
  }
  SUBCASE("out of range id reports position") {
    std::vector<std::int32_t> ids{1, 9};
    CHECK(throws_with([&] { (void)mmf::embedding_lookup(table, ids); }, "position 1"));
  }
}

TEST_CASE("dropout") {
  Rng rng(10);
  auto x = random_tensor({100}, rng);
  CHECK(mmf::dropout(x, 0.0, true, rng).node() == x.node());
  CHECK(mmf::dropout(x, 0.5, false, rng).node() == x.node());

  auto ones = Tensor::full({10000}, 1.0);
  auto y = mmf::dropout(ones, 0.5, true, rng);
  std::size_t survivors = 0;
  double total = 0.0;
  for (double v : y.data()) {
    if (v != 0.0) {
      ++survivors;
      CHECK(v == 2.0);
    }
    total += v;
  }
  const double frac = static_cast<double>(survivors) / 10000.0;
  CHECK(frac >= 0.47);
  CHECK(frac <= 0.53);
  CHECK(std::abs(total / 10000.0 - 1.0) < 0.05);

  CHECK_THROWS_AS((void)mmf::dropout(x, 1.0, true, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)mmf::dropout(x, -0.1, true, rng), std::invalid_argument);

  Rng r1(42), r2(42);
  auto a = mmf::dropout(ones, 0.3, true, r1);
  auto b = mmf::dropout(ones, 0.3, true, r2);
  CHECK(oracle::max_abs_diff(a.data(), b.data()) == 0.0);
}

TEST_CASE("cross_entropy_loss") {
  SUBCASE("confident correct logits") {
    std::vector<int> labels{2, 0};
    auto logits = Tensor::from_data({2, 3}, {0, 0, 1e6, 1e6, 0, 0});
    CHECK(mmf::cross_entropy_loss(logits, labels).item() == doctest::Approx(0.0));
  }
  SUBCASE("uniform logits give ln(c)") {
    std::vector<int> labels{1, 3, 0};
    auto loss = mmf::cross_entropy_loss(Tensor::full({3, 5}, 0.7), labels);
    CHECK(loss.item() == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  }
  SUBCASE("finite differences") {
    Rng rng(12);
    auto logits = random_tensor({4, 8}, rng, true, -3, 3);
    std::vector<int> labels{0, 7, 3, 3};
    mmf::cross_entropy_loss(logits, labels).backward();
    auto f = [&] { return mmf::cross_entropy_loss(logits, labels).item(); };
    CHECK(oracle::max_rel_error(logits.grad(), oracle::fd_gradient(f, logits)) < 1e-5);
  }
  SUBCASE("label out of range") {
    std::vector<int> labels{3};
    CHECK_THROWS_AS((void)mmf::cross_entropy_loss(Tensor::zeros({1, 3}), labels), std::out_of_range);
  }
}

TEST_CASE("layer_norm gradients") {
  Rng rng(13);
  auto x = random_tensor({3, 6}, rng);
  auto g = random_tensor({6}, rng);
  auto b = random_tensor({6}, rng);
  auto up = random_tensor({3, 6}, rng, false);
  auto f = [&] { return weighted_sum(mmf::layer_norm(x, g, b), up).item(); };
  weighted_sum(mmf::layer_norm(x, g, b), up).backward();
  CHECK(oracle::max_rel_error(x.grad(), oracle::fd_gradient(f, x)) < 1e-6);
  CHECK(oracle::max_rel_error(g.grad(), oracle::fd_gradient(f, g)) < 1e-6);
  CHECK(oracle::max_rel_error(b.grad(), oracle::fd_gradient(f, b)) < 1e-6);
}

TEST_CASE("backward") {
  SUBCASE("sum of a leaf") {
    auto x = Tensor::from_data({3}, {1, 2, 3}, true);
    mmf::sum(x).backward();
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("unused parameter keeps zero gradient") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    auto unused = Tensor::from_data({2}, {3, 4}, true);
    mmf::sum(x).backward();
    for (double g : unused.grad()) CHECK(g == 0.0);
  }
  SUBCASE("non-scalar loss") { CHECK_THROWS_AS(Tensor::zeros({2}, true).backward(), mmf::ShapeError); }
  SUBCASE("second backward without zeroing doubles gradients exactly") {
    Rng rng(14);
    auto x = random_tensor({4, 3}, rng);
    auto w = random_tensor({3, 2}, rng);
    auto loss = mmf::sum(mmf::tanh(mmf::matmul(x, w)));
    loss.backward();
    std::vector<double> once(w.grad().begin(), w.grad().end());
    loss.backward();
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0 * once[i]);
  }
  SUBCASE("composite conv-relu-pool-dense-cross-entropy graph") {
    Rng rng(15);
    auto x = random_tensor({2, 9, 3}, rng, false);
    auto k = random_tensor({2, 3, 4}, rng);
    auto kb = random_tensor({4}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto wb = random_tensor({5}, rng);
    std::vector<int> labels{1, 4};
    auto f = [&] {
      auto h = mmf::global_avg_pool(mmf::relu(mmf::conv1d(x, k, kb, 1)));
      return mmf::cross_entropy_loss(mmf::add(mmf::matmul(h, w), wb), labels);
    };
    f().backward();
    auto fv = [&] { return f().item(); };
    for (auto* p : {&k, &kb, &w, &wb}) CHECK(oracle::max_rel_error(p->grad(), oracle::fd_gradient(fv, *p)) < 1e-4);
  }
}

TEST_CASE("grad_check") {
  SUBCASE("linear model is exact") {
    auto w = Tensor::from_data({1, 1}, {0.7}, true);
    auto x = Tensor::from_data({1, 1}, {1.9});
    auto r = mmf::grad_check([&] { return mmf::sum(mmf::matmul(x, w)); }, std::vector<mmf::NamedTensor>{{"w", w}});
    CHECK(r.per_parameter_errors.size() == 1);
    CHECK(r.max_relative_error < 1e-10);
  }
  SUBCASE("relu far from the kink") {
    auto x = Tensor::from_data({2}, {1.5, -2.0}, true);
    auto r = mmf::grad_check([&] { return mmf::sum(mmf::relu(x)); }, std::vector<mmf::NamedTensor>{{"x", x}});
    CHECK(r.max_relative_error < 1e-7);
  }
  SUBCASE("perturbations across a kink are rejected") {
    auto x = Tensor::from_data({2}, {1e-9, 1.0}, true);
    auto r = mmf::grad_check([&] { return mmf::sum(mmf::relu(x)); }, std::vector<mmf::NamedTensor>{{"x", x}});
    CHECK(r.rejected == 1);
    CHECK(r.per_parameter_errors.size() == 1);
  }
  SUBCASE("detects a wrong gradient") {
    // f(x) = x^2 computed through mul, but the analytic path is broken by detaching one factor.
    auto x = Tensor::from_data({1}, {2.0}, true);
    auto r = mmf::grad_check([&] { return mmf::sum(mmf::mul(x, x.detach())); },
                             std::vector<mmf::NamedTensor>{{"x", x}});
    CHECK(r.max_relative_error > 0.4);
  }
  SUBCASE("ridders resolves gradients far below the loss scale") {
    auto x = Tensor::from_data({3}, {0.3, -1.1, 2.0}, true);
    auto offset = Tensor::from_data({3}, {1.0, 0.5, 0.25});
    auto f = [&] { return mmf::sum(mmf::add(mmf::scale(mmf::activation(x, mmf::Activation::kTanh), 1e-10), offset)); };
    const std::vector<mmf::NamedTensor> p{{"x", x}};
    auto plain = mmf::grad_check(f, p);
    auto extrapolated = mmf::grad_check(f, p, {.stencil = mmf::DifferenceStencil::kRidders});
    // 1e-10 gradients sit at the rounding floor of a 1e-4 step.
    CHECK(plain.max_relative_error > 1e-4);
    CHECK(extrapolated.max_relative_error < 1e-5);
  }
  SUBCASE("ridders steps past a nearby kink and rejects one at the point") {
    auto x = Tensor::from_data({3}, {5e-3, 1e-9, -0.7}, true);
    auto f = [&] { return mmf::sum(mmf::activation(mmf::mul(x, x), mmf::Activation::kTanh)); };
    auto g = [&] { return mmf::add(f(), mmf::sum(mmf::relu(x))); };
    auto r = mmf::grad_check(g, std::vector<mmf::NamedTensor>{{"x", x}}, {.stencil = mmf::DifferenceStencil::kRidders});
    CHECK(r.rejected == 1);
    REQUIRE(r.per_parameter_errors.size() == 2);
    CHECK(r.max_relative_error < 1e-8);
  }
}

TEST_CASE("property: elementwise and structural ops pass finite differences") {
  Rng rng(16);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.uniform_index(4), cols = 1 + rng.uniform_index(5);
    auto a = random_tensor({rows, cols}, rng);
    auto b = random_tensor({rows, cols}, rng);
    auto bias = random_tensor({cols}, rng);
    auto up = random_tensor({rows, cols}, rng, false);
    std::vector<std::function<Tensor()>> graphs{
        [&] { return weighted_sum(mmf::add(a, bias), up); },
        [&] { return weighted_sum(mmf::sub(a, b), up); },
        [&] { return weighted_sum(mmf::mul(a, b), up); },
        [&] { return weighted_sum(mmf::sigmoid(a), up); },
        [&] { return weighted_sum(mmf::tanh(a), up); },
        [&] { return weighted_sum(mmf::softmax(a), up); },
        [&] { return weighted_sum(mmf::transpose(mmf::transpose(a)), up); },
        [&] { return weighted_sum(mmf::scale(a, 1.7), up); },
    };
    for (auto& g : graphs) {
      auto r = mmf::grad_check(g, std::vector<mmf::NamedTensor>{{"a", a}, {"b", b}, {"bias", bias}}, {.epsilon = 1e-6});
      CHECK(r.max_relative_error < 1e-4);
      ++checked;
    }
  }
  CHECK(checked == 800);
}
