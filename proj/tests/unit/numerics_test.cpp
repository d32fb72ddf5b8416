#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "seqxrec/gradcheck.hpp"
#include "seqxrec/ops.hpp"
#include "seqxrec/optim.hpp"
#include "seqxrec/rng.hpp"

using namespace seqxrec;
using namespace seqxrec::num;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = static_cast<Real>(rng.normal() * scale);
  return t;
}

// Central differences computed directly, without grad_check.
std::vector<double> finite_difference(const std::function<double()>& f, Tensor t, double eps) {
  std::vector<double> out(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const Real saved = t.at(i);
    t.at(i) = saved + eps;
    const double up = f();
    t.at(i) = saved - eps;
    const double down = f();
    t.at(i) = saved;
    out[i] = (up - down) / (2 * eps);
  }
  return out;
}

double max_rel(const std::vector<double>& a, std::span<const Real> b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(double(b[i])), 1e-8});
    worst = std::max(worst, std::abs(a[i] - double(b[i])) / denom);
  }
  return worst;
}

}  // namespace

TEST(Rng, MatchesReferenceStream) {
  // Reference values from an independent splitmix64 + xoshiro256** script.
  Rng zero(0);
  EXPECT_EQ(zero.next_u64(), 0x99ec5f36cb75f2b4ULL);
  EXPECT_EQ(zero.next_u64(), 0xbf6e1f784956452aULL);
  EXPECT_EQ(zero.next_u64(), 0x1a5f849d4933e6e0ULL);
  Rng seven(7);
  EXPECT_EQ(seven.next_u64(), 0xb358faf74ef9765aULL);
  EXPECT_EQ(seven.next_u64(), 0x475c3d964f482cd2ULL);
}

TEST(Rng, DerivedStreamsAreDistinctAndStable) {
  Rng base(42);
  EXPECT_EQ(base.derive("a").next_u64(), base.derive("a").next_u64());
  EXPECT_NE(base.derive("a").next_u64(), base.derive("b").next_u64());
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(7), 7u);
  }
}

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<Real>(5)), ShapeError);
  EXPECT_THROW(Tensor::zeros({0, 3}), ShapeError);
  Tensor t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.has_grad());
}

TEST(Matmul, IdentityAndHandExpanded) {
  Tape tape;
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  const Tensor ia = matmul(tape, eye, a);
  EXPECT_EQ(std::vector<Real>(ia.values().begin(), ia.values().end()), (std::vector<Real>{1, 2, 3, 4}));
  const Tensor ab = matmul(tape, a, b);
  EXPECT_EQ(std::vector<Real>(ab.values().begin(), ab.values().end()), (std::vector<Real>{19, 22, 43, 50}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    matmul(tape, Tensor::zeros({2, 3}), Tensor::zeros({2, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2 x 3]"), std::string::npos);
    EXPECT_NE(msg.find("[2 x 2]"), std::string::npos);
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(1);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 5});
  Tape tape;
  tape.backward(sum(tape, matmul(tape, a, b)));
  auto f = [&] {
    Tape t(Tape::Mode::kInference);
    return double(sum(t, matmul(t, a, b)).item());
  };
  const auto numeric = finite_difference(f, a, 1e-6);
  EXPECT_LT(max_rel(numeric, a.grad()), 1e-5);
  // Closed form: d sum(AB) / dA_ij = sum_n B_jn.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double row = 0;
      for (std::size_t n = 0; n < 5; ++n) row += b.at(j, n);
      EXPECT_NEAR(a.grad()[i * 4 + j], row, 1e-12);
    }
}

TEST(Softmax, Examples) {
  Tape tape;
  const Tensor u = softmax(tape, Tensor::vector({0, 0, 0}), 0);
  for (Real v : u.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  const Tensor p = softmax(tape, Tensor::vector({std::log(1.0), std::log(3.0)}), 0);
  EXPECT_NEAR(p.at(0), 0.25, 1e-15);
  EXPECT_NEAR(p.at(1), 0.75, 1e-15);
}

TEST(Softmax, SlicesSumToOneAlongEitherAxis) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor(rng, {4, 7}, 10.0, false);
    Tape tape;
    const Tensor rows = softmax(tape, x, 1);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += rows.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    const Tensor cols = softmax(tape, x, 0);
    for (std::size_t j = 0; j < 7; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < 4; ++i) s += cols.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  Tape tape;
  EXPECT_THROW(softmax(tape, Tensor::zeros({3}), 1), ShapeError);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tape tape;
  const Tensor x = Tensor::full({1, 6}, Real(3.5));
  const Tensor y = layer_norm(tape, x, Tensor::full({6}, 1), Tensor::zeros({6}));
  for (Real v : y.values()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(v, 0.0);
  }
}

TEST(LayerNorm, NormalizesEachRow) {
  Rng rng(3);
  // Row variance well above eps keeps the eps bias of the variance below 1e-6.
  const Tensor x = random_tensor(rng, {5, 16}, 20.0, false);
  Tape tape;
  const Tensor y = layer_norm(tape, x, Tensor::full({16}, 1), Tensor::zeros({16}));
  for (std::size_t i = 0; i < 5; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 16; ++j) mu += y.at(i, j);
    mu /= 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y.at(i, j) - mu) * (y.at(i, j) - mu);
    var /= 16;
    EXPECT_NEAR(mu, 0.0, 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Tensor x = random_tensor(rng, {3, 8});
  Tensor g = random_tensor(rng, {8});
  Tensor b = random_tensor(rng, {8});
  const Tensor w = random_tensor(rng, {3, 8}, 1.0, false);
  auto loss = [&](Tape& t) { return sum(t, mul(t, layer_norm(t, x, g, b), w)); };
  Tape tape;
  tape.backward(loss(tape));
  auto f = [&] {
    Tape t(Tape::Mode::kInference);
    return double(loss(t).item());
  };
  EXPECT_LT(max_rel(finite_difference(f, x, 1e-6), x.grad()), 1e-5);
  EXPECT_LT(max_rel(finite_difference(f, g, 1e-6), g.grad()), 1e-5);
  EXPECT_LT(max_rel(finite_difference(f, b, 1e-6), b.grad()), 1e-5);
}

TEST(MeanPool, Examples) {
  Tape tape;
  const Tensor c = mean_pool(tape, Tensor::matrix({{2, -1}, {2, -1}, {2, -1}}));
  EXPECT_EQ(c.at(0), 2.0);
  EXPECT_EQ(c.at(1), -1.0);
  const Tensor two = mean_pool(tape, Tensor::matrix({{1, 0}, {0, 1}}));
  EXPECT_EQ(two.at(0), 0.5);
  EXPECT_EQ(two.at(1), 0.5);
  std::vector<bool> none(2, false);
  EXPECT_THROW(mean_pool(tape, Tensor::matrix({{1, 0}, {0, 1}}), &none), DomainError);
}

TEST(MeanPool, MaskedMatchesBruteForceLoop) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(9), d = 1 + rng.below(6);
    const Tensor x = random_tensor(rng, {n, d}, 1.0, false);
    std::vector<bool> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng.bernoulli(0.6);
    mask[rng.below(n)] = true;
    Tape tape;
    const Tensor pooled = mean_pool(tape, x, &mask);
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0;
      int count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        s += x.at(i, j);
        ++count;
      }
      EXPECT_NEAR(pooled.at(j), s / count, 1e-14);
    }
  }
}

TEST(Backward, PowerRuleAndLinearity) {
  Tensor x = Tensor::scalar(3, true);
  Tape tape;
  tape.backward(mul(tape, x, x));
  EXPECT_EQ(x.grad()[0], 6.0);

  Tensor v = Tensor::vector({1, -2, 5}, true);
  Tape tape2;
  tape2.backward(sum(tape2, v));
  for (Real g : v.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, RejectsNonScalarAndForeignLoss) {
  Tensor v = Tensor::vector({1, 2}, true);
  Tape tape;
  const Tensor y = scale(tape, v, 2);
  EXPECT_THROW(tape.backward(y), ShapeError);
  Tape other;
  const Tensor s = sum(other, v);
  EXPECT_THROW(tape.backward(s), Error);
}

TEST(Backward, SecondPassDoublesEveryGradientExactly) {
  Rng rng(6);
  Tensor a = random_tensor(rng, {4, 3});
  Tensor b = random_tensor(rng, {3, 4});
  Tape tape;
  // a is used three times so its gradient has several contributions.
  const Tensor h = gelu(tape, matmul(tape, a, b));
  const Tensor loss = add(tape, sum(tape, matmul(tape, h, a)), sum(tape, mul(tape, a, a)));
  tape.backward(loss);
  const std::vector<Real> once_a(a.grad().begin(), a.grad().end());
  const std::vector<Real> once_b(b.grad().begin(), b.grad().end());
  tape.backward(loss);
  for (std::size_t i = 0; i < once_a.size(); ++i) EXPECT_EQ(a.grad()[i], 2 * once_a[i]);
  for (std::size_t i = 0; i < once_b.size(); ++i) EXPECT_EQ(b.grad()[i], 2 * once_b[i]);
  zero_grads({{"a", a}, {"b", b}});
  for (Real g : a.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ChainsThroughRecordedOps) {
  Tensor x = Tensor::scalar(2, true);
  Tape tape;
  const Tensor y = scale(tape, x, 3);
  const Tensor z = scale(tape, y, 5);
  tape.backward(z);
  EXPECT_EQ(tape.size(), 2u);
  EXPECT_EQ(x.grad()[0], 15.0);
}

TEST(GradCheck, Examples) {
  Rng rng(7);
  Tensor x = random_tensor(rng, {6});
  const double sq = grad_check([&](Tape& t) { return sum(t, mul(t, x, x)); }, std::vector<Tensor>{x}, 1e-6);
  EXPECT_LT(sq, 1e-9);

  Tensor unused = random_tensor(rng, {3});
  const double zero = grad_check([&](Tape& t) { return sum(t, mul(t, x, x)); }, std::vector<Tensor>{unused}, 1e-6);
  EXPECT_EQ(zero, 0.0);

  Tensor y = Tensor::vector({-1, 2}, true);
  EXPECT_THROW(grad_check([&](Tape& t) { return sum(t, scale(t, y, std::numeric_limits<Real>::infinity())); },
                          std::vector<Tensor>{y}, 1e-6),
               DomainError);
  EXPECT_THROW(grad_check([&](Tape& t) { return sum(t, y); }, std::vector<Tensor>{y}, 0.1), DomainError);
}

TEST(GradCheck, EveryPrimitivePassesBelowOneInTenThousand) {
  Rng rng(8);
  Tensor a = random_tensor(rng, {4, 6});
  Tensor b = random_tensor(rng, {6, 6});
  Tensor c = random_tensor(rng, {5, 6});
  Tensor row = random_tensor(rng, {6});
  Tensor table = random_tensor(rng, {7, 6});
  const ParamList params = {{"a", a}, {"b", b}, {"c", c}, {"row", row}, {"table", table}};
  const std::vector<std::size_t> ids = {3, 0, 3, 6};
  auto f = [&](Tape& t) {
    Tensor h = matmul(t, a, b);                       // 4x6
    h = add_row(t, gelu(t, h), row);
    Tensor s = matmul_nt(t, h, c);                    // 4x5
    s = softmax(t, s, 1);
    Tensor e = embedding(t, table, ids);              // 4x6
    Tensor att = attention(t, h, e, mul(t, e, e), 2, true);
    Tensor pooled = mean_pool(t, concat_rows(t, {att, slice_rows(t, h, 1, 2)}));
    Tensor ls = log_sigmoid(t, reshape(t, slice_flat(t, s, 3, {2, 3}), {6}));
    Tensor ce = cross_entropy(t, matmul_nt(t, e, table), {1, -1, 4, 6});
    return add(t, add(t, sum(t, mul(t, pooled, row)), mean(t, ls)), scale(t, ce, 0.5));
  };
  const auto report = grad_check_report(f, params, 1e-6);
  EXPECT_LT(report.max_relative_error, 1e-4)
      << report.worst_param << "[" << report.worst_index << "] analytic " << report.worst_analytic
      << " numeric " << report.worst_numeric;
}

TEST(LinearSplit, MatchesScaledAffineMapSlicedPerRow) {
  Rng rng(12);
  Tensor x = random_tensor(rng, {3, 4});
  Tensor w = random_tensor(rng, {4, 10});
  Tensor b = random_tensor(rng, {10});
  Tape tape(Tape::Mode::kInference);
  const auto parts = linear_split(tape, x, w, b, {{2, 3}, {4}}, 0.5);
  ASSERT_EQ(parts.size(), 3u);
  for (std::size_t r = 0; r < 3; ++r) {
    ASSERT_EQ(parts[r][0].shape(), (Shape{2, 3}));
    ASSERT_EQ(parts[r][1].shape(), (Shape{4}));
    for (std::size_t j = 0; j < 10; ++j) {
      double expect = b.at(j);
      for (std::size_t i = 0; i < 4; ++i) expect += double(x.at(r * 4 + i)) * w.at(i * 10 + j);
      const Real got = j < 6 ? parts[r][0].at(j) : parts[r][1].at(j - 6);
      EXPECT_NEAR(got, 0.5 * expect, 1e-12);
    }
  }
  EXPECT_THROW(linear_split(tape, x, w, b, {{2, 3}}, 1.0), ShapeError);
}

TEST(LinearSplit, GradientWithUnusedOutputs) {
  Rng rng(13);
  Tensor x = random_tensor(rng, {3, 4});
  Tensor w = random_tensor(rng, {4, 10});
  Tensor b = random_tensor(rng, {10});
  auto f = [&](Tape& t) {
    const auto parts = linear_split(t, x, w, b, {{2, 3}, {4}}, 0.1);
    // Row 1 part 0 and row 2 part 1 never reach the loss.
    Tensor s = sum(t, mul(t, parts[0][0], parts[0][0]));
    s = add(t, s, sum(t, gelu(t, parts[1][1])));
    return add(t, s, sum(t, mul(t, parts[2][0], parts[0][0])));
  };
  EXPECT_LT(grad_check(f, {x, w, b}, 1e-6), 1e-6);
}

TEST(Attention, CausalPrefixIsInvariantToSuffix) {
  Rng rng(9);
  Tensor q = random_tensor(rng, {5, 8}, 1.0, false);
  Tensor k = random_tensor(rng, {5, 8}, 1.0, false);
  Tensor v = random_tensor(rng, {5, 8}, 1.0, false);
  Tape tape(Tape::Mode::kInference);
  const Tensor before = attention(tape, q, k, v, 2, true);
  for (std::size_t j = 0; j < 8; ++j) {
    k.at(4, j) += 1;
    v.at(4, j) -= 3;
    q.at(4, j) *= 2;
  }
  const Tensor after = attention(tape, q, k, v, 2, true);
  for (std::size_t i = 0; i < 4 * 8; ++i) EXPECT_EQ(before.at(i), after.at(i));
}

TEST(Adam, DecreasesAQuadratic) {
  Tensor x = Tensor::vector({3, -2}, true);
  Adam opt({{"x", x}}, {.lr = 0.1});
  double last = 1e9;
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    Tape tape;
    const Tensor loss = sum(tape, mul(tape, x, x));
    last = loss.item();
    tape.backward(loss);
    opt.step();
  }
  EXPECT_LT(last, 1e-2);
}
