#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "trans2d/tensor.hpp"

using namespace trans2d;
using namespace trans2d::ad;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Tensor random_tensor(Shape shape, Rng& rng, bool grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return Tensor(std::move(shape), std::move(v), grad);
}

// Naive einsum used as the oracle for contract: loops over every assignment
// of every letter.
std::vector<double> naive_einsum(const Tensor& a, const Tensor& b, const std::string& la,
                                 const std::string& lb, const std::string& lo) {
  std::string letters;
  std::vector<std::size_t> extents;
  auto note = [&](const std::string& term, const Shape& shape) {
    for (std::size_t i = 0; i < term.size(); ++i) {
      if (letters.find(term[i]) == std::string::npos) {
        letters += term[i];
        extents.push_back(shape[i]);
      }
    }
  };
  note(la, a.shape());
  note(lb, b.shape());
  Shape out_shape;
  for (char c : lo) out_shape.push_back(extents[letters.find(c)]);
  std::vector<double> out(numel(out_shape), 0.0);
  std::vector<std::size_t> idx(letters.size(), 0);
  auto flat = [&](const std::string& term, const Shape& shape) {
    std::size_t f = 0;
    for (std::size_t i = 0; i < term.size(); ++i) f = f * shape[i] + idx[letters.find(term[i])];
    return f;
  };
  while (true) {
    out[flat(lo, out_shape)] += a.data()[flat(la, a.shape())] * b.data()[flat(lb, b.shape())];
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == extents[k]) idx[k++] = 0;
    if (k == idx.size()) break;
  }
  return out;
}

}  // namespace

TEST(Contract, IdentityMatmul) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {1, 0, 0, 1});
  auto c = contract(a, b, Contraction::matmul());
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Contract, BatchedShape) {
  Rng rng(1);
  auto c = contract(random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng), Contraction::batched_matmul());
  EXPECT_EQ(c.shape(), (Shape{2, 3, 5}));
}

TEST(Contract, InnerProduct) {
  auto c = contract(Tensor::vector({1, 2, 3}), Tensor::vector({4, 5, 6}), Contraction::inner());
  EXPECT_EQ(c.size(), 1u);
  EXPECT_DOUBLE_EQ(c.data()[0], 32.0);
}

TEST(Contract, MismatchNamesAxis) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    contract(a, b, Contraction::matmul());
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("'j'"), std::string::npos);
  }
}

TEST(Contract, RejectsMalformedSpecs) {
  EXPECT_THROW(Contraction::parse("ii,ij->j"), std::invalid_argument);
  EXPECT_THROW(Contraction::parse("ij,jk->ikq"), std::invalid_argument);
  EXPECT_THROW(Contraction::parse("ijx,jk->ik"), std::invalid_argument);
  EXPECT_THROW(Contraction::parse("ij jk"), std::invalid_argument);
}

TEST(Contract, MatchesNaiveEinsum) {
  Rng rng(3);
  const std::vector<std::tuple<std::string, Shape, Shape>> cases = {
      {"icd,zed->icze", {3, 2, 4}, {5, 3, 4}},
      {"icd,zcd->iz", {3, 2, 4}, {5, 2, 4}},
      {"zcd,zed->zce", {3, 2, 4}, {3, 5, 4}},
      {"iz,zce->ice", {2, 3}, {3, 4, 5}},
      {"icze,zed->icd", {2, 3, 4, 5}, {4, 5, 6}},
      {"icx,cyx->icy", {2, 3, 4}, {3, 5, 4}},
      {"mcd,med->mce", {2, 3, 4}, {2, 5, 4}},
      {"i,j->ij", {3}, {4}},
  };
  for (const auto& [text, sa, sb] : cases) {
    auto spec = Contraction::parse(text);
    auto a = random_tensor(sa, rng, false);
    auto b = random_tensor(sb, rng, false);
    auto got = contract(a, b, spec);
    auto want = naive_einsum(a, b, spec.lhs(), spec.rhs(), spec.out());
    ASSERT_EQ(got.size(), want.size()) << text;
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.data()[i], want[i], 1e-12) << text;
  }
}

TEST(Contract, Bilinear) {
  Rng rng(5);
  auto a = random_tensor({3, 4}, rng, false);
  auto b = random_tensor({4, 2}, rng, false);
  const double alpha = -2.75;
  auto lhs = contract(scale(a, alpha), b, Contraction::matmul());
  auto rhs = contract(a, b, Contraction::matmul());
  for (std::size_t i = 0; i < rhs.size(); ++i) EXPECT_NEAR(lhs.data()[i], alpha * rhs.data()[i], 1e-12);
}

TEST(Softmax, Examples) {
  auto half = softmax_lastdim(Tensor::vector({0, 0}));
  EXPECT_DOUBLE_EQ(half.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(half.data()[1], 0.5);

  auto s = softmax_lastdim(Tensor::vector({1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(s.data()[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(s.data()[0], 0.09003, 5e-6);
  EXPECT_NEAR(s.data()[1], 0.24473, 5e-6);
  EXPECT_NEAR(s.data()[2], 0.66524, 5e-6);

  auto m = softmax_lastdim(Tensor::vector({5, -kInf}));
  EXPECT_EQ(m.data()[0], 1.0);
  EXPECT_EQ(m.data()[1], 0.0);
}

TEST(Softmax, DegenerateMask) {
  EXPECT_THROW(softmax_lastdim(Tensor({2, 2}, {1, 2, -kInf, -kInf})), DegenerateMaskError);
}

TEST(Softmax, RowsSumToOneProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.index(6), width = 1 + rng.index(12);
    std::vector<double> v(rows * width);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t keep = rng.index(width);
      for (std::size_t c = 0; c < width; ++c) {
        v[r * width + c] = (c != keep && rng.bernoulli(0.3)) ? -kInf : rng.normal(0.0, 30.0);
      }
    }
    auto s = softmax_lastdim(Tensor({rows, width}, v));
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < width; ++c) {
        const double p = s.data()[r * width + c];
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, Examples) {
  auto ones = Tensor::filled({4}, 1.0);
  auto zeros = Tensor::zeros({4});
  auto c = layer_norm(Tensor::filled({4}, 7.5), ones, zeros, 1e-5);
  for (double v : c.data()) EXPECT_EQ(v, 0.0);

  auto r = layer_norm(Tensor::vector({1, -1}), Tensor::filled({2}, 1.0), Tensor::zeros({2}), 0.0);
  EXPECT_DOUBLE_EQ(r.data()[0], 1.0);
  EXPECT_DOUBLE_EQ(r.data()[1], -1.0);

  auto a = layer_norm(Tensor::vector({1, -1}), Tensor::filled({2}, 2.0), Tensor::filled({2}, 3.0), 1e-5);
  EXPECT_NEAR(a.data()[0], 5.0, 1e-4);
  EXPECT_NEAR(a.data()[1], 1.0, 1e-4);
}

TEST(LayerNorm, Errors) {
  EXPECT_THROW(layer_norm(Tensor::vector({1, 2}), Tensor::filled({3}, 1.0), Tensor::zeros({3}), 1e-5),
               DimensionError);
  EXPECT_THROW(layer_norm(Tensor::vector({1, 2}), Tensor::filled({2}, 1.0), Tensor::zeros({2}), -1.0),
               std::invalid_argument);
}

TEST(Elementwise, Examples) {
  auto r = relu(Tensor::vector({-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);

  Rng rng(1);
  auto x = Tensor::vector({1.5, -2, 3});
  auto d = dropout(x, 0.0, rng, true);
  EXPECT_EQ(std::vector<double>(d.data().begin(), d.data().end()), (std::vector<double>{1.5, -2, 3}));
  auto e = dropout(x, 0.5, rng, false);
  EXPECT_EQ(std::vector<double>(e.data().begin(), e.data().end()), (std::vector<double>{1.5, -2, 3}));
  EXPECT_THROW(dropout(x, 1.0, rng, true), std::invalid_argument);

  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  EXPECT_THROW(mul(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST(Elementwise, DropoutIsInvertedAndReusesMask) {
  Rng rng(9);
  auto x = Tensor(Shape{1000}, std::vector<double>(1000, 1.0), true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = dropout(x, 0.3, rng, true);
  }
  std::size_t kept = 0;
  for (double v : y.data()) {
    if (v != 0.0) {
      EXPECT_NEAR(v, 1.0 / 0.7, 1e-15);
      ++kept;
    }
  }
  EXPECT_GT(kept, 600u);
  EXPECT_LT(kept, 800u);
  Tape tape2;
  Tensor loss;
  {
    TapeScope scope(tape2);
    loss = sum(dropout(x, 0.3, rng, true));
  }
  auto g = backward(loss, tape2);
  auto gx = g.get(x);
  // Gradient equals the forward mask, which differs from a fresh draw.
  std::size_t nonzero = 0;
  for (double v : gx) nonzero += v != 0.0;
  EXPECT_GT(nonzero, 600u);
}

TEST(Backward, ProductRule) {
  auto x = Tensor::scalar(3.0, true);
  auto y = Tensor::scalar(4.0, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = mul(x, y);
  }
  auto g = backward(loss, tape);
  EXPECT_EQ(g.get(x)[0], 4.0);
  EXPECT_EQ(g.get(y)[0], 3.0);
  EXPECT_FALSE(x.has_grad());
  g.accumulate_into_leaves();
  EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(Backward, ReluSubgradient) {
  auto x = Tensor::vector({-1, 2}, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(relu(x));
  }
  auto g = backward(loss, tape).get(x);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 1.0);
}

TEST(Backward, FanOutAccumulates) {
  auto x = Tensor::scalar(1.25, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = add(x, x);
  }
  EXPECT_EQ(backward(loss, tape).get(x)[0], 2.0);
}

TEST(Backward, NonScalarAndDetached) {
  auto x = Tensor::vector({1, 2}, true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = scale(x, 2.0);
  }
  EXPECT_THROW(backward(y, tape), RankError);

  auto c = Tensor::vector({1, 2});
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(c);
  }
  auto g = backward(loss, tape);
  EXPECT_TRUE(g.detached());
  EXPECT_EQ(g.size(), 0u);
}

TEST(Backward, NothingRecordedWithoutTape) {
  auto x = Tensor::vector({1, 2}, true);
  auto y = scale(x, 2.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(FiniteDiff, Quadratic) {
  auto theta = Tensor::vector({1, 2}, true);
  std::vector<Tensor> params{theta};
  auto f = [&] { return sum(mul(theta, theta)); };
  auto report = finite_diff_check(f, params, 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-8);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = f();
  }
  auto g = backward(loss, tape).get(theta);
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], 4.0);
}

TEST(FiniteDiff, ConstantAndErrors) {
  auto theta = Tensor::vector({1, 2}, true);
  std::vector<Tensor> params{theta};
  auto report = finite_diff_check([] { return Tensor::scalar(4.0); }, params, 1e-5);
  EXPECT_EQ(report.max_rel_error, 0.0);
  EXPECT_THROW(finite_diff_check([] { return Tensor::scalar(4.0); }, params, 1e-2), std::invalid_argument);
  EXPECT_THROW(finite_diff_check([] { return Tensor::scalar(std::nan("")); }, params, 1e-5), NumericError);
}

// Every differentiable op, composed, against central differences.
TEST(FiniteDiff, EveryOpComposed) {
  Rng rng(21);
  auto a = random_tensor({3, 2, 4}, rng);
  auto b = random_tensor({5, 2, 4}, rng);
  auto gain = random_tensor({4}, rng);
  auto bias = random_tensor({4}, rng);
  auto s = Tensor::scalar(0.7, true);
  auto table = random_tensor({6, 4}, rng);
  std::vector<Tensor> params{a, b, gain, bias, s, table};
  const std::vector<std::size_t> rows{0, 3, 3, 5, 1};
  const std::vector<std::uint8_t> mask{0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1};

  auto f = [&]() {
    auto scores = contract(a, b, "icd,zcd->iz");  // (3,5)
    auto masked = masked_fill(scores, mask, -kInf);
    auto p = softmax_lastdim(mul_scalar(masked, s));
    auto emb = gather_rows(table, rows);                                  // (5,4)
    auto mixed = contract(p, emb, Contraction::matmul());                 // (3,4)
    auto normed = layer_norm(mixed, gain, bias, 1e-5);                    // (3,4)
    auto wide = expand(normed, {3, 2, 4}, {0, 2});                        // (3,2,4)
    auto joined = concat({add(wide, a), relu(a)}, 1);                     // (3,4,4)
    auto cut = slice(joined, 1, 1, 3);                                    // (3,2,4)
    auto pooled = mean_axis(reshape(cut, {6, 4}), 0);                     // (4)
    auto probs = sigmoid(mul(pooled, scale(pooled, 0.5)));
    return binary_cross_entropy(probs, std::vector<double>{1, 0, 0, 1});
  };
  auto report = finite_diff_check(f, params, 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-6) << "param " << report.worst_param << " coord " << report.worst_coord;
}

TEST(GatherRows, PaddingRowGetsNoGradient) {
  auto table = Tensor({3, 2}, {0, 0, 1, 2, 3, 4}, true);
  const std::vector<std::size_t> rows{0, 2, 0};
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(gather_rows(table, rows, 0));
  }
  auto g = backward(loss, tape).get(table);
  EXPECT_EQ(g, (std::vector<double>{0, 0, 0, 0, 1, 1}));
  EXPECT_THROW(gather_rows(table, std::vector<std::size_t>{3}), EncodingError);
}

TEST(BinaryCrossEntropy, Examples) {
  EXPECT_NEAR(binary_cross_entropy(Tensor::vector({0.5}), std::vector<double>{1}).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(binary_cross_entropy(Tensor::vector({0.9, 0.1}), std::vector<double>{1, 0}).item(),
              -2.0 * std::log(0.9), 1e-15);
  EXPECT_LE(binary_cross_entropy(Tensor::vector({1.0, 0.0}), std::vector<double>{1, 0}).item(), 4e-12);
  EXPECT_THROW(binary_cross_entropy(Tensor::vector({0.5}), std::vector<double>{1, 0}), DimensionError);
}
