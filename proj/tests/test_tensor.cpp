#include <doctest.h>

#include <cmath>
#include <vector>

#include "d3kit/errors.hpp"
#include "d3kit/ops.hpp"
#include "d3kit/tensor.hpp"
#include "helpers.hpp"

using namespace d3kit;
using d3kit::test::randn;

TEST_CASE("tensor rejects zero dimensions and wrong data length") {
  CHECK_THROWS_AS(Tensor(Shape{1, 0, 4, 4}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{1, 1, 2, 2}, std::vector<double>(3)), DimensionError);
  Tensor t(Shape{2, 3, 4, 5});
  CHECK(t.numel() == 120);
  t(1, 2, 3, 4) = 7.0;
  CHECK(t.values().back() == 7.0);
}

TEST_CASE("concat_channels stacks channels in order") {
  const Tensor a = randn({1, 2, 4, 4}, 1);
  const Tensor b = randn({1, 3, 4, 4}, 2);
  const Tensor c = concat_channels({a, b});
  CHECK(c.shape() == Shape{1, 5, 4, 4});
  CHECK(slice_channels(c, 0, 2) == a);
  CHECK(slice_channels(c, 2, 5) == b);
}

TEST_CASE("concat of one input is the input") {
  const Tensor a = randn({2, 3, 4, 5}, 3);
  CHECK(concat_channels({a}) == a);
}

TEST_CASE("concat rejects spatial or batch mismatch") {
  CHECK_THROWS_AS(concat_channels({Tensor({1, 2, 4, 4}), Tensor({1, 2, 5, 4})}),
                  DimensionError);
  CHECK_THROWS_AS(concat_channels({Tensor({1, 2, 4, 4}), Tensor({2, 2, 4, 4})}),
                  DimensionError);
}

TEST_CASE("concat is associative") {
  const Tensor a = randn({2, 1, 3, 3}, 4);
  const Tensor b = randn({2, 2, 3, 3}, 5);
  const Tensor c = randn({2, 3, 3, 3}, 6);
  CHECK(concat_channels({a, concat_channels({b, c})}) == concat_channels({a, b, c}));
  CHECK(concat_channels({concat_channels({a, b}), c}) == concat_channels({a, b, c}));
}

TEST_CASE("composite_psi of a constant channel is zero") {
  const Tensor x(Shape{2, 3, 4, 4}, 5.0);
  const Tensor y = composite_psi(x, NormParams::unit(3));
  CHECK(max_abs(y) == 0.0);
}

TEST_CASE("composite_psi leaves standardized input unchanged before the ReLU") {
  // Two batch items holding +v and -v: per-channel mean 0; rescale to unit
  // biased variance.
  Tensor half = randn({1, 2, 4, 4}, 7);
  Tensor x = concat_channels({half, scaled(half, -1.0)});
  x = Tensor(Shape{2, 2, 4, 4}, x.values());
  for (std::size_t c = 0; c < 2; ++c) {
    double ss = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 16; ++i) ss += x.plane(n, c)[i] * x.plane(n, c)[i];
    const double s = std::sqrt(ss / 32.0);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 16; ++i) x.plane(n, c)[i] /= s;
  }
  const Tensor pre = batch_norm_affine(x, NormParams::unit(2));
  // the only change left is the eps-induced 1/sqrt(1 + eps) scaling
  CHECK(max_abs_diff(pre, scaled(x, 1.0 / std::sqrt(1.0 + 1e-5))) < 1e-12);
  CHECK(max_abs_diff(pre, x) <= 5e-6 * max_abs(x));
  const Tensor y = composite_psi(x, NormParams::unit(2));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(y.values()[i] == std::max(0.0, pre.values()[i]));
  }
}

TEST_CASE("composite_psi with beta -10 clamps everything") {
  NormParams p = NormParams::unit(3);
  p.beta.assign(3, -10.0);
  CHECK(max_abs(composite_psi(randn({2, 3, 5, 5}, 8, 3.0), p)) == 0.0);
}

TEST_CASE("composite_psi rejects a channel mismatch") {
  CHECK_THROWS_AS(composite_psi(Tensor({1, 3, 2, 2}), NormParams::unit(2)),
                  DimensionError);
  NormParams p = NormParams::unit(2);
  p.eps = 0.0;
  CHECK_THROWS(composite_psi(Tensor({1, 2, 2, 2}), p));
}

TEST_CASE("batch normalization yields zero mean and unit variance") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = add(randn({3, 4, 6, 6}, seed, 2.5), Tensor({3, 4, 6, 6}, 1.5));
    const Tensor y = batch_norm_affine(x, NormParams::unit(4));
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0.0, ss = 0.0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 36; ++i) s += y.plane(n, c)[i];
      const double mean = s / 108.0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 36; ++i) {
          ss += (y.plane(n, c)[i] - mean) * (y.plane(n, c)[i] - mean);
        }
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(ss / 108.0 - 1.0) < 1e-4);
    }
  }
}

TEST_CASE("avg_pool_2x2 averages blocks and halves the shape") {
  const Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(avg_pool_2x2(x).values() == std::vector<double>{2.5});
  CHECK(avg_pool_2x2(Tensor({1, 3, 8, 8})).shape() == Shape{1, 3, 4, 4});
  CHECK_THROWS_AS(avg_pool_2x2(Tensor({1, 3, 5, 4})), DimensionError);
  CHECK_THROWS_AS(avg_pool_2x2(Tensor({1, 3, 4, 5})), DimensionError);
}

TEST_CASE("avg_pool_2x2 preserves the mean") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = randn({2, 3, 8, 6}, seed);
    const double in = sum(x);
    const double out = 4.0 * sum(avg_pool_2x2(x));
    CHECK(std::abs(out - in) <= 1e-12 * std::max(1.0, std::abs(in)));
  }
}

TEST_CASE("affine psi is pointwise") {
  NormParams p{{2.0, -1.0}, {0.5, 0.25}, 1e-5};
  const Tensor x(Shape{1, 2, 1, 2}, {1.0, -1.0, 1.0, -1.0});
  CHECK(affine_psi(x, p).values() == std::vector<double>{2.5, 0.0, 0.0, 1.25});
}

TEST_CASE("bilinear upsampling uses half-pixel centres") {
  const Tensor x(Shape{1, 1, 1, 2}, {0.0, 4.0});
  // output column j samples max(0, (j + 0.5) / 2 - 0.5)
  CHECK(upsample_bilinear(x, 1, 4).values() == std::vector<double>{0.0, 1.0, 3.0, 4.0});
  const Tensor y = randn({1, 2, 3, 3}, 9);
  CHECK(upsample_bilinear(y, 3, 3) == y);
  const Tensor c(Shape{1, 1, 2, 2}, 3.0);
  CHECK(max_abs_diff(upsample_bilinear(c, 8, 8), Tensor({1, 1, 8, 8}, 3.0)) == 0.0);
}

TEST_CASE("subsample keeps even positions") {
  const Tensor x(Shape{1, 1, 3, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(subsample_2(x).values() == std::vector<double>{0, 2, 6, 8});
}
