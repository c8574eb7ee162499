#include <doctest.h>

#include <cmath>

#include "d3kit/errors.hpp"
#include "d3kit/toy_task.hpp"

using namespace d3kit;

namespace {

ToyModelConfig toy(DilationMode mode, std::size_t layers = 5) {
  return ToyModelConfig{D2Config{layers, 4, 3, 1, mode}};
}

std::vector<std::int64_t> range(std::int64_t a, std::int64_t b) {
  std::vector<std::int64_t> v;
  for (std::int64_t i = a; i <= b; ++i) v.push_back(i);
  return v;
}

}  // namespace

TEST_CASE("task shapes and determinism") {
  const ToyTask t = gen_task(0, 64, 20, 256);
  REQUIRE(t.samples.size() == 256);
  CHECK(t.samples[0].input.shape() == Shape{1, 2, 64, 1});
  CHECK(t.samples[0].target.shape() == Shape{1, 1, 64, 1});
  const ToyTask u = gen_task(0, 64, 20, 256);
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    CHECK(t.samples[i].input == u.samples[i].input);
    CHECK(t.samples[i].target == u.samples[i].target);
  }
  CHECK_FALSE(gen_task(1, 64, 20, 256).samples[0].input == t.samples[0].input);
}

TEST_CASE("task values and target rule") {
  const ToyTask t = gen_task(3, 40, 7, 8, 5);
  for (const auto& s : t.samples) {
    std::size_t markers = 0;
    for (std::size_t p = 0; p < 40; ++p) {
      CHECK(std::abs(s.input(0, 0, p, 0)) == 1.0);
      const double m = s.input(0, 1, p, 0);
      CHECK((m == 0.0 || std::abs(m) == 1.0));
      markers += m != 0.0;
      const double y = s.target(0, 0, p, 0);
      CHECK((y == 0.0 || y == 1.0));
    }
    CHECK(markers == 8);
    // recompute the target directly
    auto bit = [&](std::size_t c, long q) {
      return q >= 0 && q < 40 && s.input(0, c, static_cast<std::size_t>(q), 0) > 0.0;
    };
    for (long p = 0; p < 40; ++p) {
      const bool y = bit(0, p - 1) ^ bit(0, p) ^ bit(0, p + 1) ^ bit(1, p - 7);
      CHECK(s.target(0, 0, static_cast<std::size_t>(p), 0) == (y ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("twins share noise and flip markers") {
  const ToyTask t = gen_task(5, 32, 6, 4, 4);
  for (std::size_t i = 0; i < 4; i += 2) {
    const Tensor& a = t.samples[i].input;
    const Tensor& b = t.samples[i + 1].input;
    for (std::size_t p = 0; p < 32; ++p) {
      CHECK(a(0, 0, p, 0) == b(0, 0, p, 0));
      CHECK(a(0, 1, p, 0) == -b(0, 1, p, 0));
      const bool marked = p >= 6 && a(0, 1, p - 6, 0) != 0.0;
      const bool differ = t.samples[i].target(0, 0, p, 0) != t.samples[i + 1].target(0, 0, p, 0);
      CHECK(marked == differ);
    }
  }
}

TEST_CASE("zero distance and argument errors") {
  const ToyTask t = gen_task(2, 16, 0, 2, 3);
  CHECK(t.distance == 0);
  CHECK(marker_floor(t, 0) == 0.0);
  CHECK_THROWS_AS(gen_task(0, 40, 20, 4), ArgumentError);
  CHECK_THROWS_AS(gen_task(0, 64, 20, 3), ArgumentError);
  CHECK_THROWS_AS(gen_task(0, 64, 20, 0), ArgumentError);
  CHECK_THROWS_AS(gen_task(0, 64, 20, 4, 0), ArgumentError);
}

TEST_CASE("marker floor counts isolated marked positions") {
  // period 1 puts a marker everywhere, so no window is ever clear
  CHECK(marker_floor(gen_task(0, 32, 10, 4, 1), 5) == 0.0);
  const ToyTask t = gen_task(0, 64, 20, 256);
  CHECK(marker_floor(t, 25) == 0.0);
  const double f5 = marker_floor(t, 5);
  CHECK(f5 > 0.0);
  CHECK(f5 < 0.5 / 13.0 + 1e-12);
  CHECK(marker_floor(t, 0) >= f5);
}

TEST_CASE("model output shape and constant loss at zero learning rate") {
  ToyModel m(toy(DilationMode::Multi), 1);
  const ToyTask t = gen_task(1, 32, 8, 8);
  CHECK(m.forward(t.samples[0].input).shape() == Shape{1, 1, 32, 1});
  CHECK_THROWS_AS(m.forward(Tensor(Shape{1, 3, 32, 1})), DimensionError);
  const double before = dataset_loss(m, t);
  const TrainReport r = train(m, t, TrainOptions{0.0, 0.9, 3, 4}, 0);
  REQUIRE(r.epoch_loss.size() == 3);
  for (double l : r.epoch_loss) CHECK(l == before);
}

TEST_CASE("training is reproducible and lowers the loss") {
  const ToyTask t = gen_task(1, 32, 8, 16);
  ToyModel a(toy(DilationMode::Multi), 2);
  ToyModel b(toy(DilationMode::Multi), 2);
  const double start = dataset_loss(a, t);
  const TrainReport ra = train(a, t, TrainOptions{0.01, 0.9, 5, 4}, 9);
  const TrainReport rb = train(b, t, TrainOptions{0.01, 0.9, 5, 4}, 9);
  CHECK(ra.epoch_loss == rb.epoch_loss);
  CHECK(ra.final_loss < start);
  CHECK(to_json(ra, false).dump() == to_json(rb, false).dump());
  CHECK_FALSE(to_json(ra, false).contains("wall_clock_s"));
  CHECK(to_json(ra, true).contains("wall_clock_s"));
}

TEST_CASE("divergence is reported as a numeric error") {
  const ToyTask t = gen_task(1, 32, 8, 8);
  ToyModel m(toy(DilationMode::Multi), 3);
  CHECK_THROWS_AS(train(m, t, TrainOptions{1e6, 0.9, 20, 2}, 0), NumericError);
}

TEST_CASE("perturbation respects the receptive field") {
  const ToyTask t = gen_task(4, 64, 20, 2);
  const Tensor& x = t.samples[0].input;
  const ToyModel plain(toy(DilationMode::None), 5);
  CHECK(perturb_independence(plain, x, 32, {}));
  CHECK(perturb_independence(plain, x, 32, {-3, 100}));
  CHECK(perturb_independence(plain, x, 32, range(0, 26)));
  CHECK(perturb_independence(plain, x, 32, range(38, 63)));
  CHECK_FALSE(perturb_independence(plain, x, 32, {32}));
  CHECK_FALSE(perturb_independence(plain, x, 32, range(27, 37)));

  const ToyModel multi(toy(DilationMode::Multi), 5);
  CHECK_FALSE(perturb_independence(multi, x, 32, {12}));
  CHECK(perturb_independence(multi, x, 32, range(0, 0)));
  CHECK_THROWS_AS(perturb_independence(multi, x, 64, {1}), ArgumentError);
}
