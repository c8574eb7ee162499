#include "d3kit/toy_task.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "d3kit/errors.hpp"

namespace d3kit {

namespace {

int bit_at(const Tensor& x, std::size_t channel, std::int64_t pos) {
  const auto n = static_cast<std::int64_t>(x.shape().h);
  if (pos < 0 || pos >= n) return 0;
  return x(0, channel, static_cast<std::size_t>(pos), 0) > 0.0 ? 1 : 0;
}

Tensor make_target(const Tensor& input, std::size_t distance) {
  const std::size_t n = input.shape().h;
  Tensor t(Shape{1, 1, n, 1});
  for (std::size_t p = 0; p < n; ++p) {
    const auto q = static_cast<std::int64_t>(p);
    const int y = bit_at(input, 0, q - 1) ^ bit_at(input, 0, q) ^
                  bit_at(input, 0, q + 1) ^
                  bit_at(input, 1, q - static_cast<std::int64_t>(distance));
    t(0, 0, p, 0) = static_cast<double>(y);
  }
  return t;
}

double sign_from(std::mt19937_64& rng) { return (rng() >> 63) ? 1.0 : -1.0; }

}  // namespace

ToyTask gen_task(std::uint64_t seed, std::size_t length, std::size_t distance,
                 std::size_t count, std::size_t period) {
  if (2 * distance >= length) {
    throw ArgumentError("marker distance " + std::to_string(distance) +
                        " must be below half the length " + std::to_string(length));
  }
  if (count == 0 || count % 2 != 0) {
    throw ArgumentError("sample count must be positive and even");
  }
  if (period == 0) throw ArgumentError("marker period must be >= 1");

  ToyTask task{seed, length, distance, period, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count / 2; ++i) {
    Tensor a(Shape{1, 2, length, 1});
    for (std::size_t p = 0; p < length; ++p) a(0, 0, p, 0) = sign_from(rng);
    for (std::size_t p = rng() % period; p < length; p += period) {
      a(0, 1, p, 0) = sign_from(rng);
    }
    Tensor b = a;
    for (std::size_t p = 0; p < length; ++p) b(0, 1, p, 0) = -a(0, 1, p, 0);
    Tensor ta = make_target(a, distance);
    Tensor tb = make_target(b, distance);
    task.samples.push_back({std::move(a), std::move(ta)});
    task.samples.push_back({std::move(b), std::move(tb)});
  }
  return task;
}

double marker_floor(const ToyTask& task, std::size_t half_width) {
  if (task.samples.empty()) return 0.0;
  const std::size_t n = task.length;
  const auto h = static_cast<std::int64_t>(half_width);
  const auto d = static_cast<std::int64_t>(task.distance);
  double pairs = 0.0;
  if (task.distance > half_width) {
    for (std::size_t i = 0; i + 1 < task.samples.size(); i += 2) {
      const Tensor& x = task.samples[i].input;
      auto marked = [&](std::int64_t q) {
        return q >= 0 && q < static_cast<std::int64_t>(n) &&
               x(0, 1, static_cast<std::size_t>(q), 0) != 0.0;
      };
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(n); ++p) {
        if (!marked(p - d)) continue;
        bool clear = true;
        for (std::int64_t q = p - h; q <= p + h && clear; ++q) clear = !marked(q);
        if (clear) pairs += 1.0;
      }
    }
  }
  return 0.5 * pairs /
         static_cast<double>(task.samples.size() * task.length);
}

ToyModel::Weights ToyModel::init(const ToyModelConfig& cfg, std::uint64_t seed) {
  cfg.d2.validate();
  std::mt19937_64 rng(seed);
  D2Weights d2 = init_d2(cfg.d2, kInputChannels, rng);
  ConvUnit head =
      init_conv_unit(cfg.d2.output_channels(kInputChannels), 1, 1, 1, rng);
  return Weights{std::move(d2), std::move(head)};
}

ToyModel::ToyModel(ToyModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), w_(init(cfg_, seed)) {}

namespace {

ag::Var record_model(ag::Tape& tape, const ToyModel& model, ag::Var x) {
  const ag::D2Vars d2 = ag::d2_forward(tape, model.config().d2, x, model.d2(),
                                       NormKind::Affine);
  return ag::conv_unit(tape, d2.output, model.head(), NormKind::Affine,
                       std::size_t{1});
}

// Samples [begin, end) of `order` stacked along the batch axis.
std::pair<Tensor, Tensor> stack(const ToyTask& task,
                                const std::vector<std::size_t>& order,
                                std::size_t begin, std::size_t end) {
  const std::size_t n = task.length;
  const std::size_t b = end - begin;
  Tensor x(Shape{b, 2, n, 1});
  Tensor t(Shape{b, 1, n, 1});
  auto xs = x.data();
  auto ts = t.data();
  for (std::size_t i = 0; i < b; ++i) {
    const ToySample& s = task.samples[order[begin + i]];
    std::copy(s.input.data().begin(), s.input.data().end(),
              xs.begin() + static_cast<std::ptrdiff_t>(i * 2 * n));
    std::copy(s.target.data().begin(), s.target.data().end(),
              ts.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return {std::move(x), std::move(t)};
}

double squared_error(const Tensor& out, const Tensor& target) {
  double acc = 0.0;
  auto o = out.data();
  auto t = target.data();
  for (std::size_t i = 0; i < o.size(); ++i) acc += (o[i] - t[i]) * (o[i] - t[i]);
  return acc;
}

}  // namespace

Tensor ToyModel::forward(const Tensor& input) const {
  if (input.shape().c != kInputChannels || input.shape().w != 1) {
    throw DimensionError("toy model expects [N, 2, n, 1], got " +
                         input.shape().str());
  }
  ag::Tape tape;
  return tape.value(record_model(tape, *this, tape.input(input)));
}

void ToyModel::for_each_param(const ParamVisitor& fn) {
  d3kit::for_each_param(w_.d2, "d2.", fn);
  d3kit::for_each_param(w_.head, "head", fn);
}

double dataset_loss(const ToyModel& model, const ToyTask& task) {
  constexpr std::size_t kChunk = 64;
  std::vector<std::size_t> order(task.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double acc = 0.0;
  for (std::size_t b = 0; b < order.size(); b += kChunk) {
    const auto [x, t] = stack(task, order, b, std::min(order.size(), b + kChunk));
    acc += squared_error(model.forward(x), t);
  }
  return acc / static_cast<double>(task.samples.size() * task.length);
}

TrainReport train(ToyModel& model, const ToyTask& task, const TrainOptions& opt,
                  std::uint64_t seed) {
  if (task.samples.empty()) throw ArgumentError("empty toy task");
  if (opt.batch == 0) throw ArgumentError("batch size must be >= 1");
  if (model.config().d2.output_channels(ToyModel::kInputChannels) !=
      model.head().in_channels() || model.head().out_channels() != 1) {
    throw ConfigError("toy model head must map to one output channel");
  }
  const auto start = std::chrono::steady_clock::now();

  TrainReport report;
  report.seed = seed;
  const D2Config& d2 = model.config().d2;
  report.config = {
      {"model",
       {{"L", d2.layers},
        {"k", d2.growth},
        {"kernel", {d2.kernel_h, d2.kernel_w}},
        {"mode", to_string(d2.mode)}}},
      {"task",
       {{"seed", task.seed},
        {"n", task.length},
        {"distance", task.distance},
        {"period", task.period},
        {"count", task.samples.size()}}},
      {"train",
       {{"lr", opt.lr},
        {"momentum", opt.momentum},
        {"epochs", opt.epochs},
        {"batch", opt.batch}}}};

  std::vector<Tensor*> params;
  model.for_each_param([&](const std::string&, Tensor& t) { params.push_back(&t); });
  std::vector<Tensor> velocity;
  for (Tensor* p : params) velocity.emplace_back(p->shape());

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(task.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const double per_batch_scale = 2.0 / static_cast<double>(task.length);

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng() % i]);
    }
    for (std::size_t b = 0; b < order.size(); b += opt.batch) {
      const std::size_t e = std::min(order.size(), b + opt.batch);
      const auto [x, t] = stack(task, order, b, e);
      ag::Tape tape;
      const ag::Var out = record_model(tape, model, tape.input(x));
      Tensor seed_grad = tape.value(out);
      const double scale = per_batch_scale / static_cast<double>(e - b);
      auto g = seed_grad.data();
      auto tv = t.data();
      double loss = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double diff = g[k] - tv[k];
        loss += diff * diff;
        g[k] = scale * diff;
      }
      if (!std::isfinite(loss)) {
        throw NumericError("toy training diverged in epoch " +
                           std::to_string(epoch + 1));
      }
      tape.backward(out, seed_grad);
      for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor* grad = tape.param_grad(*params[k]);
        if (grad == nullptr) continue;
        auto v = velocity[k].data();
        auto w = params[k]->data();
        auto gr = grad->data();
        for (std::size_t j = 0; j < v.size(); ++j) {
          v[j] = opt.momentum * v[j] + gr[j];
          w[j] -= opt.lr * v[j];
        }
      }
    }
    const double loss = dataset_loss(model, task);
    if (!std::isfinite(loss)) {
      throw NumericError("toy training diverged in epoch " +
                         std::to_string(epoch + 1));
    }
    report.epoch_loss.push_back(loss);
  }
  report.final_loss =
      report.epoch_loss.empty() ? dataset_loss(model, task) : report.epoch_loss.back();
  report.wall_clock_s = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
  return report;
}

bool perturb_independence(const ToyModel& model, const Tensor& input,
                          std::size_t position,
                          const std::vector<std::int64_t>& region,
                          std::uint64_t seed, std::size_t trials) {
  const Shape s = input.shape();
  if (s.n != 1) throw DimensionError("perturb_independence takes one sample");
  if (position >= s.h) throw ArgumentError("position outside the sequence");
  std::vector<std::size_t> rows;
  for (std::int64_t q : region) {
    if (q >= 0 && q < static_cast<std::int64_t>(s.h)) {
      rows.push_back(static_cast<std::size_t>(q));
    }
  }
  if (rows.empty()) return true;

  const double base = model.forward(input)(0, 0, position, 0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Tensor x = input;
    for (std::size_t q : rows) {
      for (std::size_t c = 0; c < s.c; ++c) x(0, c, q, 0) = normal(rng);
    }
    if (model.forward(x)(0, 0, position, 0) != base) return false;
  }
  return true;
}

nlohmann::ordered_json to_json(const TrainReport& report, bool with_timing) {
  nlohmann::ordered_json j;
  j["config"] = report.config;
  j["seed"] = report.seed;
  j["epoch_loss"] = report.epoch_loss;
  j["final_loss"] = report.final_loss;
  if (with_timing) j["wall_clock_s"] = report.wall_clock_s;
  return j;
}

}  // namespace d3kit
