#include "d3kit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "d3kit/autograd.hpp"
#include "d3kit/dense_blocks.hpp"
#include "d3kit/errors.hpp"

namespace d3kit {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ArgumentError("finite difference eps must be > 0");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = x.data()[i];
    probe.data()[i] = orig + eps;
    const double plus = f(probe);
    probe.data()[i] = orig - eps;
    const double minus = f(probe);
    probe.data()[i] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("finite difference hit a non-finite value at element " +
                         std::to_string(i));
    }
    grad.data()[i] = (plus - minus) / (2.0 * eps);
  }
  return grad;
}

GradCheckReport compare_grads(const std::string& op, const std::string& block,
                              const Tensor& analytic, const Tensor& numeric,
                              double eps, double tolerance) {
  if (analytic.shape() != numeric.shape()) {
    throw DimensionError("compare_grads: analytic " + analytic.shape().str() +
                         " vs numeric " + numeric.shape().str());
  }
  GradCheckReport r{op, block, 0.0, 0.0, eps, tolerance, false};
  r.max_abs_error = max_abs_diff(analytic, numeric);
  const double scale = std::max(max_abs(analytic), max_abs(numeric));
  if (scale > 0.0) r.max_rel_error = r.max_abs_error / scale;
  r.pass = r.max_rel_error < tolerance;
  return r;
}

const std::vector<std::string>& checkable_ops() {
  static const std::vector<std::string> ops{
      "conv2d",   "multidilated_conv", "composite_psi",    "avg_pool",
      "d2_forward", "d3_forward",      "upsample_bilinear"};
  return ops;
}

namespace {

// A random instance of an op: named blocks of tensors (inputs and weights
// alike) and a builder that records the op on a tape, reading every tensor
// through Tape::param.
struct Problem {
  std::vector<std::pair<std::string, std::vector<Tensor*>>> blocks;
  std::function<ag::Var(ag::Tape&)> build;
  double kink_margin = 0.0;
  std::shared_ptr<void> storage;
};

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor channel_tensor(std::size_t c, std::mt19937_64& rng, double mean,
                      double stddev) {
  Tensor t = random_normal(Shape{1, c, 1, 1}, rng, stddev);
  for (double& v : t.data()) v += mean;
  return t;
}

Problem conv_problem(std::uint64_t seed, std::mt19937_64& rng) {
  struct Store {
    Tensor x;
    Tensor w;
    std::size_t dilation;
  };
  const std::size_t dilation = 1 + seed % 8;
  const std::size_t cin = draw(rng, 1, 3);
  const std::size_t cout = draw(rng, 1, 3);
  const std::size_t k = 2 * draw(rng, 0, 2) + 1;
  auto s = std::make_shared<Store>(Store{
      random_normal(Shape{2, cin, draw(rng, 4, 12), draw(rng, 4, 12)}, rng),
      random_normal(Shape{cout, cin, k, k}, rng), dilation});
  Problem p;
  p.blocks = {{"input", {&s->x}}, {"weights", {&s->w}}};
  p.build = [s](ag::Tape& t) {
    return ag::conv(t, t.param(s->x), t.param(s->w), s->dilation);
  };
  p.storage = s;
  return p;
}

Problem multidilated_problem(std::mt19937_64& rng) {
  struct Store {
    Tensor x;
    Tensor w;
    std::vector<DilationGroup> groups;
  };
  std::vector<DilationGroup> groups;
  std::size_t start = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t width = draw(rng, 1, 3);
    groups.push_back(DilationGroup{start, start + width, std::size_t{1} << i});
    start += width;
  }
  const std::size_t cout = draw(rng, 1, 3);
  auto s = std::make_shared<Store>(
      Store{random_normal(Shape{2, start, draw(rng, 6, 12), draw(rng, 6, 12)}, rng),
            random_normal(Shape{cout, start, 3, 3}, rng), groups});
  Problem p;
  p.blocks = {{"input", {&s->x}}, {"weights", {&s->w}}};
  p.build = [s](ag::Tape& t) {
    return ag::multidilated(t, t.param(s->x), t.param(s->w), s->groups);
  };
  p.storage = s;
  return p;
}

Problem psi_problem(std::mt19937_64& rng) {
  struct Store {
    Tensor x;
    Tensor gamma;
    Tensor beta;
  };
  const std::size_t c = draw(rng, 1, 4);
  auto s = std::make_shared<Store>(
      Store{random_normal(Shape{2, c, draw(rng, 3, 6), draw(rng, 3, 6)}, rng),
            channel_tensor(c, rng, 1.0, 0.3), channel_tensor(c, rng, 0.0, 0.5)});
  Problem p;
  p.blocks = {{"input", {&s->x}}, {"gamma", {&s->gamma}}, {"beta", {&s->beta}}};
  p.build = [s](ag::Tape& t) {
    return ag::psi(t, t.param(s->x), t.param(s->gamma), t.param(s->beta),
                   NormKind::Batch);
  };
  p.kink_margin = 1e-3;
  p.storage = s;
  return p;
}

Problem pool_problem(std::mt19937_64& rng) {
  auto x = std::make_shared<Tensor>(random_normal(
      Shape{2, draw(rng, 1, 3), 2 * draw(rng, 1, 5), 2 * draw(rng, 1, 5)}, rng));
  Problem p;
  p.blocks = {{"input", {x.get()}}};
  p.build = [x](ag::Tape& t) { return ag::avg_pool(t, t.param(*x)); };
  p.storage = x;
  return p;
}

Problem upsample_problem(std::mt19937_64& rng) {
  struct Store {
    Tensor x;
    std::size_t h;
    std::size_t w;
  };
  const std::size_t h = draw(rng, 2, 5);
  const std::size_t w = draw(rng, 2, 5);
  auto s = std::make_shared<Store>(
      Store{random_normal(Shape{2, draw(rng, 1, 3), h, w}, rng),
            h * draw(rng, 1, 4) + draw(rng, 0, 1), w * draw(rng, 1, 4)});
  Problem p;
  p.blocks = {{"input", {&s->x}}};
  p.build = [s](ag::Tape& t) { return ag::upsample(t, t.param(s->x), s->h, s->w); };
  p.storage = s;
  return p;
}

void randomize_norms(D2Weights& w, std::mt19937_64& rng) {
  for (auto& u : w.layers) {
    u.norm.gamma = channel_tensor(u.in_channels(), rng, 1.0, 0.2);
    u.norm.beta = channel_tensor(u.in_channels(), rng, 0.0, 0.2);
  }
}

Problem d2_problem(std::uint64_t seed, std::mt19937_64& rng) {
  struct Store {
    D2Config cfg;
    Tensor x;
    D2Weights w;
  };
  D2Config cfg;
  cfg.layers = draw(rng, 1, 3);
  cfg.growth = draw(rng, 1, 3);
  cfg.mode = static_cast<DilationMode>(seed % 3);
  const std::size_t c0 = draw(rng, 1, 3);
  auto s = std::make_shared<Store>(
      Store{cfg, random_normal(Shape{2, c0, draw(rng, 6, 12), draw(rng, 6, 12)}, rng),
            init_d2(cfg, c0, rng)});
  randomize_norms(s->w, rng);
  Problem p;
  std::vector<Tensor*> weights;
  for_each_param(s->w, "", [&](const std::string&, Tensor& t) { weights.push_back(&t); });
  p.blocks = {{"input", {&s->x}}, {"weights", weights}};
  p.build = [s](ag::Tape& t) {
    return ag::d2_forward(t, s->cfg, t.param(s->x), s->w, NormKind::Batch).output;
  };
  p.kink_margin = 1e-4;
  p.storage = s;
  return p;
}

Problem d3_problem(std::uint64_t seed, std::mt19937_64& rng) {
  struct Store {
    D3Config cfg;
    Tensor x;
    D3Weights w;
  };
  D3Config cfg;
  cfg.blocks = 2;
  cfg.inner.layers = 2;
  cfg.inner.growth = 2;
  cfg.inner.mode = static_cast<DilationMode>(seed % 3);
  cfg.bottleneck_channels = 8;
  cfg.reduction = Reduction::compress(0.5);
  // 6 input channels: block 1 runs without a bottleneck, block 2 sees
  // 6 + 5 = 11 > 8 channels and gets one.
  const std::size_t c0 = 6;
  auto s = std::make_shared<Store>(
      Store{cfg, random_normal(Shape{2, c0, 8, 8}, rng), init_d3(cfg, c0, rng)});
  for (auto& b : s->w.blocks) randomize_norms(b.d2, rng);
  Problem p;
  std::vector<Tensor*> weights;
  for_each_param(s->w, "", [&](const std::string&, Tensor& t) { weights.push_back(&t); });
  p.blocks = {{"input", {&s->x}}, {"weights", weights}};
  p.build = [s](ag::Tape& t) {
    return ag::d3_forward(t, s->cfg, t.param(s->x), s->w, NormKind::Batch).output;
  };
  p.kink_margin = 1e-4;
  p.storage = s;
  return p;
}

Problem make_problem(const std::string& op, std::uint64_t seed,
                     std::mt19937_64& rng) {
  if (op == "conv2d") return conv_problem(seed, rng);
  if (op == "multidilated_conv") return multidilated_problem(rng);
  if (op == "composite_psi") return psi_problem(rng);
  if (op == "avg_pool") return pool_problem(rng);
  if (op == "upsample_bilinear") return upsample_problem(rng);
  if (op == "d2_forward") return d2_problem(seed, rng);
  if (op == "d3_forward") return d3_problem(seed, rng);
  throw LookupError("unknown grad-check op '" + op + "'");
}

Tensor flatten(const std::vector<Tensor>& parts) {
  std::vector<double> data;
  for (const auto& t : parts) data.insert(data.end(), t.data().begin(), t.data().end());
  const std::size_t n = data.size();
  return Tensor(Shape{1, 1, n, 1}, std::move(data));
}

}  // namespace

std::vector<GradCheckReport> check_op(const std::string& op, std::uint64_t seed,
                                      double tolerance, double eps) {
  if (std::find(checkable_ops().begin(), checkable_ops().end(), op) ==
      checkable_ops().end()) {
    throw LookupError("unknown grad-check op '" + op + "'");
  }
  constexpr std::uint64_t kMaxAttempts = 10000;
  for (std::uint64_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::seed_seq seq{seed, attempt};
    std::mt19937_64 rng(seq);
    Problem p = make_problem(op, seed, rng);

    ag::Tape tape;
    const ag::Var out = p.build(tape);
    if (tape.kink_margin() < p.kink_margin) continue;

    const Tensor direction = random_normal(tape.value(out).shape(), rng);
    tape.backward(out, direction);
    auto objective = [&]() {
      ag::Tape t;
      return dot(t.value(p.build(t)), direction);
    };

    std::vector<GradCheckReport> reports;
    for (auto& [name, tensors] : p.blocks) {
      std::vector<Tensor> analytic;
      std::vector<Tensor> numeric;
      for (Tensor* slot : tensors) {
        const Tensor* g = tape.param_grad(*slot);
        analytic.push_back(g ? *g : Tensor(slot->shape()));
        const Tensor original = *slot;
        numeric.push_back(finite_diff_grad(
            [&](const Tensor& candidate) {
              *slot = candidate;
              return objective();
            },
            original, eps));
        *slot = original;
      }
      reports.push_back(compare_grads(op, name, flatten(analytic),
                                      flatten(numeric), eps, tolerance));
    }
    return reports;
  }
  throw NumericError("grad-check '" + op +
                     "': no sample cleared the ReLU kink margin");
}

bool all_pass(const std::vector<GradCheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(),
                     [](const GradCheckReport& r) { return r.pass; });
}

nlohmann::ordered_json to_json(const std::vector<GradCheckReport>& reports) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    arr.push_back({{"op", r.op},
                   {"block", r.block},
                   {"max_abs_error", r.max_abs_error},
                   {"max_rel_error", r.max_rel_error},
                   {"eps", r.eps},
                   {"tolerance", r.tolerance},
                   {"pass", r.pass}});
  }
  return {{"checks", std::move(arr)}, {"pass", all_pass(reports)}};
}

std::string to_csv(const std::vector<GradCheckReport>& reports) {
  std::ostringstream os;
  os.precision(17);
  os << "op,block,max_abs_error,max_rel_error,eps,tolerance,pass\n";
  for (const auto& r : reports) {
    os << r.op << ',' << r.block << ',' << r.max_abs_error << ','
       << r.max_rel_error << ',' << r.eps << ',' << r.tolerance << ','
       << (r.pass ? "true" : "false") << '\n';
  }
  return os.str();
}

}  // namespace d3kit
