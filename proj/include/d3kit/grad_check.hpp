#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "d3kit/tensor.hpp"

namespace d3kit {

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
// element of x. Throws NumericError if f returns a non-finite value and
// ArgumentError unless eps > 0.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double eps);

struct GradCheckReport {
  std::string op;
  std::string block;  // which parameter block was perturbed
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  double eps = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Error of an analytic gradient against a numeric one, relative to the
// block's gradient scale: max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|).
// Central differences at eps = 1e-6 carry about 1e-10 of rounding noise
// per element, which a per-element ratio would blow up on near-zero entries.
GradCheckReport compare_grads(const std::string& op, const std::string& block,
                              const Tensor& analytic, const Tensor& numeric,
                              double eps, double tolerance);

// Ops accepted by check_op.
const std::vector<std::string>& checkable_ops();

// Builds a seeded random instance of `op`, projects its output on a seeded
// random direction, and compares the analytic gradient of that scalar with
// finite_diff_grad for every input and parameter block. Inputs whose ReLU
// pre-activations come within the kink margin of zero are redrawn.
// Throws LookupError for an unknown op.
std::vector<GradCheckReport> check_op(const std::string& op, std::uint64_t seed,
                                      double tolerance, double eps = 1e-6);

bool all_pass(const std::vector<GradCheckReport>& reports);
nlohmann::ordered_json to_json(const std::vector<GradCheckReport>& reports);
std::string to_csv(const std::vector<GradCheckReport>& reports);

}  // namespace d3kit
