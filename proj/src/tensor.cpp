#include "d3kit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "d3kit/errors.hpp"

namespace d3kit {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
  return os.str();
}

namespace {

void check_dims(const Shape& s) {
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
    throw DimensionError("tensor dimensions must be >= 1, got " + s.str());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " +
                         a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  check_dims(shape_);
  data_.assign(shape_.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_.numel()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
  }
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape& first = inputs.front().shape();
  std::size_t channels = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw DimensionError("concat_channels: " + s.str() +
                           " incompatible with " + first.str());
    }
    channels += s.c;
  }
  Tensor out(Shape{first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t dst_c = 0;
    for (const auto& t : inputs) {
      const std::size_t count = t.shape().c * plane;
      std::copy_n(t.plane(n, 0), count, out.plane(n, dst_c));
      dst_c += t.shape().c;
    }
  }
  return out;
}

Tensor concat_channels(std::initializer_list<Tensor> inputs) {
  return concat_channels(std::span<const Tensor>(inputs.begin(), inputs.size()));
}

Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end) {
  const Shape& s = input.shape();
  if (begin >= end || end > s.c) {
    throw DimensionError("slice_channels: bad range [" + std::to_string(begin) +
                         "," + std::to_string(end) + ") of " + s.str());
  }
  Tensor out(Shape{s.n, end - begin, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(input.plane(n, begin), (end - begin) * s.plane(),
                out.plane(n, 0));
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

void add_inplace(Tensor& acc, const Tensor& b) {
  require_same_shape(acc, b, "add");
  auto dst = acc.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor scaled(const Tensor& a, double factor) {
  Tensor out = a;
  for (double& v : out.data()) v *= factor;
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

double sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return acc;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_rel_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a.data()[i];
    const double y = b.data()[i];
    const double denom = std::max(std::abs(x), std::abs(y));
    if (denom > 0.0) m = std::max(m, std::abs(x - y) / denom);
  }
  return m;
}

Tensor random_normal(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor out(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : out.data()) v = dist(rng);
  return out;
}

}  // namespace d3kit
