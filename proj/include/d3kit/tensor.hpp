#pragma once

#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace d3kit {

// Dimensions of a rank-4 array, row-major n -> c -> h -> w. Convolution
// weights reuse the same layout as [out, in, kh, kw].
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  std::string str() const;
  bool operator==(const Shape&) const = default;
};

// Dense f64 feature map. All dimensions are at least one; width 1 is the
// 1-D case.
class Tensor {
 public:
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t channels() const { return shape_.c; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h,
                    std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& operator()(std::size_t n, std::size_t c, std::size_t h,
                     std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t h,
                    std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  // Pointer to the contiguous h*w plane of (n, c).
  double* plane(std::size_t n, std::size_t c) {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }
  const double* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  // Bit-exact comparison of shape and contents.
  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Concatenation along the channel axis, preserving input order.
Tensor concat_channels(std::span<const Tensor> inputs);
Tensor concat_channels(std::initializer_list<Tensor> inputs);

// Channels [begin, end) of every batch item.
Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, double factor);
void add_inplace(Tensor& acc, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Largest |a-b| / max(|a|, |b|) over elements, counting 0/0 as 0.
double max_rel_diff(const Tensor& a, const Tensor& b);

Tensor random_normal(Shape shape, std::mt19937_64& rng, double stddev = 1.0);

}  // namespace d3kit
