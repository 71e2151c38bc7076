#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace balign {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Value semantics; no gradient bookkeeping
// (see autograd.hpp for the differentiable handle).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // rank-4 NCHW accessors
  double& at(int n, int c, int y, int x) { return data_[offset4(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return data_[offset4(n, c, y, x)]; }

  Tensor reshaped(Shape shape) const;
  void fill(double value);

  bool all_finite() const noexcept;

 private:
  std::size_t offset4(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  Shape shape_;
  std::vector<double> data_;
};

// Throws NumericalError naming `where` if any element is NaN or infinite.
void require_finite(const Tensor& t, std::string_view where);

// Stack rank-r tensors of identical shape into a rank-(r+1) tensor.
Tensor stack(std::span<const Tensor> items);

}  // namespace balign
