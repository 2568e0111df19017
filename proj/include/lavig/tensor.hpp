#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lavig {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major float32 tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Same storage, new shape (element count must match).
  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);

  /// Slice along axis 0: rows [begin, begin + count).
  Tensor slice0(std::int64_t begin, std::int64_t count) const;

  void fill(float v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Bitwise equality of shape and payload.
bool bit_equal(const Tensor& a, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);

/// Stack equally-shaped tensors along a new leading axis.
Tensor stack0(const std::vector<Tensor>& parts);
/// Concatenate along axis 0.
Tensor concat0(const std::vector<Tensor>& parts);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace lavig
