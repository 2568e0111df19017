#include "lavig/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace lavig {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for shape " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data_.size()))
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
}

Tensor Tensor::slice0(std::int64_t begin, std::int64_t count) const {
  if (rank() == 0 || begin < 0 || count < 0 || begin + count > shape_[0])
    throw ShapeError("slice [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of range for " +
                     shape_str(shape_));
  Shape s = shape_;
  s[0] = count;
  const std::size_t inner = shape_[0] == 0 ? 0 : data_.size() / static_cast<std::size_t>(shape_[0]);
  std::vector<float> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                       data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * inner));
  return Tensor(std::move(s), std::move(v));
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack0 of nothing");
  Shape s{static_cast<std::int64_t>(parts.size())};
  for (auto d : parts.front().shape()) s.push_back(d);
  std::vector<float> v;
  v.reserve(static_cast<std::size_t>(shape_numel(s)));
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) throw ShapeError("stack0 shape mismatch");
    v.insert(v.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor(std::move(s), std::move(v));
}

Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat0 of nothing");
  Shape s = parts.front().shape();
  s[0] = 0;
  std::vector<float> v;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s.size())) throw ShapeError("concat0 rank mismatch");
    for (std::size_t i = 1; i < s.size(); ++i)
      if (p.shape()[i] != s[i]) throw ShapeError("concat0 shape mismatch");
    s[0] += p.shape()[0];
    v.insert(v.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor(std::move(s), std::move(v));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace lavig
