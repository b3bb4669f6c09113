#include "elm/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "elm/error.hpp"

namespace elm {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::Index: return "index error";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Contract: return "contract error";
    case ErrorKind::Length: return "length error";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Budget: return "budget error";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Parse: return "parse error";
  }
  return "error";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const noexcept {
  return shape_.size() >= 2 ? shape_size(Shape(shape_.begin(), shape_.end() - 1)) : 1;
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

std::span<double> Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() noexcept { std::fill(grad_.begin(), grad_.end(), 0.0); }

void Tensor::reshape(Shape shape) {
  check_extents(shape);
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

}  // namespace elm
