#include "cvseg/numerics/diff_array.hpp"

#include <sstream>

#include "cvseg/errors.hpp"

namespace cvseg {

Index element_count(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + shape_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

DiffArray::DiffArray(Shape shape, Eigen::ArrayXd values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (element_count(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

DiffArray DiffArray::zeros(Shape shape, bool requires_grad) {
  const Index n = element_count(shape);
  return DiffArray(std::move(shape), Eigen::ArrayXd::Zero(n), requires_grad);
}

DiffArray DiffArray::full(Shape shape, double value, bool requires_grad) {
  const Index n = element_count(shape);
  return DiffArray(std::move(shape), Eigen::ArrayXd::Constant(n, value), requires_grad);
}

DiffArray DiffArray::scalar(double value, bool requires_grad) {
  return DiffArray({}, Eigen::ArrayXd::Constant(1, value), requires_grad);
}

DiffArray DiffArray::from(Shape shape, const std::vector<double>& values, bool requires_grad) {
  Eigen::ArrayXd v = Eigen::Map<const Eigen::ArrayXd>(values.data(),
                                                      static_cast<Index>(values.size()));
  return DiffArray(std::move(shape), std::move(v), requires_grad);
}

Index DiffArray::dim(Index axis) const {
  const Index r = rank();
  const Index a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " +
                         shape_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

double DiffArray::at(std::initializer_list<Index> index) const {
  if (static_cast<Index>(index.size()) != rank()) {
    throw IndexError("index rank mismatch for shape " + shape_string(shape()));
  }
  Index flat = 0;
  std::size_t d = 0;
  for (Index i : index) {
    const Index extent = node_->shape[d++];
    if (i < 0 || i >= extent) throw IndexError("index out of range for " + shape_string(shape()));
    flat = flat * extent + i;
  }
  return node_->value[flat];
}

double DiffArray::item() const {
  if (size() != 1) throw DimensionError("item() on array of shape " + shape_string(shape()));
  return node_->value[0];
}

const Eigen::ArrayXd& DiffArray::grad() const { return node_->ensure_grad(); }

DiffArray DiffArray::detach() const { return DiffArray(shape(), values(), false); }

}  // namespace cvseg
