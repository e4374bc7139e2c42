#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace cvseg {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // empty until something is accumulated
  bool requires_grad = false;

  bool has_grad() const { return grad.size() == value.size() && value.size() > 0; }
  Eigen::ArrayXd& ensure_grad() {
    if (grad.size() != value.size()) grad = Eigen::ArrayXd::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float64 array that participates in reverse-mode
/// differentiation. Copies are shallow: two handles may refer to the same
/// storage, which is what lets gradients reach parameters held elsewhere.
class DiffArray {
 public:
  DiffArray() = default;
  DiffArray(Shape shape, Eigen::ArrayXd values, bool requires_grad = false);

  static DiffArray zeros(Shape shape, bool requires_grad = false);
  static DiffArray full(Shape shape, double value, bool requires_grad = false);
  static DiffArray scalar(double value, bool requires_grad = false);
  static DiffArray from(Shape shape, const std::vector<double>& values,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index size() const { return node_->value.size(); }
  // Negative axes count from the back.
  Index dim(Index axis) const;

  const Eigen::ArrayXd& values() const { return node_->value; }
  Eigen::ArrayXd& values_mut() { return node_->value; }
  double operator[](Index flat) const { return node_->value[flat]; }
  double at(std::initializer_list<Index> index) const;
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return node_->has_grad(); }
  // Zero-filled when nothing has been accumulated yet.
  const Eigen::ArrayXd& grad() const;
  void zero_grad() const { node_->grad.resize(0); }

  // Deep copy without gradient history.
  DiffArray detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  bool same_storage(const DiffArray& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

}  // namespace cvseg
