#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wnp/core.hpp"

namespace wnp {

class Tape;

/// Dense row-major array of doubles with an optional handle into a Tape.
///
/// Values are immutable and shared, so copying a Tensor is cheap. A tensor is
/// "tracked" when it was produced by a Tape (either as a variable or as the
/// result of an operation on tracked inputs); gradients are only available
/// for tracked tensors.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> values)
      : Tensor(std::move(shape),
               std::make_shared<const std::vector<double>>(std::move(values))) {}

  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (element_count(shape_) != values_->size()) {
      throw ShapeError("tensor shape " + to_string(shape_) + " holds " +
                       std::to_string(element_count(shape_)) + " values, got " +
                       std::to_string(values_->size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }
  static Tensor filled(Shape shape, double value) {
    const std::size_t n = element_count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_->size(); }

  std::size_t rows() const {
    require_matrix("rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix("cols");
    return shape_[1];
  }

  std::span<const double> values() const { return {values_->data(), values_->size()}; }
  const std::shared_ptr<const std::vector<double>>& shared_values() const { return values_; }

  double operator[](std::size_t i) const { return (*values_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*values_)[r * shape_[1] + c]; }

  double item() const {
    if (size() != 1) {
      throw ShapeError("item() on tensor of shape " + to_string(shape_));
    }
    return (*values_)[0];
  }

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  /// Same values, no tape handle.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
  }

  bool all_finite() const {
    for (double v : *values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  friend class Tape;

  void require_matrix(const char* what) const {
    if (rank() != 2) {
      throw ShapeError(std::string(what) + "() needs a matrix, got shape " +
                       to_string(shape_));
    }
  }

  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Per-node gradient accumulators used during a backward sweep.
class GradBuffers {
 public:
  explicit GradBuffers(std::vector<std::size_t> sizes)
      : sizes_(std::move(sizes)), grads_(sizes_.size()) {}

  /// Accumulator for node `id`, zero-initialised on first access.
  std::span<double> at(std::size_t id) {
    auto& g = grads_[id];
    if (g.empty() && sizes_[id] != 0) g.assign(sizes_[id], 0.0);
    return {g.data(), g.size()};
  }

  bool touched(std::size_t id) const { return !grads_[id].empty(); }
  std::span<const double> view(std::size_t id) const {
    return {grads_[id].data(), grads_[id].size()};
  }

  std::vector<std::vector<double>> release() && { return std::move(grads_); }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::vector<double>> grads_;
};

/// Gradients of a scalar loss with respect to the nodes of one tape.
class Gradients {
 public:
  Gradients(const Tape* origin, std::vector<Shape> shapes,
            std::vector<std::vector<double>> grads)
      : origin_(origin), shapes_(std::move(shapes)), grads_(std::move(grads)) {}

  /// Gradient with respect to `t`; zeros when the loss does not depend on it.
  Tensor of(const Tensor& t) const {
    if (!t.tracked() || t.tape() != origin_) {
      throw ContractError("gradient requested for a tensor not recorded on this tape");
    }
    const auto& g = grads_.at(t.node());
    if (g.empty()) return Tensor::zeros(shapes_[t.node()]);
    return Tensor(shapes_[t.node()], g);
  }

 private:
  const Tape* origin_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> grads_;
};

/// Append-only record of differentiable operations.
///
/// Nodes are appended as operations execute, so every node's parents precede
/// it. backward() walks the nodes once in reverse order and does not modify
/// the tape; calling it twice gives identical results.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out, GradBuffers&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable leaf.
  Tensor variable(const Tensor& value) {
    Tensor t = value.detached();
    attach(t, {}, nullptr);
    return t;
  }

  /// Records the result of an operation. `parents` lists the tracked input
  /// nodes; `fn` scatters the output gradient into them.
  Tensor record(Shape shape, std::shared_ptr<const std::vector<double>> values,
                std::vector<std::size_t> parents, BackwardFn fn) {
    Tensor t(std::move(shape), std::move(values));
    for (std::size_t p : parents) {
      if (p >= nodes_.size()) throw ContractError("tape parent out of order");
    }
    attach(t, std::move(parents), std::move(fn));
    return t;
  }

  std::size_t size() const { return nodes_.size(); }

  Gradients backward(const Tensor& loss) const {
    if (!loss.tracked() || loss.tape() != this) {
      throw ContractError("backward() needs a loss recorded on this tape");
    }
    if (loss.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " +
                          to_string(loss.shape()));
    }
    std::vector<std::size_t> sizes;
    std::vector<Shape> shapes;
    sizes.reserve(nodes_.size());
    shapes.reserve(nodes_.size());
    for (const auto& n : nodes_) {
      sizes.push_back(Tensor::element_count(n.shape));
      shapes.push_back(n.shape);
    }
    GradBuffers buffers(std::move(sizes));
    buffers.at(loss.node())[0] = 1.0;
    for (std::size_t i = loss.node() + 1; i-- > 0;) {
      const auto& n = nodes_[i];
      if (!n.backward || !buffers.touched(i)) continue;
      // Parents have smaller ids, so node i's buffer stays put while they fill.
      n.backward(buffers.view(i), buffers);
    }
    return Gradients(this, std::move(shapes), std::move(buffers).release());
  }

 private:
  struct Node {
    Shape shape;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  void attach(Tensor& t, std::vector<std::size_t> parents, BackwardFn fn) {
    t.tape_ = this;
    t.node_ = nodes_.size();
    nodes_.push_back(Node{t.shape(), std::move(parents), std::move(fn)});
  }

  std::vector<Node> nodes_;
};

}  // namespace wnp
