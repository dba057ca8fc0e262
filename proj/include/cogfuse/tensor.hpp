#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cogfuse/errors.hpp"

namespace cogfuse {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// A named, learnable array. Owned by the layer that uses it; the tape only
// ever refers to it by address for the duration of one step.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name_, Shape shape_)
      : name(std::move(name_)), shape(std::move(shape_)), value(numel(shape), 0.0) {}

  std::size_t size() const noexcept { return value.size(); }
};

// Dense row-major array of doubles. The payload is immutable and shared, so
// copies are cheap and safe to hand across threads. A tensor that was produced
// on a tape remembers the tape and its node index.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<const std::vector<double>>()) {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_->size(); }
  std::span<const double> data() const noexcept { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;
  std::vector<double> to_vector() const { return *data_; }

  bool requires_grad() const noexcept { return tape_id_ != 0; }
  std::uint64_t tape_id() const noexcept { return tape_id_; }
  std::size_t node() const noexcept { return node_; }
  Tensor detach() const { return Tensor(shape_, data_); }

 private:
  friend class Tape;
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data)
      : shape_(std::move(shape)), data_(std::move(data)) {}

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::uint64_t tape_id_ = 0;
  std::size_t node_ = 0;
};

// Parameter gradients keyed by parameter identity. Successive backward passes
// into the same map accumulate.
class Gradients {
 public:
  bool contains(const Parameter& p) const { return grads_.count(&p) != 0; }
  std::span<const double> of(const Parameter& p) const;
  std::size_t size() const noexcept { return grads_.size(); }
  void clear() { grads_.clear(); }

 private:
  friend class Tape;
  std::unordered_map<const Parameter*, std::vector<double>> grads_;
};

// Backward rule for one recorded operation: given dL/d(output), add the
// contribution to each input gradient. Inputs that do not require a gradient
// get a null pointer.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> input_grads)>;

// Ordered record of the operations of one forward pass. Nodes are appended in
// execution order, which is a topological order by construction.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const noexcept { return id_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Tensor variable(const Tensor& value);
  Tensor parameter(const Parameter& p);
  Tensor record(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs, BackwardFn fn);

  void backward(const Tensor& loss, Gradients& out);
  // Gradient of a node after the last backward pass (zeros if unreached).
  std::vector<double> grad(const Tensor& t) const;
  void clear();

 private:
  struct Node {
    Shape shape;
    std::vector<std::size_t> inputs;  // npos for constants
    BackwardFn fn;
    const Parameter* param = nullptr;
  };
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  std::size_t owned_node(const Tensor& t) const;

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// Makes a tape the active one for the calling thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on the calling thread; operations produce constants.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

Tape* active_tape() noexcept;

// Leaf for a parameter: recorded on the active tape when the parameter is
// trainable, otherwise a constant.
Tensor use(const Parameter& p);

// Records an operation on the active tape if any input requires a gradient,
// else returns a constant tensor.
Tensor record_op(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs, BackwardFn fn);

// ---- primitives -----------------------------------------------------------

// [..., m, k] x [k, n] -> [..., m, n], or batched [B, m, k] x [B, k, n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes (rank 2 or 3).
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// Adds a vector of width shape.back() to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor gelu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// [B, L, d] -> [B, d], arithmetic mean over the L axis.
Tensor mean_pool(const Tensor& x);
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t len);
Tensor concat_last(const std::vector<Tensor>& parts);
// Divides each row (last axis) by its L2 norm. A zero row is an error unless
// allow_zero_rows is set, in which case it maps to zero.
Tensor normalize_rows(const Tensor& x, bool allow_zero_rows = false);

// ---- finite-difference oracle --------------------------------------------

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar function of one tensor.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

// Same check over the given parameters of a scalar loss closure.
double grad_check_params(const std::function<Tensor()>& loss, std::span<Parameter* const> params, double h = 1e-5);

}  // namespace cogfuse
