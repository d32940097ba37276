#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Values are held as doubles. In the default 32-bit mode every forward result
// (and every optimizer write) is rounded to the nearest float, so the numbers
// a run produces are exactly the numbers a float implementation would store.
// The 64-bit mode skips that rounding and is what gradient checks run under.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace d2c {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& s);
std::size_t shape_numel(const Shape& s);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { f32, f64 };

void set_precision(Precision p);
Precision precision();

/// Rounds to float when the global mode is f32.
inline double quantize(double v, Precision p) { return p == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v; }
inline double quantize(double v) { return quantize(v, precision()); }

/// Scoped precision override; restores the previous mode on exit.
class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) : saved_(precision()) { set_precision(p); }
  ~PrecisionScope() { set_precision(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->values.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }

  std::span<const double> values() const { return impl_->values; }
  /// Direct write access, for initializers and optimizers only.
  std::span<double> mutable_values() { return impl_->values; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->values[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }
  void zero_grad();

  /// Deep copy with a fresh grad buffer.
  Tensor clone(bool requires_grad) const;
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;

  friend class Tape;
};

/// Records differentiable operations in execution order.
///
/// A tape and the tensors it produces belong to one thread. A tape created
/// with record == false evaluates operations without keeping adjoints, which
/// is what inference paths use.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double s);
  Tensor silu(const Tensor& a);
  Tensor tanh(const Tensor& a);
  Tensor sum(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
  Tensor mean(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
  Tensor reshape(const Tensor& a, Shape shape);
  /// Each row of a 2-D tensor divided by its L2 norm (rows with norm below
  /// eps are divided by eps instead).
  Tensor row_normalize(const Tensor& a, double eps = 1e-12);

  /// x·w + b with b broadcast over rows.
  Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

  /// Populates grad of every requires_grad tensor reachable from root with
  /// d root / d tensor. A tape may be differentiated once; call reset() to
  /// reuse it.
  void backward(const Tensor& root);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(Node&)> adjoint;
  };

  Tensor make_output(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs);
  void record(std::vector<Tensor> inputs, const Tensor& output, std::function<void(Node&)> adjoint);
  enum class Binary { add, sub, mul };
  Tensor binary(Binary op, const Tensor& a, const Tensor& b);
  Tensor reduce(const Tensor& a, std::optional<std::size_t> axis, bool mean);

  std::vector<Node> nodes_;
  bool record_;
  bool differentiated_ = false;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Bias-corrected Adam over a fixed list of parameters.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamConfig config = {});

  /// Applies one update from the parameters' current grad buffers.
  /// Throws NumericError naming the parameter if any gradient is non-finite;
  /// no parameter is modified in that case.
  void step();

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  std::span<const double> first_moment(std::size_t i) const { return m_[i]; }
  std::span<const double> second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<NamedTensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_ = 0;
};

}  // namespace d2c
