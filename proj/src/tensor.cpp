#include "d2c/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace d2c {

namespace {

std::atomic<Precision> g_precision{Precision::f32};

void validate_shape(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// True when b's shape is a trailing suffix of a's (b broadcasts over a's
// leading dimensions), including the equal-shape case.
bool broadcasts_into(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

}  // namespace

void set_precision(Precision p) { g_precision.store(p); }
Precision precision() { return g_precision.load(); }

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  const Precision p = precision();
  for (double& v : values) v = quantize(v, p);
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->values.size(), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string(shape()));
  return impl_->values[0];
}

void Tensor::zero_grad() {
  if (impl_->grad.size() != impl_->values.size()) impl_->grad.assign(impl_->values.size(), 0.0);
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->values = impl_->values;
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->values.size(), 0.0);
  return Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------
// Tape plumbing

Tensor Tape::make_output(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs) {
  const Precision p = precision();
  for (double& v : values) v = quantize(v, p);
  bool needs = false;
  if (record_) {
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  }
  auto impl = std::make_shared<Tensor::Impl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = needs;
  if (needs) impl->grad.assign(impl->values.size(), 0.0);
  return Tensor(std::move(impl));
}

void Tape::record(std::vector<Tensor> inputs, const Tensor& output, std::function<void(Node&)> adjoint) {
  if (!record_ || !output.requires_grad()) return;
  if (differentiated_) throw std::logic_error("tape already differentiated; reset() before recording again");
  nodes_.push_back(Node{std::move(inputs), output, std::move(adjoint)});
}

void Tape::reset() {
  nodes_.clear();
  differentiated_ = false;
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw DimensionError("backward needs a scalar root, got " + (root.defined() ? shape_string(root.shape()) : "undefined"));
  }
  if (differentiated_) throw std::logic_error("backward called twice on the same tape without reset()");
  if (nodes_.empty()) throw std::logic_error("backward on an empty tape");
  if (!root.requires_grad()) throw std::logic_error("backward root does not depend on any parameter");
  differentiated_ = true;

  for (Node& n : nodes_) {
    for (Tensor& in : n.inputs) {
      if (in.requires_grad()) in.zero_grad();
    }
    n.output.zero_grad();
  }
  Tensor r = root;
  r.mutable_grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->adjoint(*it);
}

// ---------------------------------------------------------------------------
// Operations

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  Tensor y = make_output({m, n}, std::move(out), {&a, &b});
  record({a, b}, y, [m, k, n](Node& node) {
    Tensor& a = node.inputs[0];
    Tensor& b = node.inputs[1];
    const auto g = node.output.grad();
    if (a.requires_grad()) {
      // ga += g * b^T, with b transposed once so the inner loop is contiguous.
      auto ga = a.mutable_grad();
      const auto bv = b.values();
      std::vector<double> bt(k * n);
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bv[p * n + j];
      }
      for (std::size_t i = 0; i < m; ++i) {
        double* grow = ga.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double s = g[i * n + j];
          if (s == 0.0) continue;
          const double* trow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) grow[p] += s * trow[p];
        }
      }
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      const auto av = a.values();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double s = av[i * k + p];
          if (s == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += s * g[i * n + j];
        }
      }
    }
  });
  return y;
}

Tensor Tape::binary(Binary op, const Tensor& a, const Tensor& b) {
  if (!broadcasts_into(a.shape(), b.shape())) {
    throw DimensionError("cannot broadcast " + shape_string(b.shape()) + " into " + shape_string(a.shape()));
  }
  const std::size_t n = a.size();
  const std::size_t nb = b.size();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i], y = bv[i % nb];
    out[i] = op == Binary::add ? x + y : op == Binary::sub ? x - y : x * y;
  }
  Tensor y = make_output(a.shape(), std::move(out), {&a, &b});
  record({a, b}, y, [op, n, nb](Node& node) {
    Tensor& a = node.inputs[0];
    Tensor& b = node.inputs[1];
    const auto g = node.output.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      const auto bv = b.values();
      for (std::size_t i = 0; i < n; ++i) ga[i] += op == Binary::mul ? g[i] * bv[i % nb] : g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      const auto av = a.values();
      const double sign = op == Binary::sub ? -1.0 : 1.0;
      for (std::size_t i = 0; i < n; ++i) gb[i % nb] += op == Binary::mul ? g[i] * av[i] : sign * g[i];
    }
  });
  return y;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) { return binary(Binary::add, a, b); }
Tensor Tape::sub(const Tensor& a, const Tensor& b) { return binary(Binary::sub, a, b); }
Tensor Tape::mul(const Tensor& a, const Tensor& b) { return binary(Binary::mul, a, b); }

Tensor Tape::scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  Tensor y = make_output(a.shape(), std::move(out), {&a});
  record({a}, y, [s](Node& node) {
    auto ga = node.inputs[0].mutable_grad();
    const auto g = node.output.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
  return y;
}

Tensor Tape::silu(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * sigmoid(av[i]);
  Tensor y = make_output(a.shape(), std::move(out), {&a});
  record({a}, y, [](Node& node) {
    auto ga = node.inputs[0].mutable_grad();
    const auto av = node.inputs[0].values();
    const auto g = node.output.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(av[i]);
      ga[i] += g[i] * s * (1.0 + av[i] * (1.0 - s));
    }
  });
  return y;
}

Tensor Tape::tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  Tensor y = make_output(a.shape(), std::move(out), {&a});
  record({a}, y, [](Node& node) {
    auto ga = node.inputs[0].mutable_grad();
    const auto yv = node.output.values();
    const auto g = node.output.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - yv[i] * yv[i]);
  });
  return y;
}

Tensor Tape::reduce(const Tensor& a, std::optional<std::size_t> axis, bool mean) {
  if (!axis) {
    if (a.size() == 0) throw DimensionError("reduction over an empty tensor");
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    const double count = static_cast<double>(a.size());
    Tensor y = make_output({}, {mean ? acc / count : acc}, {&a});
    record({a}, y, [mean, count](Node& node) {
      auto ga = node.inputs[0].mutable_grad();
      const double g = node.output.grad()[0] * (mean ? 1.0 / count : 1.0);
      for (double& v : ga) v += g;
    });
    return y;
  }
  if (*axis >= a.rank()) {
    throw DimensionError("reduction axis " + std::to_string(*axis) + " out of range for " + shape_string(a.shape()));
  }
  const Shape& s = a.shape();
  const std::size_t extent = s[*axis];
  if (extent == 0) throw DimensionError("reduction over an empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < *axis; ++i) outer *= s[i];
  for (std::size_t i = *axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != *axis) out_shape.push_back(s[i]);
  }
  std::vector<double> out(outer * inner, 0.0);
  const auto av = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t e = 0; e < extent; ++e) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * extent + e) * inner + i];
    }
  }
  const double factor = mean ? 1.0 / static_cast<double>(extent) : 1.0;
  if (mean) {
    for (double& v : out) v *= factor;
  }
  Tensor y = make_output(std::move(out_shape), std::move(out), {&a});
  record({a}, y, [outer, extent, inner, factor](Node& node) {
    auto ga = node.inputs[0].mutable_grad();
    const auto g = node.output.grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t e = 0; e < extent; ++e) {
        for (std::size_t i = 0; i < inner; ++i) ga[(o * extent + e) * inner + i] += factor * g[o * inner + i];
      }
    }
  });
  return y;
}

Tensor Tape::sum(const Tensor& a, std::optional<std::size_t> axis) { return reduce(a, axis, false); }
Tensor Tape::mean(const Tensor& a, std::optional<std::size_t> axis) { return reduce(a, axis, true); }

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  validate_shape(shape);
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("cannot reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  Tensor y = make_output(std::move(shape), std::move(out), {&a});
  record({a}, y, [](Node& node) {
    auto ga = node.inputs[0].mutable_grad();
    const auto g = node.output.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return y;
}

Tensor Tape::row_normalize(const Tensor& a, double eps) {
  if (a.rank() != 2) throw DimensionError("row_normalize expects a 2-D tensor, got " + shape_string(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto av = a.values();
  std::vector<double> out(a.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += av[r * cols + c] * av[r * cols + c];
    norms[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] / norms[r];
  }
  Tensor y = make_output(a.shape(), std::move(out), {&a});
  record({a}, y, [rows, cols, eps, norms = std::move(norms)](Node& node) {
    auto ga = node.inputs[0].mutable_grad();
    const auto av = node.inputs[0].values();
    const auto g = node.output.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double n = norms[r];
      if (n <= eps) {
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r * cols + c] / eps;
        continue;
      }
      // d(x/|x|) = (g - u (u.g)) / |x| with u = x/|x|, using the unrounded u.
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * av[r * cols + c] / n;
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += (g[r * cols + c] - av[r * cols + c] / n * dot) / n;
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<NamedTensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    if (!p.tensor.requires_grad()) throw std::invalid_argument("Adam parameter '" + p.name + "' does not require grad");
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const Precision prec = precision();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    auto w = t.mutable_values();
    const auto g = t.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] = quantize(w[j] - config_.lr * mhat / (std::sqrt(vhat) + config_.eps), prec);
    }
  }
}

}  // namespace d2c
