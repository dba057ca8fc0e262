#include "cogfuse/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace cogfuse {

namespace {

std::atomic<std::uint64_t> g_next_tape_id{1};
thread_local Tape* t_active_tape = nullptr;
thread_local bool t_no_grad = false;

// C += A(m x k) * B(k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C(k x n) += A(m x k)^T * B(m x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

// C(m x k) += A(m x n) * B(k x n)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      ci[p] += acc;
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

std::size_t last_dim(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw DimensionError(std::string(op) + ": scalar input has no last axis");
  return x.shape().back();
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::make_shared<const std::vector<double>>(std::move(data))) {
  if (numel(shape_) != data_->size()) {
    throw DimensionError("tensor: shape " + to_string(shape_) + " does not match " +
                         std::to_string(data_->size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor(Shape{rows, cols}, std::move(data));
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item: tensor of shape " + to_string(shape_) + " is not a scalar");
  return (*data_)[0];
}

std::span<const double> Gradients::of(const Parameter& p) const {
  auto it = grads_.find(&p);
  if (it == grads_.end()) throw ContractError("no gradient recorded for parameter '" + p.name + "'");
  return it->second;
}

// ---- tape -----------------------------------------------------------------

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

std::size_t Tape::owned_node(const Tensor& t) const {
  if (!t.requires_grad()) throw MissingNodeError("tensor is detached from any tape");
  if (t.tape_id_ != id_ || t.node_ >= nodes_.size()) {
    throw MissingNodeError("tensor was recorded on a different or cleared tape");
  }
  return t.node_;
}

Tensor Tape::variable(const Tensor& value) {
  nodes_.push_back(Node{value.shape(), {}, nullptr, nullptr});
  Tensor out(value.shape(), value.data_);
  out.tape_id_ = id_;
  out.node_ = nodes_.size() - 1;
  return out;
}

Tensor Tape::parameter(const Parameter& p) {
  nodes_.push_back(Node{p.shape, {}, nullptr, &p});
  Tensor out(p.shape, std::make_shared<const std::vector<double>>(p.value));
  out.tape_id_ = id_;
  out.node_ = nodes_.size() - 1;
  return out;
}

Tensor Tape::record(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs, BackwardFn fn) {
  Node node{shape, {}, std::move(fn), nullptr};
  node.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) node.inputs.push_back(in.requires_grad() ? owned_node(in) : kNone);
  nodes_.push_back(std::move(node));
  Tensor out(std::move(shape), std::move(data));
  out.tape_id_ = id_;
  out.node_ = nodes_.size() - 1;
  return out;
}

void Tape::backward(const Tensor& loss, Gradients& out) {
  if (loss.size() != 1) throw ContractError("backward: loss of shape " + to_string(loss.shape()) + " is not scalar");
  const std::size_t root = owned_node(loss);

  grads_.assign(nodes_.size(), {});
  grads_[root].assign(1, 1.0);
  std::vector<std::vector<double>*> input_grads;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.param != nullptr) {
      auto& acc = out.grads_[node.param];
      if (acc.empty()) acc.assign(node.param->size(), 0.0);
      if (!grads_[i].empty()) {
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += grads_[i][j];
      }
      continue;
    }
    if (grads_[i].empty() || !node.fn) continue;
    input_grads.clear();
    for (std::size_t in : node.inputs) {
      if (in == kNone) {
        input_grads.push_back(nullptr);
        continue;
      }
      if (grads_[in].empty()) grads_[in].assign(numel(nodes_[in].shape), 0.0);
      input_grads.push_back(&grads_[in]);
    }
    node.fn(grads_[i], input_grads);
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  const std::size_t n = owned_node(t);
  if (n < grads_.size() && !grads_[n].empty()) return grads_[n];
  return std::vector<double>(numel(nodes_[n].shape), 0.0);
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  id_ = g_next_tape_id.fetch_add(1);
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(t_no_grad) { t_no_grad = true; }
NoGradScope::~NoGradScope() { t_no_grad = previous_; }

Tape* active_tape() noexcept { return t_active_tape; }

Tensor use(const Parameter& p) {
  if (p.trainable && t_active_tape != nullptr && !t_no_grad) return t_active_tape->parameter(p);
  return Tensor(p.shape, p.value);
}

Tensor record_op(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs, BackwardFn fn) {
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs_grad || t_no_grad) return Tensor(std::move(shape), std::move(data));
  if (t_active_tape == nullptr) throw MissingNodeError("operation on tape-tracked tensors with no active tape");
  return t_active_tape->record(std::move(shape), std::move(data), inputs, std::move(fn));
}

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() >= 2 && b.rank() == 2) {
    const std::size_t k = a.shape().back();
    if (b.dim(0) != k) {
      throw DimensionError("matmul: inner dimensions differ for " + to_string(a.shape()) + " and " +
                           to_string(b.shape()));
    }
    const std::size_t m = a.size() / k;
    const std::size_t n = b.dim(1);
    Shape shape = a.shape();
    shape.back() = n;
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return record_op(std::move(shape), std::move(out), {a, b},
                     [a, b, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> in) {
                       if (in[0]) gemm_nt(g.data(), b.data().data(), in[0]->data(), m, n, k);
                       if (in[1]) gemm_tn(a.data().data(), g.data(), in[1]->data(), m, k, n);
                     });
  }
  if (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1)) {
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<double> out(batch * m * n, 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
      gemm_nn(a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n, m, k, n);
    }
    return record_op(Shape{batch, m, n}, std::move(out), {a, b},
                     [a, b, batch, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> in) {
                       for (std::size_t i = 0; i < batch; ++i) {
                         const double* gi = g.data() + i * m * n;
                         if (in[0]) gemm_nt(gi, b.data().data() + i * k * n, in[0]->data() + i * m * k, m, n, k);
                         if (in[1]) gemm_tn(a.data().data() + i * m * k, gi, in[1]->data() + i * k * n, m, k, n);
                       }
                     });
  }
  throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2 && a.rank() != 3) throw DimensionError("transpose: expected rank 2 or 3, got " + to_string(a.shape()));
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t r = a.shape()[a.rank() - 2], c = a.shape().back();
  std::vector<double> out(a.size());
  auto permute = [batch, r, c](const double* src, double* dst, bool accumulate) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          double& d = dst[b * r * c + j * r + i];
          d = (accumulate ? d : 0.0) + src[b * r * c + i * c + j];
        }
      }
    }
  };
  permute(a.data().data(), out.data(), false);
  Shape shape = a.shape();
  std::swap(shape[a.rank() - 2], shape[a.rank() - 1]);
  // The gradient is the inverse permutation: an (c x r) -> (r x c) transpose.
  return record_op(std::move(shape), std::move(out), {a},
                   [batch, r, c](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     for (std::size_t b = 0; b < batch; ++b) {
                       for (std::size_t i = 0; i < r; ++i) {
                         for (std::size_t j = 0; j < c; ++j) {
                           (*in[0])[b * r * c + i * c + j] += g[b * r * c + j * r + i];
                         }
                       }
                     }
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  return record_op(std::move(shape), a.to_vector(), {a},
                   [](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return record_op(a.shape(), std::move(out), {a, b},
                   [](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     for (auto* dst : in) {
                       if (!dst) continue;
                       for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
                     }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record_op(a.shape(), std::move(out), {a, b},
                   [](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     if (in[0]) for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                     if (in[1]) for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return record_op(a.shape(), std::move(out), {a, b},
                   [a, b](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     if (in[0]) for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * b[i];
                     if (in[1]) for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * a[i];
                   });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return record_op(a.shape(), std::move(out), {a},
                   [s](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * s;
                   });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = last_dim(x, "add_bias");
  if (bias.rank() != 1 || bias.size() != n) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match " + to_string(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] + bias[j];
  }
  return record_op(x.shape(), std::move(out), {x, bias},
                   [rows, n](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     if (in[0]) for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                     if (in[1]) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < n; ++j) (*in[1])[j] += g[r * n + j];
                       }
                     }
                   });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  return record_op(x.shape(), std::move(out), {x},
                   [x](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     constexpr double inv_sqrt_2pi = 0.3989422804014327;
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const double v = x[i];
                       const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
                       const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                       (*in[0])[i] += g[i] * (cdf + v * pdf);
                     }
                   });
}

Tensor square(const Tensor& x) { return mul(x, x); }

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return record_op(Shape{}, {s}, {x}, [](std::span<const double> g, std::span<std::vector<double>* const> in) {
    for (double& d : *in[0]) d += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor softmax(const Tensor& x) {
  const std::size_t n = last_dim(x, "softmax");
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double* yr = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(xr[j])) throw InvalidValueError("softmax: NaN input");
      mx = std::max(mx, xr[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  auto y = std::make_shared<const std::vector<double>>(out);
  return record_op(x.shape(), std::move(out), {x},
                   [y, rows, n](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* yr = y->data() + r * n;
                       const double* gr = g.data() + r * n;
                       double dot = 0.0;
                       for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                       for (std::size_t j = 0; j < n; ++j) (*in[0])[r * n + j] += yr[j] * (gr[j] - dot);
                     }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = last_dim(x, "layer_norm");
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine parameters " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                         " do not match width " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gamma[j] * h + beta[j];
    }
  }
  return record_op(x.shape(), std::move(out), {x, gamma, beta},
                   [xhat, rstd, gamma, rows, d](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     const double inv_d = 1.0 / static_cast<double>(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* gr = g.data() + r * d;
                       const double* hr = xhat->data() + r * d;
                       if (in[2]) for (std::size_t j = 0; j < d; ++j) (*in[2])[j] += gr[j];
                       if (in[1]) for (std::size_t j = 0; j < d; ++j) (*in[1])[j] += gr[j] * hr[j];
                       if (!in[0]) continue;
                       double mean_dh = 0.0, mean_dh_h = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dh = gr[j] * gamma[j];
                         mean_dh += dh;
                         mean_dh_h += dh * hr[j];
                       }
                       mean_dh *= inv_d;
                       mean_dh_h *= inv_d;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dh = gr[j] * gamma[j];
                         (*in[0])[r * d + j] += (*rstd)[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                       }
                     }
                   });
}

Tensor mean_pool(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("mean_pool: expected [B, L, d], got " + to_string(x.shape()));
  const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
  if (len == 0) throw DimensionError("mean_pool: empty sequence axis");
  const double inv = 1.0 / static_cast<double>(len);
  std::vector<double> out(batch * d, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += x[(b * len + i) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] *= inv;
  }
  return record_op(Shape{batch, d}, std::move(out), {x},
                   [batch, len, d, inv](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     for (std::size_t b = 0; b < batch; ++b) {
                       for (std::size_t i = 0; i < len; ++i) {
                         for (std::size_t j = 0; j < d; ++j) (*in[0])[(b * len + i) * d + j] += g[b * d + j] * inv;
                       }
                     }
                   });
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t len) {
  const std::size_t n = last_dim(x, "slice_last");
  if (start + len > n || len == 0) {
    throw DimensionError("slice_last: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") outside width " + std::to_string(n));
  }
  const std::size_t rows = x.size() / n;
  std::vector<double> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data().data() + r * n + start, len, out.data() + r * len);
  }
  Shape shape = x.shape();
  shape.back() = len;
  return record_op(std::move(shape), std::move(out), {x},
                   [rows, n, start, len](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t j = 0; j < len; ++j) (*in[0])[r * n + start + j] += g[r * len + j];
                     }
                   });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t rows = parts.front().size() / last_dim(parts.front(), "concat_last");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size() || !std::equal(first.begin(), first.end() - 1, p.shape().begin())) {
      throw DimensionError("concat_last: leading axes differ: " + to_string(first) + " vs " + to_string(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(parts[k].data().data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  Shape shape = first;
  shape.back() = total;
  return record_op(std::move(shape), std::move(out), parts,
                   [widths, rows, total](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < widths.size(); ++k) {
                       if (in[k]) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < widths[k]; ++j) (*in[k])[r * widths[k] + j] += g[r * total + off + j];
                         }
                       }
                       off += widths[k];
                     }
                   });
}

Tensor normalize_rows(const Tensor& x, bool allow_zero_rows) {
  const std::size_t n = last_dim(x, "normalize_rows");
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size(), 0.0);
  auto norms = std::make_shared<std::vector<double>>(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[r * n + j] * x[r * n + j];
    const double norm = std::sqrt(s);
    if (norm == 0.0) {
      if (!allow_zero_rows) throw DegenerateInputError("normalize_rows: row " + std::to_string(r) + " has zero norm");
      continue;
    }
    (*norms)[r] = norm;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] / norm;
  }
  auto y = std::make_shared<const std::vector<double>>(out);
  return record_op(x.shape(), std::move(out), {x},
                   [y, norms, rows, n](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double norm = (*norms)[r];
                       if (norm == 0.0) continue;
                       double dot = 0.0;
                       for (std::size_t j = 0; j < n; ++j) dot += (*y)[r * n + j] * g[r * n + j];
                       for (std::size_t j = 0; j < n; ++j) {
                         (*in[0])[r * n + j] += (g[r * n + j] - (*y)[r * n + j] * dot) / norm;
                       }
                     }
                   });
}

// ---- finite differences ---------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor xv = tape.variable(x);
    const Tensor y = f(xv);
    Gradients unused;
    if (y.requires_grad()) {
      tape.backward(y, unused);
      analytic = tape.grad(xv);
    } else {
      analytic.assign(x.size(), 0.0);
    }
  }
  NoGradScope no_tape;
  double worst = 0.0;
  std::vector<double> probe = x.to_vector();
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig - h;
    const double fm = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& loss, std::span<Parameter* const> params, double h) {
  Gradients grads;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor y = loss();
    if (y.requires_grad()) tape.backward(y, grads);
  }
  NoGradScope no_tape;
  double worst = 0.0;
  for (Parameter* p : params) {
    const std::vector<double> analytic =
        grads.contains(*p) ? std::vector<double>(grads.of(*p).begin(), grads.of(*p).end())
                           : std::vector<double>(p->size(), 0.0);
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double fp = loss().item();
      p->value[i] = orig - h;
      const double fm = loss().item();
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
    }
  }
  return worst;
}

}  // namespace cogfuse
