#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mhn/errors.hpp"

namespace mhn {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// One node of the recorded computation graph. Parent handles keep the
// graph alive until backward() releases them; trainable leaves outlive
// the graph through their owning ParamStore.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;  // trainable leaf
  bool needs_grad = false;     // reachable from a trainable leaf
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  std::uint64_t mark = 0;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}

inline std::uint64_t next_mark() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

}  // namespace detail

// Disables graph recording within a scope; forward values still computed.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major f64 tensor; a cheap handle into the autodiff graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (detail::numel_of(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + detail::shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(detail::numel_of(shape), 0.0);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    std::vector<double> d(detail::numel_of(shape), v);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t numel() const { return node_->value.size(); }

  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }

  double item() const {
    if (numel() != 1)
      throw ContractError("item() on non-scalar tensor " + detail::shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool needs_grad() const { return node_->needs_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  const std::vector<double>& grad() const {
    if (!has_grad())
      throw ContractError("gradient buffer not populated");
    return node_->grad;
  }

  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::initializer_list<Tensor> inputs,
                          std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.node()->needs_grad;
  if (needs && grad_mode()) {
    n->needs_grad = true;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(n));
}

inline Tensor make_result(Shape shape, std::vector<double> value,
                          const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.node()->needs_grad;
  if (needs && grad_mode()) {
    n->needs_grad = true;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(n));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (int k = 0; k < 2; ++k) {
      detail::Node& p = *self.parents[k];
      if (!p.needs_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (pa.needs_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.needs_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (pa.needs_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.needs_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  return detail::make_result(a.shape(), std::move(out), {a}, [c](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + c;
  return detail::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

// x: [..., d] plus a [d] bias broadcast over leading dims.
inline Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 1 || bias.rank() != 1 || x.dim(x.rank() - 1) != bias.dim(0))
    throw DimensionError("add_rowwise: " + detail::shape_str(x.shape()) + " + " +
                         detail::shape_str(bias.shape()));
  const std::size_t d = bias.dim(0);
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.value()[r * d + j] + bias.value()[j];
  return detail::make_result(x.shape(), std::move(out), {x, bias}, [d, rows](detail::Node& self) {
    detail::Node& px = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (px.needs_grad) {
      px.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    }
    if (pb.needs_grad) {
      pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) pb.grad[j] += self.grad[r * d + j];
    }
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (detail::numel_of(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + detail::shape_str(a.shape()) + " as " +
                         detail::shape_str(shape));
  std::vector<double> out = a.value();
  return detail::make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw DimensionError("transpose expects rank-2, got " + detail::shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  return detail::make_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul expects rank-2 tensors: " + detail::shape_str(a.shape()) +
                         " x " + detail::shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (k != b.dim(0))
    throw DimensionError("matmul: inner dimensions disagree, " + detail::shape_str(a.shape()) +
                         " x " + detail::shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  {
    const double* A = a.value().data();
    const double* B = b.value().data();
    for (std::size_t i = 0; i < m; ++i) {
      double* C = out.data() + i * n;
      const double* Ai = A + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = Ai[p];
        const double* Bp = B + p * n;
        for (std::size_t j = 0; j < n; ++j) C[j] += aip * Bp[j];
      }
    }
  }
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    const double* G = self.grad.data();
    if (pa.needs_grad) {
      pa.ensure_grad();
      const double* B = pb.value.data();
      // dA = G B^T, four output rows at a time so each B row is read once
      // per block.
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        const double* G0 = G + i * n;
        const double* G1 = G0 + n;
        const double* G2 = G1 + n;
        const double* G3 = G2 + n;
        double* dA0 = pa.grad.data() + i * k;
        double* dA1 = dA0 + k;
        double* dA2 = dA1 + k;
        double* dA3 = dA2 + k;
        for (std::size_t p = 0; p < k; ++p) {
          const double* Bp = B + p * n;
          double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const double b = Bp[j];
            a0 += G0[j] * b;
            a1 += G1[j] * b;
            a2 += G2[j] * b;
            a3 += G3[j] * b;
          }
          dA0[p] += a0;
          dA1[p] += a1;
          dA2[p] += a2;
          dA3[p] += a3;
        }
      }
      for (; i < m; ++i) {
        const double* Gi = G + i * n;
        double* dAi = pa.grad.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const double* Bp = B + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += Gi[j] * Bp[j];
          dAi[p] += acc;
        }
      }
    }
    if (pb.needs_grad) {
      pb.ensure_grad();
      const double* A = pa.value.data();
      // dB = A^T G, p-outer keeps each dB row resident while G streams.
      for (std::size_t p = 0; p < k; ++p) {
        double* dBp = pb.grad.data() + p * n;
        for (std::size_t i = 0; i < m; ++i) {
          const double aip = A[i * k + p];
          const double* Gi = G + i * n;
          for (std::size_t j = 0; j < n; ++j) dBp[j] += aip * Gi[j];
        }
      }
    }
  });
}

// a [m,k] times b [n,k] transposed -> [m,n]; avoids materialized transposes
// in attention score computations.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: incompatible shapes " + detail::shape_str(a.shape()) +
                         " x " + detail::shape_str(b.shape()) + "^T");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(m * n);
  {
    const double* A = a.value().data();
    const double* B = b.value().data();
    for (std::size_t i = 0; i < m; ++i) {
      const double* Ai = A + i * k;
      double* Ci = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* Bj = B + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += Ai[p] * Bj[p];
        Ci[j] = acc;
      }
    }
  }
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    const double* G = self.grad.data();
    if (pa.needs_grad) {
      pa.ensure_grad();
      const double* B = pb.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* Gi = G + i * n;
        double* dAi = pa.grad.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = Gi[j];
          const double* Bj = B + j * k;
          for (std::size_t p = 0; p < k; ++p) dAi[p] += gij * Bj[p];
        }
      }
    }
    if (pb.needs_grad) {
      pb.ensure_grad();
      const double* A = pa.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* Gi = G + i * n;
        const double* Ai = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = Gi[j];
          double* dBj = pb.grad.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) dBj[p] += gij * Ai[p];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Concatenation / slicing / gathering
// ---------------------------------------------------------------------------

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty input list");
  const std::size_t cols = parts.front().rank() == 2 ? parts.front().dim(1) : 0;
  if (cols == 0)
    throw DimensionError("concat_rows expects rank-2 parts");
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(1) != cols)
      throw DimensionError("concat_rows: part shape " + detail::shape_str(p.shape()) +
                           " incompatible with width " + std::to_string(cols));
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const Tensor& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  std::vector<std::size_t> sizes;
  sizes.reserve(parts.size());
  for (const Tensor& p : parts) sizes.push_back(p.numel());
  return detail::make_result({rows, cols}, std::move(out), parts,
                             [sizes = std::move(sizes)](detail::Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 detail::Node& p = *self.parents[k];
                                 if (p.needs_grad) {
                                   p.ensure_grad();
                                   for (std::size_t i = 0; i < sizes[k]; ++i)
                                     p.grad[i] += self.grad[off + i];
                                 }
                                 off += sizes[k];
                               }
                             });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty input list");
  const std::size_t rows = parts.front().rank() == 2 ? parts.front().dim(0) : 0;
  if (rows == 0)
    throw DimensionError("concat_cols expects rank-2 parts");
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows)
      throw DimensionError("concat_cols: part shape " + detail::shape_str(p.shape()) +
                           " incompatible with height " + std::to_string(rows));
    widths.push_back(p.dim(1));
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) out[r * cols + off + j] = v[r * widths[k] + j];
    off += widths[k];
  }
  return detail::make_result({rows, cols}, std::move(out), parts,
                             [rows, cols, widths = std::move(widths)](detail::Node& self) {
                               std::size_t off2 = 0;
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 detail::Node& p = *self.parents[k];
                                 if (p.needs_grad) {
                                   p.ensure_grad();
                                   for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                       p.grad[r * widths[k] + j] += self.grad[r * cols + off2 + j];
                                 }
                                 off2 += widths[k];
                               }
                             });
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  if (a.rank() != 2 || r1 > a.dim(0) || r0 >= r1)
    throw DimensionError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") of " + detail::shape_str(a.shape()));
  const std::size_t cols = a.dim(1);
  std::vector<double> out(a.value().begin() + r0 * cols, a.value().begin() + r1 * cols);
  return detail::make_result({r1 - r0, cols}, std::move(out), {a},
                             [r0, cols](detail::Node& self) {
                               detail::Node& p = *self.parents[0];
                               if (!p.needs_grad) return;
                               p.ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 p.grad[r0 * cols + i] += self.grad[i];
                             });
}

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  if (a.rank() != 2 || c1 > a.dim(1) || c0 >= c1)
    throw DimensionError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") of " + detail::shape_str(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = a.value()[r * cols + c0 + j];
  return detail::make_result({rows, w}, std::move(out), {a},
                             [rows, cols, c0, w](detail::Node& self) {
                               detail::Node& p = *self.parents[0];
                               if (!p.needs_grad) return;
                               p.ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t j = 0; j < w; ++j)
                                   p.grad[r * cols + c0 + j] += self.grad[r * w + j];
                             });
}

// Row lookup with scatter-add backward; the embedding primitive.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.rank() != 2)
    throw DimensionError("gather_rows expects rank-2, got " + detail::shape_str(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  for (std::size_t i : idx)
    if (i >= rows)
      throw DimensionError("gather_rows: index " + std::to_string(i) + " out of range " +
                           std::to_string(rows));
  std::vector<double> out(idx.size() * cols);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(a.value().begin() + idx[r] * cols, cols, out.begin() + r * cols);
  return detail::make_result({idx.size(), cols}, std::move(out), {a},
                             [idx, cols](detail::Node& self) {
                               detail::Node& p = *self.parents[0];
                               if (!p.needs_grad) return;
                               p.ensure_grad();
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                 for (std::size_t j = 0; j < cols; ++j)
                                   p.grad[idx[r] * cols + j] += self.grad[r * cols + j];
                             });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

// Numerically stable softmax over the trailing dimension.
inline Tensor softmax_last(const Tensor& x) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) < 1)
    throw DimensionError("softmax_last on " + detail::shape_str(x.shape()));
  const std::size_t n = x.dim(x.rank() - 1);
  const std::size_t slices = x.numel() / n;
  std::vector<double> out(x.numel());
  for (std::size_t s = 0; s < slices; ++s) {
    const double* xi = x.value().data() + s * n;
    double* yi = out.data() + s * n;
    double mx = xi[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (std::size_t j = 0; j < n; ++j) yi[j] /= sum;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [n, slices](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t s = 0; s < slices; ++s) {
      const double* y = self.value.data() + s * n;
      const double* g = self.grad.data() + s * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      double* dx = p.grad.data() + s * n;
      for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
}

inline Tensor log_softmax_last(const Tensor& x) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) < 1)
    throw DimensionError("log_softmax_last on " + detail::shape_str(x.shape()));
  const std::size_t n = x.dim(x.rank() - 1);
  const std::size_t slices = x.numel() / n;
  std::vector<double> out(x.numel());
  for (std::size_t s = 0; s < slices; ++s) {
    const double* xi = x.value().data() + s * n;
    double* yi = out.data() + s * n;
    double mx = xi[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(xi[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) yi[j] = xi[j] - lse;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [n, slices](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t s = 0; s < slices; ++s) {
      const double* y = self.value.data() + s * n;
      const double* g = self.grad.data() + s * n;
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[j];
      double* dx = p.grad.data() + s * n;
      for (std::size_t j = 0; j < n; ++j) dx[j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

// Per-slice standardization over the trailing dimension, then affine.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() < 1) throw DimensionError("layer_norm on scalarless shape");
  const std::size_t d = x.dim(x.rank() - 1);
  if (d == 0) throw DimensionError("layer_norm: trailing dimension is zero");
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
    throw DimensionError("layer_norm: affine params " + detail::shape_str(gamma.shape()) + "/" +
                         detail::shape_str(beta.shape()) + " do not match width " +
                         std::to_string(d));
  constexpr double kEps = 1e-5;
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.value().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xi[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xi[j] - mean) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gamma.value()[j] + beta.value()[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        detail::Node& px = *self.parents[0];
        detail::Node& pg = *self.parents[1];
        detail::Node& pb = *self.parents[2];
        const double* G = self.grad.data();
        if (pg.needs_grad) {
          pg.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) pg.grad[j] += G[r * d + j] * xhat[r * d + j];
        }
        if (pb.needs_grad) {
          pb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) pb.grad[j] += G[r * d + j];
        }
        if (px.needs_grad) {
          px.ensure_grad();
          const double* gam = pg.value.data();
          for (std::size_t r = 0; r < rows; ++r) {
            const double* g = G + r * d;
            const double* h = xhat.data() + r * d;
            double mean_gg = 0.0, mean_ggh = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gg = g[j] * gam[j];
              mean_gg += gg;
              mean_ggh += gg * h[j];
            }
            mean_gg /= static_cast<double>(d);
            mean_ggh /= static_cast<double>(d);
            double* dx = px.grad.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) {
              const double gg = g[j] * gam[j];
              dx[j] += inv_std[r] * (gg - mean_gg - h[j] * mean_ggh);
            }
          }
        }
      });
}

namespace detail {
constexpr double kGeluCoef = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace detail

// GELU, tanh approximation.
inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    const double u = detail::kGeluCoef * (v + detail::kGeluCubic * v * v * v);
    out[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = p.value[i];
      const double u = detail::kGeluCoef * (v + detail::kGeluCubic * v * v * v);
      const double t = std::tanh(u);
      const double du = detail::kGeluCoef * (1.0 + 3.0 * detail::kGeluCubic * v * v);
      const double df = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      p.grad[i] += self.grad[i] * df;
    }
  });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > 0.0) p.grad[i] += self.grad[i];
  });
}

inline Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.value()[i]);
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.value()[i]));
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.value[i];
      p.grad[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

// Arithmetic mean over the leading (temporal) axis: [L, d] -> [d].
inline Tensor mean_pool_time(const Tensor& x) {
  if (x.rank() != 2)
    throw DimensionError("mean_pool_time expects rank-2, got " + detail::shape_str(x.shape()));
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (rows == 0) throw ContractError("mean_pool_time: empty sequence");
  std::vector<double> out(d, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[j] += x.value()[r * d + j];
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(rows);
  return detail::make_result({d}, std::move(out), {x}, [rows, d](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) p.grad[r * d + j] += self.grad[j] * inv;
  });
}

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  return detail::make_result({1}, {s}, {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0];
  });
}

// Scalar selection by flat index.
inline Tensor pick(const Tensor& x, std::size_t index) {
  if (index >= x.numel())
    throw DimensionError("pick: index " + std::to_string(index) + " out of " +
                         std::to_string(x.numel()));
  return detail::make_result({1}, {x.value()[index]}, {x}, [index](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    p.grad[index] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
// into every reachable tensor that needs them; the recorded graph is
// released afterwards (trainable leaves keep their grad buffers).
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got " +
                        detail::shape_str(loss.shape()));
  detail::Node* root = loss.node().get();
  if (!root->needs_grad) return;

  const std::uint64_t mark = detail::next_mark();
  std::vector<detail::Node*> topo;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  root->mark = mark;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->mark != mark && parent->needs_grad) {
        parent->mark = mark;
        stack.emplace_back(parent, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }
  // Release the tape; values stay readable, leaves keep gradients.
  for (detail::Node* node : topo) {
    node->backprop = nullptr;
    node->parents.clear();
  }
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

}  // namespace mhn
