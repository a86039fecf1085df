#include "datr/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>

#include "datr/error.hpp"

namespace datr::ad {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap cmap(const std::vector<Scalar>& v, std::size_t r, std::size_t c) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MutMap mmap(std::vector<Scalar>& v, std::size_t r, std::size_t c) {
  return MutMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_matrix(const Tensor& x, const char* op) {
  if (x.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_to_string(x.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

// Builds the op result, validating finiteness and wiring history when needed.
Tensor make_result(Shape shape, std::vector<Scalar> value, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn, const char* op) {
  for (auto v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->is_leaf = false;
  auto* tape = Tape::current();
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (needs_grad && tape) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward_fn);
    tape->record(node);
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(Shape shape, std::vector<Scalar> value, std::span<const Tensor> inputs,
                     std::function<void(Node&)> backward_fn, const char* op) {
  for (auto v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->is_leaf = false;
  auto* tape = Tape::current();
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (needs_grad && tape) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward_fn);
    tape->record(node);
  }
  return Tensor(std::move(node));
}

// Parent grad buffer if it participates in differentiation, else nullptr.
std::vector<Scalar>* grad_of(Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return &p.grad;
}

void check_finite_input(const Tensor& x, const char* op) {
  for (auto v : x.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  std::vector<Scalar> out(m * n);
  mmap(out, m, n).noalias() = cmap(a.node()->value, m, k) * cmap(b.node()->value, k, n);
  return make_result({m, n}, std::move(out), {a, b},
                     [m, k, n](Node& self) {
                       auto dc = cmap(self.grad, m, n);
                       const auto& av = self.parents[0]->value;
                       const auto& bv = self.parents[1]->value;
                       if (auto* ga = grad_of(self, 0)) {
                         mmap(*ga, m, k).noalias() += dc * cmap(bv, k, n).transpose();
                       }
                       if (auto* gb = grad_of(self, 1)) {
                         mmap(*gb, k, n).noalias() += cmap(av, m, k).transpose() * dc;
                       }
                     },
                     "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()) + "^T");
  }
  std::vector<Scalar> out(m * n);
  mmap(out, m, n).noalias() =
      cmap(a.node()->value, m, k) * cmap(b.node()->value, n, k).transpose();
  return make_result({m, n}, std::move(out), {a, b},
                     [m, k, n](Node& self) {
                       auto dc = cmap(self.grad, m, n);
                       const auto& av = self.parents[0]->value;
                       const auto& bv = self.parents[1]->value;
                       if (auto* ga = grad_of(self, 0)) {
                         mmap(*ga, m, k).noalias() += dc * cmap(bv, n, k);
                       }
                       if (auto* gb = grad_of(self, 1)) {
                         mmap(*gb, n, k).noalias() += dc.transpose() * cmap(av, m, k);
                       }
                     },
                     "matmul_nt");
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const auto m = x.rows(), n = x.cols();
  std::vector<Scalar> out(m * n);
  mmap(out, n, m) = cmap(x.node()->value, m, n).transpose();
  return make_result({n, m}, std::move(out), {x},
                     [m, n](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         mmap(*g, m, n) += cmap(self.grad, n, m).transpose();
                       }
                     },
                     "transpose");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Scalar> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](Node& self) {
                       for (std::size_t p = 0; p < 2; ++p) {
                         if (auto* g = grad_of(self, p)) {
                           for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                         }
                       }
                     },
                     "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<Scalar> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                       }
                       if (auto* g = grad_of(self, 1)) {
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
                       }
                     },
                     "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Scalar> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](Node& self) {
                       const auto& av = self.parents[0]->value;
                       const auto& bv = self.parents[1]->value;
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
                       }
                       if (auto* g = grad_of(self, 1)) {
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
                       }
                     },
                     "mul");
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_row");
  const auto m = x.rows(), n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_row: bias " + shape_to_string(bias.shape()) +
                         " does not match columns of " + shape_to_string(x.shape()));
  }
  std::vector<Scalar> out(x.node()->value);
  const auto& bv = bias.node()->value;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  }
  return make_result({m, n}, std::move(out), {x, bias},
                     [m, n](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                       }
                       if (auto* g = grad_of(self, 1)) {
                         for (std::size_t r = 0; r < m; ++r) {
                           for (std::size_t c = 0; c < n; ++c) (*g)[c] += self.grad[r * n + c];
                         }
                       }
                     },
                     "add_row");
}

Tensor scale(const Tensor& x, Scalar c) {
  std::vector<Scalar> out(x.node()->value);
  for (auto& v : out) v *= c;
  return make_result(x.shape(), std::move(out), {x},
                     [c](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c * self.grad[i];
                       }
                     },
                     "scale");
}

Tensor add_scalar(const Tensor& x, Scalar c) {
  std::vector<Scalar> out(x.node()->value);
  for (auto& v : out) v += c;
  return make_result(x.shape(), std::move(out), {x},
                     [](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                       }
                     },
                     "add_scalar");
}

Tensor mul_by_scalar(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw DimensionError("mul_by_scalar: expected a single-element factor, got " +
                         shape_to_string(s.shape()));
  }
  const Scalar c = s.item();
  std::vector<Scalar> out(x.node()->value);
  for (auto& v : out) v *= c;
  return make_result(x.shape(), std::move(out), {x, s},
                     [](Node& self) {
                       const auto& xv = self.parents[0]->value;
                       const Scalar c = self.parents[1]->value[0];
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c * self.grad[i];
                       }
                       if (auto* g = grad_of(self, 1)) {
                         Scalar acc = 0.0;
                         for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * self.grad[i];
                         (*g)[0] += acc;
                       }
                     },
                     "mul_by_scalar");
}

Tensor div_by_scalar(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw DimensionError("div_by_scalar: expected a single-element divisor, got " +
                         shape_to_string(s.shape()));
  }
  const Scalar c = s.item();
  if (c == 0.0) throw NumericError("div_by_scalar: division by zero");
  std::vector<Scalar> out(x.node()->value);
  for (auto& v : out) v /= c;
  return make_result(x.shape(), std::move(out), {x, s},
                     [](Node& self) {
                       const Scalar c = self.parents[1]->value[0];
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / c;
                       }
                       if (auto* g = grad_of(self, 1)) {
                         // d(x/c)/dc = -(x/c)/c
                         Scalar acc = 0.0;
                         for (std::size_t i = 0; i < self.value.size(); ++i) acc += self.value[i] * self.grad[i];
                         (*g)[0] -= acc / c;
                       }
                     },
                     "div_by_scalar");
}

Tensor relu(const Tensor& x) {
  std::vector<Scalar> out(x.node()->value);
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x},
                     [](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         const auto& xv = self.parents[0]->value;
                         for (std::size_t i = 0; i < g->size(); ++i) {
                           if (xv[i] > 0.0) (*g)[i] += self.grad[i];
                         }
                       }
                     },
                     "relu");
}

Tensor exp(const Tensor& x) {
  std::vector<Scalar> out(x.node()->value);
  for (auto& v : out) v = std::exp(v);
  return make_result(x.shape(), std::move(out), {x},
                     [](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < g->size(); ++i) {
                           (*g)[i] += self.grad[i] * self.value[i];
                         }
                       }
                     },
                     "exp");
}

Tensor clamp(const Tensor& x, Scalar lo, Scalar hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  std::vector<Scalar> out(x.node()->value);
  for (auto& v : out) v = std::clamp(v, lo, hi);
  return make_result(x.shape(), std::move(out), {x},
                     [lo, hi](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         const auto& xv = self.parents[0]->value;
                         for (std::size_t i = 0; i < g->size(); ++i) {
                           if (xv[i] > lo && xv[i] < hi) (*g)[i] += self.grad[i];
                         }
                       }
                     },
                     "clamp");
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  check_finite_input(x, "softmax_rows");
  const auto m = x.rows(), n = x.cols();
  const auto& xv = x.node()->value;
  std::vector<Scalar> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const Scalar* row = xv.data() + r * n;
    Scalar mx = *std::max_element(row, row + n);
    Scalar total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = std::exp(row[c] - mx);
      total += out[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= total;
  }
  return make_result({m, n}, std::move(out), {x},
                     [m, n](Node& self) {
                       auto* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t r = 0; r < m; ++r) {
                         const Scalar* y = self.value.data() + r * n;
                         const Scalar* dy = self.grad.data() + r * n;
                         Scalar dot = 0.0;
                         for (std::size_t c = 0; c < n; ++c) dot += y[c] * dy[c];
                         for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += y[c] * (dy[c] - dot);
                       }
                     },
                     "softmax_rows");
}

Tensor log_softmax_rows(const Tensor& x) {
  require_matrix(x, "log_softmax_rows");
  check_finite_input(x, "log_softmax_rows");
  const auto m = x.rows(), n = x.cols();
  const auto& xv = x.node()->value;
  std::vector<Scalar> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const Scalar* row = xv.data() + r * n;
    Scalar mx = *std::max_element(row, row + n);
    Scalar total = 0.0;
    for (std::size_t c = 0; c < n; ++c) total += std::exp(row[c] - mx);
    const Scalar lse = mx + std::log(total);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = row[c] - lse;
  }
  return make_result({m, n}, std::move(out), {x},
                     [m, n](Node& self) {
                       auto* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t r = 0; r < m; ++r) {
                         const Scalar* y = self.value.data() + r * n;
                         const Scalar* dy = self.grad.data() + r * n;
                         Scalar total = 0.0;
                         for (std::size_t c = 0; c < n; ++c) total += dy[c];
                         for (std::size_t c = 0; c < n; ++c) {
                           (*g)[r * n + c] += dy[c] - std::exp(y[c]) * total;
                         }
                       }
                     },
                     "log_softmax_rows");
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
  require_matrix(x, "layer_norm_rows");
  const auto m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm_rows: gain/bias width does not match " +
                         shape_to_string(x.shape()));
  }
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<Scalar> out(m * n);
  // Normalized values and inverse std, kept for the backward pass.
  auto xhat = std::make_shared<std::vector<Scalar>>(m * n);
  auto inv_std = std::make_shared<std::vector<Scalar>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    const Scalar* row = xv.data() + r * n;
    Scalar mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<Scalar>(n);
    Scalar var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<Scalar>(n);
    const Scalar is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const Scalar h = (row[c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return make_result({m, n}, std::move(out), {x, gain, bias},
                     [m, n, xhat, inv_std](Node& self) {
                       const auto& gv = self.parents[1]->value;
                       if (auto* gg = grad_of(self, 1)) {
                         for (std::size_t i = 0; i < m * n; ++i) {
                           (*gg)[i % n] += self.grad[i] * (*xhat)[i];
                         }
                       }
                       if (auto* gb = grad_of(self, 2)) {
                         for (std::size_t i = 0; i < m * n; ++i) (*gb)[i % n] += self.grad[i];
                       }
                       auto* gx = grad_of(self, 0);
                       if (!gx) return;
                       const Scalar inv_n = 1.0 / static_cast<Scalar>(n);
                       for (std::size_t r = 0; r < m; ++r) {
                         Scalar sum_dh = 0.0, sum_dh_h = 0.0;
                         for (std::size_t c = 0; c < n; ++c) {
                           const Scalar dh = self.grad[r * n + c] * gv[c];
                           sum_dh += dh;
                           sum_dh_h += dh * (*xhat)[r * n + c];
                         }
                         for (std::size_t c = 0; c < n; ++c) {
                           const Scalar dh = self.grad[r * n + c] * gv[c];
                           (*gx)[r * n + c] += (*inv_std)[r] *
                                               (dh - inv_n * sum_dh - (*xhat)[r * n + c] * inv_n * sum_dh_h);
                         }
                       }
                     },
                     "layer_norm_rows");
}

Tensor l2_normalize_rows(const Tensor& x, Scalar min_norm) {
  require_matrix(x, "l2_normalize_rows");
  const auto m = x.rows(), n = x.cols();
  const auto& xv = x.node()->value;
  std::vector<Scalar> out(m * n);
  auto norms = std::make_shared<std::vector<Scalar>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    Scalar ss = 0.0;
    for (std::size_t c = 0; c < n; ++c) ss += xv[r * n + c] * xv[r * n + c];
    const Scalar norm = std::sqrt(ss);
    if (!(norm >= min_norm)) {
      throw ZeroNormError("l2_normalize_rows: row " + std::to_string(r) + " has norm " +
                          std::to_string(norm) + ", cannot normalize");
    }
    (*norms)[r] = norm;
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xv[r * n + c] / norm;
  }
  return make_result({m, n}, std::move(out), {x},
                     [m, n, norms](Node& self) {
                       auto* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t r = 0; r < m; ++r) {
                         const Scalar* y = self.value.data() + r * n;
                         const Scalar* dy = self.grad.data() + r * n;
                         Scalar dot = 0.0;
                         for (std::size_t c = 0; c < n; ++c) dot += y[c] * dy[c];
                         for (std::size_t c = 0; c < n; ++c) {
                           (*g)[r * n + c] += (dy[c] - y[c] * dot) / (*norms)[r];
                         }
                       }
                     },
                     "l2_normalize_rows");
}

Tensor concat_last_dim(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_last_dim: no inputs");
  const auto m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_last_dim");
    if (p.rows() != m) {
      throw DimensionError("concat_last_dim: row counts differ, " +
                           shape_to_string(parts[0].shape()) + " vs " + shape_to_string(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<Scalar> out(m * total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& pv = parts[i].node()->value;
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(pv.data() + r * widths[i], widths[i], out.data() + r * total + offset);
    }
    offset += widths[i];
  }
  return make_result_n({m, total}, std::move(out), parts,
                       [m, total, widths](Node& self) {
                         std::size_t offset = 0;
                         for (std::size_t i = 0; i < widths.size(); ++i) {
                           if (auto* g = grad_of(self, i)) {
                             for (std::size_t r = 0; r < m; ++r) {
                               for (std::size_t c = 0; c < widths[i]; ++c) {
                                 (*g)[r * widths[i] + c] += self.grad[r * total + offset + c];
                               }
                             }
                           }
                           offset += widths[i];
                         }
                       },
                       "concat_last_dim");
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const auto n = parts[0].cols();
  std::vector<std::size_t> heights;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column counts differ, " +
                           shape_to_string(parts[0].shape()) + " vs " + shape_to_string(p.shape()));
    }
    heights.push_back(p.rows());
    total += p.rows();
  }
  std::vector<Scalar> out;
  out.reserve(total * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result_n({total, n}, std::move(out), parts,
                       [n, heights](Node& self) {
                         std::size_t offset = 0;
                         for (std::size_t i = 0; i < heights.size(); ++i) {
                           if (auto* g = grad_of(self, i)) {
                             for (std::size_t j = 0; j < heights[i] * n; ++j) {
                               (*g)[j] += self.grad[offset + j];
                             }
                           }
                           offset += heights[i] * n;
                         }
                       },
                       "concat_rows");
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const auto m = x.rows(), n = x.cols();
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for " + shape_to_string(x.shape()));
  }
  const auto w = end - begin;
  std::vector<Scalar> out(m * w);
  const auto& xv = x.node()->value;
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(xv.data() + r * n + begin, w, out.data() + r * w);
  }
  return make_result({m, w}, std::move(out), {x},
                     [m, n, w, begin](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t r = 0; r < m; ++r) {
                           for (std::size_t c = 0; c < w; ++c) {
                             (*g)[r * n + begin + c] += self.grad[r * w + c];
                           }
                         }
                       }
                     },
                     "slice_cols");
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_matrix(x, "gather_rows");
  const auto m = x.rows(), n = x.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<Scalar> out(idx.size() * n);
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m) {
      throw DimensionError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                           shape_to_string(x.shape()));
    }
    std::copy_n(xv.data() + idx[i] * n, n, out.data() + i * n);
  }
  const auto count = idx.size();
  return make_result({count, n}, std::move(out), {x},
                     [n, idx = std::move(idx)](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < idx.size(); ++i) {
                           for (std::size_t c = 0; c < n; ++c) {
                             (*g)[idx[i] * n + c] += self.grad[i * n + c];
                           }
                         }
                       }
                     },
                     "gather_rows");
}

Tensor diagonal(const Tensor& x) {
  require_matrix(x, "diagonal");
  const auto n = x.rows();
  if (x.cols() != n) throw DimensionError("diagonal: not square " + shape_to_string(x.shape()));
  std::vector<Scalar> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.node()->value[i * n + i];
  return make_result({n, 1}, std::move(out), {x},
                     [n](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < n; ++i) (*g)[i * n + i] += self.grad[i];
                       }
                     },
                     "diagonal");
}

Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  require_matrix(x, "mean_over_axis");
  const auto m = x.rows(), n = x.cols();
  if (axis > 1) throw DimensionError("mean_over_axis: axis must be 0 or 1");
  if (m == 0 || n == 0) throw DimensionError("mean_over_axis: empty matrix");
  const auto& xv = x.node()->value;
  if (axis == 0) {
    std::vector<Scalar> out(n, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) out[c] += xv[r * n + c];
    }
    for (auto& v : out) v /= static_cast<Scalar>(m);
    return make_result({1, n}, std::move(out), {x},
                       [m, n](Node& self) {
                         if (auto* g = grad_of(self, 0)) {
                           const Scalar inv = 1.0 / static_cast<Scalar>(m);
                           for (std::size_t r = 0; r < m; ++r) {
                             for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += self.grad[c] * inv;
                           }
                         }
                       },
                       "mean_over_axis");
  }
  std::vector<Scalar> out(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r] += xv[r * n + c];
    out[r] /= static_cast<Scalar>(n);
  }
  return make_result({m, 1}, std::move(out), {x},
                     [m, n](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         const Scalar inv = 1.0 / static_cast<Scalar>(n);
                         for (std::size_t r = 0; r < m; ++r) {
                           for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += self.grad[r] * inv;
                         }
                       }
                     },
                     "mean_over_axis");
}

Tensor sum(const Tensor& x) {
  Scalar total = 0.0;
  for (auto v : x.data()) total += v;
  return make_result({1}, {total}, {x},
                     [](Node& self) {
                       if (auto* g = grad_of(self, 0)) {
                         for (auto& v : *g) v += self.grad[0];
                       }
                     },
                     "sum");
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<Scalar>(x.numel()));
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t pad) {
  if (stride == 0) throw ContractError("conv1d: stride must be positive");
  const auto padded = length + 2 * pad;
  if (padded < kernel) return 0;
  return (padded - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t pad) {
  require_matrix(x, "conv1d");
  if (kernels.ndim() != 3) {
    throw DimensionError("conv1d: kernels must be k x d_in x d_out, got " +
                         shape_to_string(kernels.shape()));
  }
  const auto length = x.rows(), d_in = x.cols();
  const auto k = kernels.shape()[0], d_out = kernels.shape()[2];
  if (kernels.shape()[1] != d_in) {
    throw DimensionError("conv1d: input width " + std::to_string(d_in) +
                         " does not match kernels " + shape_to_string(kernels.shape()));
  }
  const auto out_len = conv1d_output_length(length, k, stride, pad);
  if (out_len < 1) {
    throw DimensionError("conv1d: degenerate output length for T=" + std::to_string(length) +
                         ", k=" + std::to_string(k) + ", stride=" + std::to_string(stride) +
                         ", pad=" + std::to_string(pad));
  }
  // Row of x feeding output step t at kernel tap j, or -1 inside the padding.
  auto source_row = [=](std::size_t t, std::size_t j) -> long {
    const long pos = static_cast<long>(t * stride + j) - static_cast<long>(pad);
    return (pos < 0 || pos >= static_cast<long>(length)) ? -1 : pos;
  };
  const auto& xv = x.node()->value;
  const auto& kv = kernels.node()->value;
  std::vector<Scalar> out(out_len * d_out, 0.0);
  RowMat gathered(static_cast<Eigen::Index>(out_len), static_cast<Eigen::Index>(d_in));
  auto om = mmap(out, out_len, d_out);
  for (std::size_t j = 0; j < k; ++j) {
    gathered.setZero();
    for (std::size_t t = 0; t < out_len; ++t) {
      const long src = source_row(t, j);
      if (src >= 0) gathered.row(static_cast<Eigen::Index>(t)) = cmap(xv, length, d_in).row(src);
    }
    om.noalias() += gathered * ConstMap(kv.data() + j * d_in * d_out,
                                        static_cast<Eigen::Index>(d_in),
                                        static_cast<Eigen::Index>(d_out));
  }
  return make_result(
      {out_len, d_out}, std::move(out), {x, kernels},
      [=](Node& self) {
        auto* gx = grad_of(self, 0);
        auto* gk = grad_of(self, 1);
        const auto& xv = self.parents[0]->value;
        const auto& kv = self.parents[1]->value;
        auto dout = cmap(self.grad, out_len, d_out);
        RowMat gathered(static_cast<Eigen::Index>(out_len), static_cast<Eigen::Index>(d_in));
        for (std::size_t j = 0; j < k; ++j) {
          ConstMap kj(kv.data() + j * d_in * d_out, static_cast<Eigen::Index>(d_in),
                      static_cast<Eigen::Index>(d_out));
          if (gk) {
            gathered.setZero();
            for (std::size_t t = 0; t < out_len; ++t) {
              const long src = source_row(t, j);
              if (src >= 0) gathered.row(static_cast<Eigen::Index>(t)) = cmap(xv, length, d_in).row(src);
            }
            MutMap(gk->data() + j * d_in * d_out, static_cast<Eigen::Index>(d_in),
                   static_cast<Eigen::Index>(d_out))
                .noalias() += gathered.transpose() * dout;
          }
          if (gx) {
            RowMat dg = dout * kj.transpose();
            auto gxm = mmap(*gx, length, d_in);
            for (std::size_t t = 0; t < out_len; ++t) {
              const long src = source_row(t, j);
              if (src >= 0) gxm.row(src) += dg.row(static_cast<Eigen::Index>(t));
            }
          }
        }
      },
      "conv1d");
}

}  // namespace datr::ad
