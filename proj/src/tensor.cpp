#include "mlip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mlip {

static bool g_full_precision = false;

bool full_precision_enabled() { return g_full_precision; }

FullPrecisionScope::FullPrecisionScope() : prev_(g_full_precision) { g_full_precision = true; }
FullPrecisionScope::~FullPrecisionScope() { g_full_precision = prev_; }

int shape_size(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("shape axis must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

static void quantize_vec(std::vector<double>& v) {
  if (g_full_precision) return;
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = shape;
  n->values.assign(static_cast<size_t>(shape_size(shape)), 0.0);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.n_->values.begin(), t.n_->values.end(), quantize_one(v, g_full_precision));
  return t;
}

Tensor Tensor::from_vec(const Shape& shape, const std::vector<double>& data, bool requires_grad) {
  if (static_cast<size_t>(shape_size(shape)) != data.size())
    throw std::invalid_argument("from_vec: shape " + shape_str(shape) + " does not match data length " +
                                std::to_string(data.size()));
  auto n = std::make_shared<TensorNode>();
  n->shape = shape;
  n->values = data;
  quantize_vec(n->values);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor& Tensor::set_name(const std::string& name) {
  n_->name = name;
  return *this;
}

Tensor& Tensor::set_requires_grad(bool rg) {
  if (n_->backprop) throw std::runtime_error("set_requires_grad: only leaf tensors");
  n_->requires_grad = rg;
  return *this;
}

void Tensor::requantize() { quantize_vec(n_->values); }

Tensor Tensor::grad() const {
  Tensor g = Tensor::zeros(n_->shape);
  if (!n_->grad.empty()) {
    g.node()->values = n_->grad;
    g.requantize();
  }
  return g;
}

void ensure_grad(TensorNode& node) {
  if (node.grad.empty()) node.grad.assign(node.values.size(), 0.0);
}

void accumulate_grad(const NodePtr& node, const std::vector<double>& contrib) {
  if (!node->requires_grad) return;
  ensure_grad(*node);
  for (size_t i = 0; i < contrib.size(); ++i) node->grad[i] += contrib[i];
}

Tensor make_op(const Shape& shape, std::vector<double> values, std::vector<NodePtr> parents,
               std::function<void(TensorNode&)> backprop) {
  auto n = std::make_shared<TensorNode>();
  n->shape = shape;
  n->values = std::move(values);
  quantize_vec(n->values);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor(n);
}

GradientMap backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor" +
                                (loss.defined() ? ", got shape " + shape_str(loss.shape()) : ""));
  NodePtr root = loss.node();
  if (root->backward_done)
    throw std::runtime_error("backward: tape already consumed; rebuild the graph before calling again");
  root->backward_done = true;

  // post-order over parents, iterative
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx].get();
      ++idx;
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (!node->grad.empty() && node->backprop) node->backprop(*node);
  }

  GradientMap gm;
  for (TensorNode* node : order) {
    if (!node->requires_grad || node->backprop || node->name.empty()) continue;
    if (gm.count(node->name))
      throw std::runtime_error("backward: duplicate parameter name '" + node->name + "'");
    Tensor g = Tensor::zeros(node->shape);
    if (!node->grad.empty()) {
      g.node()->values = node->grad;
      g.requantize();
    }
    gm.emplace(node->name, g);
  }
  return gm;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [pa = a.node(), pb = b.node()](TensorNode& self) {
    accumulate_grad(pa, self.grad);
    accumulate_grad(pb, self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [pa = a.node(), pb = b.node()](TensorNode& self) {
    accumulate_grad(pa, self.grad);
    if (pb->requires_grad) {
      ensure_grad(*pb);
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [pa = a.node(), pb = b.node()](TensorNode& self) {
    if (pa->requires_grad) {
      ensure_grad(*pa);
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->values[i];
    }
    if (pb->requires_grad) {
      ensure_grad(*pb);
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->values[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  return make_op(a.shape(), std::move(out), {a.node()}, [pa = a.node(), s](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * s;
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
  return make_op(a.shape(), std::move(out), {a.node()}, [pa = a.node()](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * self.values[i];
  });
}

Tensor reciprocal(const Tensor& a) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = 1.0 / av[i];
  return make_op(a.shape(), std::move(out), {a.node()}, [pa = a.node()](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (size_t i = 0; i < self.grad.size(); ++i)
      pa->grad[i] -= self.grad[i] * self.values[i] * self.values[i];
  });
}

Tensor gelu(const Tensor& a) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * M_SQRT1_2));
  return make_op(a.shape(), std::move(out), {a.node()}, [pa = a.node()](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double x = pa->values[i];
      double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      pa->grad[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor mul_scalar_t(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw std::invalid_argument("mul_scalar_t: scalar operand must have one element");
  double sv = s.value(0);
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * sv;
  return make_op(x.shape(), std::move(out), {x.node(), s.node()}, [px = x.node(), ps = s.node()](TensorNode& self) {
    double sv2 = ps->values[0];
    if (px->requires_grad) {
      ensure_grad(*px);
      for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i] * sv2;
    }
    if (ps->requires_grad) {
      ensure_grad(*ps);
      double acc = 0.0;
      for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px->values[i];
      ps->grad[0] += acc;
    }
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  int c = x.cols();
  if (v.size() != c)
    throw std::invalid_argument("add_rowvec: vector " + shape_str(v.shape()) + " does not match columns of " +
                                shape_str(x.shape()));
  const auto& xv = x.data();
  const auto& vv = v.data();
  std::vector<double> out(xv.size());
  size_t rows = xv.size() / static_cast<size_t>(c);
  for (size_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] = xv[r * c + j] + vv[static_cast<size_t>(j)];
  return make_op(x.shape(), std::move(out), {x.node(), v.node()}, [px = x.node(), pv = v.node(), c](TensorNode& self) {
    accumulate_grad(px, self.grad);
    if (pv->requires_grad) {
      ensure_grad(*pv);
      size_t rows2 = self.grad.size() / static_cast<size_t>(c);
      for (size_t r = 0; r < rows2; ++r)
        for (int j = 0; j < c; ++j) pv->grad[static_cast<size_t>(j)] += self.grad[r * c + j];
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    double* orow = out.data() + static_cast<size_t>(i) * n;
    for (int t = 0; t < k; ++t) {
      double ait = av[static_cast<size_t>(i) * k + t];
      const double* brow = bv.data() + static_cast<size_t>(t) * n;
      for (int j = 0; j < n; ++j) orow[j] += ait * brow[j];
    }
  }
  return make_op({m, n}, std::move(out), {a.node(), b.node()},
                 [pa = a.node(), pb = b.node(), m, k, n](TensorNode& self) {
                   const auto& g = self.grad;
                   if (pa->requires_grad) {
                     ensure_grad(*pa);
                     // dA = G * B^T
                     for (int i = 0; i < m; ++i)
                       for (int t = 0; t < k; ++t) {
                         double acc = 0.0;
                         const double* grow = g.data() + static_cast<size_t>(i) * n;
                         const double* brow = pb->values.data() + static_cast<size_t>(t) * n;
                         for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                         pa->grad[static_cast<size_t>(i) * k + t] += acc;
                       }
                   }
                   if (pb->requires_grad) {
                     ensure_grad(*pb);
                     // dB = A^T * G
                     for (int i = 0; i < m; ++i) {
                       const double* grow = g.data() + static_cast<size_t>(i) * n;
                       for (int t = 0; t < k; ++t) {
                         double ait = pa->values[static_cast<size_t>(i) * k + t];
                         double* brow = pb->grad.data() + static_cast<size_t>(t) * n;
                         for (int j = 0; j < n; ++j) brow[j] += ait * grow[j];
                       }
                     }
                   }
                 });
}

static std::vector<int> strides_of(const Shape& s) {
  std::vector<int> st(s.size());
  int acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

static std::vector<double> permute_vals(const std::vector<double>& v, const Shape& shape,
                                        const std::vector<int>& perm, Shape& out_shape) {
  size_t r = shape.size();
  out_shape.resize(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = shape[static_cast<size_t>(perm[i])];
  auto in_st = strides_of(shape);
  auto out_st = strides_of(out_shape);
  std::vector<double> out(v.size());
  std::vector<int> idx(r, 0);
  for (size_t flat = 0; flat < v.size(); ++flat) {
    // flat is the output offset; map back to input offset
    size_t rem = flat;
    size_t src = 0;
    for (size_t i = 0; i < r; ++i) {
      int coord = static_cast<int>(rem / static_cast<size_t>(out_st[i]));
      rem %= static_cast<size_t>(out_st[i]);
      src += static_cast<size_t>(coord) * in_st[static_cast<size_t>(perm[i])];
    }
    out[flat] = v[src];
  }
  return out;
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  if (perm.size() != static_cast<size_t>(a.rank()))
    throw std::invalid_argument("permute: axes list must match tensor rank");
  Shape out_shape;
  std::vector<double> out = permute_vals(a.data(), a.shape(), perm, out_shape);
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
  return make_op(out_shape, std::move(out), {a.node()},
                 [pa = a.node(), inv, out_shape](TensorNode& self) {
                   if (!pa->requires_grad) return;
                   Shape back;
                   std::vector<double> gp = permute_vals(self.grad, out_shape, inv, back);
                   accumulate_grad(pa, gp);
                 });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 tensor required, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_size(shape) != a.size())
    throw std::invalid_argument("reshape: cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  return make_op(shape, a.data(), {a.node()}, [pa = a.node()](TensorNode& self) {
    accumulate_grad(pa, self.grad);
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty list");
  int c = parts[0].cols();
  int total_rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != c)
      throw std::invalid_argument("concat_rows: column mismatch at " + shape_str(p.shape()));
    total_rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total_rows) * c);
  std::vector<NodePtr> parents;
  std::vector<int> row_counts;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node());
    row_counts.push_back(p.rows());
  }
  return make_op({total_rows, c}, std::move(out), parents,
                 [parents, row_counts, c](TensorNode& self) {
                   size_t offset = 0;
                   for (size_t k = 0; k < parents.size(); ++k) {
                     size_t len = static_cast<size_t>(row_counts[k]) * c;
                     if (parents[k]->requires_grad) {
                       ensure_grad(*parents[k]);
                       for (size_t i = 0; i < len; ++i) parents[k]->grad[i] += self.grad[offset + i];
                     }
                     offset += len;
                   }
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty list");
  int r = parts[0].rows();
  int total_cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != r)
      throw std::invalid_argument("concat_cols: row mismatch at " + shape_str(p.shape()));
    total_cols += p.cols();
  }
  std::vector<double> out(static_cast<size_t>(r) * total_cols);
  std::vector<NodePtr> parents;
  std::vector<int> col_counts;
  int col0 = 0;
  for (const auto& p : parts) {
    int pc = p.cols();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < pc; ++j)
        out[static_cast<size_t>(i) * total_cols + col0 + j] = p.at2(i, j);
    parents.push_back(p.node());
    col_counts.push_back(pc);
    col0 += pc;
  }
  return make_op({r, total_cols}, std::move(out), parents,
                 [parents, col_counts, r, total_cols](TensorNode& self) {
                   int c0 = 0;
                   for (size_t k = 0; k < parents.size(); ++k) {
                     int pc = col_counts[k];
                     if (parents[k]->requires_grad) {
                       ensure_grad(*parents[k]);
                       for (int i = 0; i < r; ++i)
                         for (int j = 0; j < pc; ++j)
                           parents[k]->grad[static_cast<size_t>(i) * pc + j] +=
                               self.grad[static_cast<size_t>(i) * total_cols + c0 + j];
                     }
                     c0 += pc;
                   }
                 });
}

Tensor slice_rows(const Tensor& a, int start, int len) {
  if (a.rank() != 2 || start < 0 || len <= 0 || start + len > a.rows())
    throw std::invalid_argument("slice_rows: invalid range [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") for " + shape_str(a.shape()));
  int c = a.cols();
  const auto& av = a.data();
  std::vector<double> out(av.begin() + static_cast<size_t>(start) * c,
                          av.begin() + static_cast<size_t>(start + len) * c);
  return make_op({len, c}, std::move(out), {a.node()}, [pa = a.node(), start, c](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[static_cast<size_t>(start) * c + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, int start, int len) {
  if (a.rank() != 2 || start < 0 || len <= 0 || start + len > a.cols())
    throw std::invalid_argument("slice_cols: invalid range [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") for " + shape_str(a.shape()));
  int r = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<size_t>(r) * len);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < len; ++j) out[static_cast<size_t>(i) * len + j] = a.at2(i, start + j);
  return make_op({r, len}, std::move(out), {a.node()}, [pa = a.node(), start, len, r, c](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < len; ++j)
        pa->grad[static_cast<size_t>(i) * c + start + j] += self.grad[static_cast<size_t>(i) * len + j];
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  if (a.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 tensor required");
  int c = a.cols();
  for (int i : idx)
    if (i < 0 || i >= a.rows())
      throw std::out_of_range("gather_rows: index " + std::to_string(i) + " out of range for " +
                              shape_str(a.shape()));
  std::vector<double> out(idx.size() * static_cast<size_t>(c));
  for (size_t k = 0; k < idx.size(); ++k)
    for (int j = 0; j < c; ++j) out[k * c + j] = a.at2(idx[k], j);
  return make_op({static_cast<int>(idx.size()), c}, std::move(out), {a.node()},
                 [pa = a.node(), idx, c](TensorNode& self) {
                   if (!pa->requires_grad) return;
                   ensure_grad(*pa);
                   for (size_t k = 0; k < idx.size(); ++k)
                     for (int j = 0; j < c; ++j)
                       pa->grad[static_cast<size_t>(idx[k]) * c + j] += self.grad[k * c + j];
                 });
}

Tensor pad_matrix(const Tensor& a, int rows, int cols) {
  if (a.rank() != 2 || rows < a.rows() || cols < a.cols())
    throw std::invalid_argument("pad_matrix: target " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " smaller than " + shape_str(a.shape()));
  int r0 = a.rows(), c0 = a.cols();
  std::vector<double> out(static_cast<size_t>(rows) * cols, 0.0);
  for (int i = 0; i < r0; ++i)
    for (int j = 0; j < c0; ++j) out[static_cast<size_t>(i) * cols + j] = a.at2(i, j);
  return make_op({rows, cols}, std::move(out), {a.node()}, [pa = a.node(), r0, c0, cols](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (int i = 0; i < r0; ++i)
      for (int j = 0; j < c0; ++j)
        pa->grad[static_cast<size_t>(i) * c0 + j] += self.grad[static_cast<size_t>(i) * cols + j];
  });
}

// ---------------------------------------------------------------------------
// reductions / selections
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_op({1}, {acc}, {a.node()}, [pa = a.node()](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (double& g : pa->grad) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  double inv = 1.0 / static_cast<double>(a.size());
  return make_op({1}, {acc * inv}, {a.node()}, [pa = a.node(), inv](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (double& g : pa->grad) g += self.grad[0] * inv;
  });
}

Tensor mean_rows(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("mean_rows: rank-2 tensor required");
  int r = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<size_t>(c), 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(j)] += a.at2(i, j);
  double inv = 1.0 / r;
  for (double& v : out) v *= inv;
  return make_op({1, c}, std::move(out), {a.node()}, [pa = a.node(), r, c, inv](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) pa->grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j)] * inv;
  });
}

Tensor take_diag(const Tensor& a) {
  if (a.rank() != 2 || a.rows() != a.cols())
    throw std::invalid_argument("take_diag: square matrix required, got " + shape_str(a.shape()));
  int n = a.rows();
  std::vector<double> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = a.at2(i, i);
  return make_op({n, 1}, std::move(out), {a.node()}, [pa = a.node(), n](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (int i = 0; i < n; ++i) pa->grad[static_cast<size_t>(i) * n + i] += self.grad[static_cast<size_t>(i)];
  });
}

Tensor select_per_row(const Tensor& a, const std::vector<int>& col_idx) {
  if (a.rank() != 2 || col_idx.size() != static_cast<size_t>(a.rows()))
    throw std::invalid_argument("select_per_row: need one column index per row");
  int c = a.cols();
  std::vector<double> out(col_idx.size());
  for (size_t i = 0; i < col_idx.size(); ++i) {
    if (col_idx[i] < 0 || col_idx[i] >= c) throw std::out_of_range("select_per_row: column index out of range");
    out[i] = a.at2(static_cast<int>(i), col_idx[i]);
  }
  return make_op({a.rows(), 1}, std::move(out), {a.node()}, [pa = a.node(), col_idx, c](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (size_t i = 0; i < col_idx.size(); ++i) pa->grad[i * c + col_idx[i]] += self.grad[i];
  });
}

Tensor sum_selected(const Tensor& a, const std::vector<std::pair<int, int>>& coords) {
  if (a.rank() != 2) throw std::invalid_argument("sum_selected: rank-2 tensor required");
  int c = a.cols();
  double acc = 0.0;
  for (auto [i, j] : coords) {
    if (i < 0 || i >= a.rows() || j < 0 || j >= c)
      throw std::out_of_range("sum_selected: coordinate (" + std::to_string(i) + "," + std::to_string(j) +
                              ") out of range");
    acc += a.at2(i, j);
  }
  return make_op({1}, {acc}, {a.node()}, [pa = a.node(), coords, c](TensorNode& self) {
    if (!pa->requires_grad) return;
    ensure_grad(*pa);
    for (auto [i, j] : coords) pa->grad[static_cast<size_t>(i) * c + j] += self.grad[0];
  });
}

Tensor weighted_sum_scalars(const std::vector<Tensor>& xs, const std::vector<double>& ws) {
  if (xs.empty() || xs.size() != ws.size())
    throw std::invalid_argument("weighted_sum_scalars: need matching nonempty lists");
  double acc = 0.0;
  std::vector<NodePtr> parents;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != 1) throw std::invalid_argument("weighted_sum_scalars: operands must be scalars");
    acc += ws[i] * xs[i].value(0);
    parents.push_back(xs[i].node());
  }
  return make_op({1}, {acc}, parents, [parents, ws](TensorNode& self) {
    for (size_t i = 0; i < parents.size(); ++i)
      if (parents[i]->requires_grad) {
        ensure_grad(*parents[i]);
        parents[i]->grad[0] += self.grad[0] * ws[i];
      }
  });
}

// ---------------------------------------------------------------------------
// normalization / activations over rows
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& t) {
  int c = t.cols();
  size_t rows = static_cast<size_t>(t.size()) / c;
  const auto& v = t.data();
  std::vector<double> out(v.size());
  for (size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    for (int j = 0; j < c; ++j) out[r * c + j] = std::exp(row[j] - mx) / denom;
  }
  return make_op(t.shape(), std::move(out), {t.node()}, [pt = t.node(), c](TensorNode& self) {
    if (!pt->requires_grad) return;
    ensure_grad(*pt);
    size_t rows2 = self.values.size() / static_cast<size_t>(c);
    for (size_t r = 0; r < rows2; ++r) {
      const double* p = self.values.data() + r * c;
      const double* g = self.grad.data() + r * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += p[j] * g[j];
      for (int j = 0; j < c; ++j) pt->grad[r * c + j] += p[j] * (g[j] - dot);
    }
  });
}

Tensor softmax(const Tensor& t, int axis) {
  int r = t.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(t.shape()));
  if (axis == r - 1) return softmax_rows(t);
  std::vector<int> perm;
  for (int i = 0; i < r; ++i)
    if (i != axis) perm.push_back(i);
  perm.push_back(axis);
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
  return permute(softmax_rows(permute(t, perm)), inv);
}

Tensor log_softmax_rows(const Tensor& t) {
  int c = t.cols();
  size_t rows = static_cast<size_t>(t.size()) / c;
  const auto& v = t.data();
  std::vector<double> out(v.size());
  for (size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    double lse = mx + std::log(denom);
    for (int j = 0; j < c; ++j) out[r * c + j] = row[j] - lse;
  }
  return make_op(t.shape(), std::move(out), {t.node()}, [pt = t.node(), c](TensorNode& self) {
    if (!pt->requires_grad) return;
    ensure_grad(*pt);
    size_t rows2 = self.values.size() / static_cast<size_t>(c);
    for (size_t r = 0; r < rows2; ++r) {
      const double* lp = self.values.data() + r * c;
      const double* g = self.grad.data() + r * c;
      double gsum = 0.0;
      for (int j = 0; j < c; ++j) gsum += g[j];
      for (int j = 0; j < c; ++j) pt->grad[r * c + j] += g[j] - std::exp(lp[j]) * gsum;
    }
  });
}

Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias, double eps) {
  int c = t.cols();
  if (gain.size() != c || bias.size() != c)
    throw std::invalid_argument("layer_norm: gain/bias must match last axis of " + shape_str(t.shape()));
  size_t rows = static_cast<size_t>(t.size()) / c;
  const auto& v = t.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  std::vector<double> out(v.size());
  std::vector<double> xhat(v.size());
  std::vector<double> inv_std(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= c;
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (int j = 0; j < c; ++j) {
      double xh = (row[j] - mean) * inv;
      xhat[r * c + j] = xh;
      out[r * c + j] = xh * gv[static_cast<size_t>(j)] + bv[static_cast<size_t>(j)];
    }
  }
  return make_op(t.shape(), std::move(out), {t.node(), gain.node(), bias.node()},
                 [pt = t.node(), pg = gain.node(), pb = bias.node(), c, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)](TensorNode& self) {
                   size_t rows2 = self.values.size() / static_cast<size_t>(c);
                   if (pg->requires_grad) {
                     ensure_grad(*pg);
                     for (size_t r = 0; r < rows2; ++r)
                       for (int j = 0; j < c; ++j) pg->grad[static_cast<size_t>(j)] += self.grad[r * c + j] * xhat[r * c + j];
                   }
                   if (pb->requires_grad) {
                     ensure_grad(*pb);
                     for (size_t r = 0; r < rows2; ++r)
                       for (int j = 0; j < c; ++j) pb->grad[static_cast<size_t>(j)] += self.grad[r * c + j];
                   }
                   if (pt->requires_grad) {
                     ensure_grad(*pt);
                     for (size_t r = 0; r < rows2; ++r) {
                       const double* g = self.grad.data() + r * c;
                       double mean_gg = 0.0, mean_ggx = 0.0;
                       for (int j = 0; j < c; ++j) {
                         double gg = g[j] * pg->values[static_cast<size_t>(j)];
                         mean_gg += gg;
                         mean_ggx += gg * xhat[r * c + j];
                       }
                       mean_gg /= c;
                       mean_ggx /= c;
                       for (int j = 0; j < c; ++j) {
                         double gg = g[j] * pg->values[static_cast<size_t>(j)];
                         pt->grad[r * c + j] += inv_std[r] * (gg - mean_gg - xhat[r * c + j] * mean_ggx);
                       }
                     }
                   }
                 });
}

Tensor l2_normalize_rows(const Tensor& t, double eps) {
  int c = t.cols();
  size_t rows = static_cast<size_t>(t.size()) / c;
  const auto& v = t.data();
  std::vector<double> out(v.size());
  std::vector<double> inv_norm(rows);
  for (size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += v[r * c + j] * v[r * c + j];
    double denom = std::max(std::sqrt(acc), eps);
    inv_norm[r] = 1.0 / denom;
    for (int j = 0; j < c; ++j) out[r * c + j] = v[r * c + j] * inv_norm[r];
  }
  return make_op(t.shape(), std::move(out), {t.node()},
                 [pt = t.node(), c, inv_norm = std::move(inv_norm)](TensorNode& self) {
                   if (!pt->requires_grad) return;
                   ensure_grad(*pt);
                   size_t rows2 = self.values.size() / static_cast<size_t>(c);
                   for (size_t r = 0; r < rows2; ++r) {
                     const double* y = self.values.data() + r * c;
                     const double* g = self.grad.data() + r * c;
                     double dot = 0.0;
                     for (int j = 0; j < c; ++j) dot += y[j] * g[j];
                     for (int j = 0; j < c; ++j) pt->grad[r * c + j] += inv_norm[r] * (g[j] - y[j] * dot);
                   }
                 });
}

}  // namespace mlip
