#pragma once

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mlip {

using Shape = std::vector<int>;

int shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// Values are stored in doubles but rounded to float32 after every public
// operation, so the observable arithmetic is 32-bit with 64-bit accumulation
// inside reductions. The finite-difference harness disables the rounding
// (FullPrecisionScope) so that central differences are not drowned in
// float32 quantization noise.
bool full_precision_enabled();

struct FullPrecisionScope {
  FullPrecisionScope();
  ~FullPrecisionScope();
  FullPrecisionScope(const FullPrecisionScope&) = delete;

 private:
  bool prev_;
};

inline double quantize_one(double x, bool full) {
  return full ? x : static_cast<double>(static_cast<float>(x));
}

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::string name;  // parameter identifier; empty for activations
  std::vector<double> grad;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;
  bool backward_done = false;

  size_t size() const { return values.size(); }
};

using NodePtr = std::shared_ptr<TensorNode>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from_vec(const Shape& shape, const std::vector<double>& data,
                         bool requires_grad = false);

  Tensor& set_name(const std::string& name);
  Tensor& set_requires_grad(bool rg);

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int size() const { return static_cast<int>(n_->values.size()); }
  int rows() const { return n_->shape[0]; }
  int cols() const { return n_->shape[static_cast<size_t>(rank() - 1)]; }

  double value(int i) const { return n_->values[static_cast<size_t>(i)]; }
  double at2(int r, int c) const { return n_->values[static_cast<size_t>(r) * cols() + c]; }
  const std::vector<double>& data() const { return n_->values; }
  // in-place edits (optimizer / finite differences); call requantize() after
  std::vector<double>& data_mut() { return n_->values; }
  void requantize();

  bool requires_grad() const { return n_->requires_grad; }
  const std::string& name() const { return n_->name; }
  bool has_grad() const { return !n_->grad.empty(); }
  Tensor grad() const;  // zeros if no gradient was accumulated
  void clear_grad() { n_->grad.clear(); }

  NodePtr node() const { return n_; }

 private:
  NodePtr n_;
};

using GradientMap = std::map<std::string, Tensor>;

// Reverse sweep from a scalar loss over the tape recorded by forward ops.
// Gradients accumulate into every tracked node; named leaf parameters
// reachable from the loss are returned. A tape can be consumed only once.
GradientMap backward(const Tensor& loss);

// graph-construction helper shared by ops and custom nodes (spectral, tests)
Tensor make_op(const Shape& shape, std::vector<double> values,
               std::vector<NodePtr> parents, std::function<void(TensorNode&)> backprop);
void accumulate_grad(const NodePtr& node, const std::vector<double>& contrib);
void ensure_grad(TensorNode& node);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor gelu(const Tensor& a);
// x * s for a one-element tensor s (learnable scalar)
Tensor mul_scalar_t(const Tensor& x, const Tensor& s);
// rows of x plus a length-C vector (bias add)
Tensor add_rowvec(const Tensor& x, const Tensor& v);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<int>& perm);

// ---- shape ----
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int start, int len);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor pad_matrix(const Tensor& a, int rows, int cols);

// ---- reductions / selections ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // n x C -> 1 x C
Tensor take_diag(const Tensor& a);  // n x n -> n x 1
Tensor select_per_row(const Tensor& a, const std::vector<int>& col_idx);  // n x 1
Tensor sum_selected(const Tensor& a, const std::vector<std::pair<int, int>>& coords);
Tensor weighted_sum_scalars(const std::vector<Tensor>& xs, const std::vector<double>& ws);

// ---- normalization / activation rows ----
Tensor softmax(const Tensor& t, int axis);
Tensor softmax_rows(const Tensor& t);
Tensor log_softmax_rows(const Tensor& t);
Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias, double eps);
Tensor l2_normalize_rows(const Tensor& t, double eps = 1e-12);

}  // namespace mlip
