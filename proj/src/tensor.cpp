#include "cmml/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace cmml {

namespace {

const std::vector<double> kEmptyValues;

std::string shape_of(int r, int c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

[[noreturn]] void fail(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(int rows, int cols, std::vector<double> values)
    : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) fail("Tensor", "negative dimension " + shape_of(rows, cols));
  if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != values.size()) {
    fail("Tensor", "shape " + shape_of(rows, cols) + " does not match " +
                       std::to_string(values.size()) + " values");
  }
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(int rows, int cols) {
  return Tensor(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0));
}

Tensor Tensor::full(int rows, int cols, double value) {
  return Tensor(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, value));
}

Tensor Tensor::scalar(double value) { return Tensor(1, 1, {value}); }

Tensor Tensor::row(std::vector<double> values) {
  int n = static_cast<int>(values.size());
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::column(std::vector<double> values) {
  int n = static_cast<int>(values.size());
  return Tensor(n, 1, std::move(values));
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) fail("Tensor::from_rows", "no rows");
  std::size_t cols = rows[0].size();
  std::vector<double> v;
  v.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) fail("Tensor::from_rows", "ragged rows");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(static_cast<int>(rows.size()), static_cast<int>(cols), std::move(v));
}

Tensor Tensor::identity(int n) {
  Tensor t = zeros(n, n);
  std::vector<double> v = *t.values_;
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
  return Tensor(n, n, std::move(v));
}

double Tensor::at(int r, int c) const {
  if (r < 0 || r >= rows_ || c < 0 || c >= cols_) {
    fail("Tensor::at", "index (" + std::to_string(r) + "," + std::to_string(c) +
                           ") out of range for " + shape_str());
  }
  return (*values_)[static_cast<std::size_t>(r) * cols_ + c];
}

double Tensor::item() const {
  if (size() != 1) fail("Tensor::item", "tensor is " + shape_str() + ", not 1x1");
  return (*values_)[0];
}

const std::vector<double>& Tensor::values() const {
  return values_ ? *values_ : kEmptyValues;
}

std::string Tensor::shape_str() const { return shape_of(rows_, cols_); }

Tensor Tensor::detached() const {
  Tensor t;
  t.rows_ = rows_;
  t.cols_ = cols_;
  t.values_ = values_;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::same_values(const Tensor& other) const {
  if (rows_ != other.rows_ || cols_ != other.cols_) return false;
  const auto& a = values();
  const auto& b = other.values();
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------
// Tape plumbing
// ---------------------------------------------------------------------------

using GradRule = std::function<void(std::vector<std::vector<double>>&, const std::vector<double>&)>;

Tensor detail_record_op(Tape* tape, Tensor result, std::vector<int> input_nodes, GradRule rule) {
  if (!tape) return result;
  Tape::Node node;
  node.rows = result.rows();
  node.cols = result.cols();
  node.is_leaf = false;
  node.inputs = std::move(input_nodes);
  node.backprop = std::move(rule);
  tape->nodes_.push_back(std::move(node));
  tape->consumed_ = false;
  result.tape_ = tape;
  result.node_ = static_cast<int>(tape->nodes_.size()) - 1;
  return result;
}

namespace {

Tape* common_tape(std::initializer_list<const Tensor*> ts, const char* op) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (t->tape() == nullptr) continue;
    if (tape != nullptr && tape != t->tape()) fail(op, "inputs belong to different tapes");
    tape = t->tape();
  }
  return tape;
}

std::vector<double>& grad_buf(std::vector<std::vector<double>>& grads, int node, std::size_t size) {
  auto& g = grads[static_cast<std::size_t>(node)];
  if (g.empty()) g.assign(size, 0.0);
  return g;
}

}  // namespace

Tensor Tape::watch(const Tensor& t) {
  if (t.empty()) throw std::invalid_argument("Tape::watch: empty tensor");
  Node node;
  node.rows = t.rows();
  node.cols = t.cols();
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  consumed_ = false;
  leaves_.push_back(static_cast<int>(nodes_.size()) - 1);
  Tensor bound = t.detached();
  bound.tape_ = this;
  bound.node_ = static_cast<int>(nodes_.size()) - 1;
  return bound;
}

Gradients Tape::backward(const Tensor& root) {
  if (root.tape() != this) throw std::invalid_argument("Tape::backward: root is not bound to this tape");
  if (root.size() != 1) {
    throw std::invalid_argument("Tape::backward: root must be scalar, got " + root.shape_str());
  }
  if (consumed_) {
    throw std::logic_error("Tape::backward: tape already consumed; run a new forward pass first");
  }
  consumed_ = true;

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[static_cast<std::size_t>(root.node_id())] = {1.0};

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    const auto& gout = grads[static_cast<std::size_t>(i)];
    if (gout.empty() || node.is_leaf || !node.backprop) continue;
    node.backprop(grads, gout);
  }

  Gradients result;
  for (int leaf : leaves_) {
    const Node& node = nodes_[static_cast<std::size_t>(leaf)];
    result.leaf_shapes_[leaf] = {node.rows, node.cols};
    auto& g = grads[static_cast<std::size_t>(leaf)];
    if (!g.empty()) {
      result.by_node_.emplace(leaf, Tensor(node.rows, node.cols, std::move(g)));
    }
  }
  return result;
}

Tensor Gradients::at(const Tensor& leaf) const {
  auto it = by_node_.find(leaf.node_id());
  if (it != by_node_.end()) return it->second;
  auto shape = leaf_shapes_.find(leaf.node_id());
  if (shape == leaf_shapes_.end()) {
    throw std::invalid_argument("Gradients::at: tensor was not watched on this tape");
  }
  return Tensor::zeros(shape->second.first, shape->second.second);
}

bool Gradients::reached(const Tensor& leaf) const {
  return by_node_.count(leaf.node_id()) > 0;
}

// ---------------------------------------------------------------------------
// Forward operations
// ---------------------------------------------------------------------------

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kElementwiseMul: return "elementwise_mul";
    case OpKind::kConcat: return "concat";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSoftmaxColumns: return "softmax_columns";
    case OpKind::kMeanPoolRows: return "mean_pool_rows";
    case OpKind::kMaxPoolRows: return "max_pool_rows";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
  }
  return "unknown";
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.empty() || b.empty()) fail("matmul", "empty input");
  if (a.cols() != b.rows()) {
    fail("matmul", "inner dimensions differ (" + a.shape_str() + " vs " + b.shape_str() + ")");
  }
  const int n = a.rows(), k = a.cols(), m = b.cols();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* arow = av.data() + static_cast<std::size_t>(i) * k;
    double* orow = out.data() + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double aik = arow[p];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  Tensor result(n, m, std::move(out));

  Tape* tape = common_tape({&a, &b}, "matmul");
  if (!tape) return result;
  int na = a.node_id(), nb = b.node_id();
  auto rule = [n, k, m, na, nb, ap = a.shared_values(), bp = b.shared_values()](
                  std::vector<std::vector<double>>& grads, const std::vector<double>& gout) {
    const std::vector<double>& av = *ap;
    const std::vector<double>& bv = *bp;
    if (na >= 0) {
      auto& ga = grad_buf(grads, na, static_cast<std::size_t>(n) * k);
      // dA = G * B^T
      for (int i = 0; i < n; ++i) {
        for (int p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = gout.data() + static_cast<std::size_t>(i) * m;
          const double* brow = bv.data() + static_cast<std::size_t>(p) * m;
          for (int j = 0; j < m; ++j) s += grow[j] * brow[j];
          ga[static_cast<std::size_t>(i) * k + p] += s;
        }
      }
    }
    if (nb >= 0) {
      auto& gb = grad_buf(grads, nb, static_cast<std::size_t>(k) * m);
      // dB = A^T * G
      for (int i = 0; i < n; ++i) {
        const double* arow = av.data() + static_cast<std::size_t>(i) * k;
        const double* grow = gout.data() + static_cast<std::size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
          const double aip = arow[p];
          if (aip == 0.0) continue;
          double* gbrow = gb.data() + static_cast<std::size_t>(p) * m;
          for (int j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  };
  return detail_record_op(tape, std::move(result), {na, nb}, std::move(rule));
}

namespace {

enum class Broadcast { kNone, kLeftRow, kRightRow };

// Resolves elementwise shapes: equal, or one operand is 1 x cols broadcast
// over the other's rows (the leading batch dimension).
Broadcast resolve_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.empty() || b.empty()) fail(op, "empty input");
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kNone;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRightRow;
  if (a.rows() == 1 && a.cols() == b.cols()) return Broadcast::kLeftRow;
  fail(op, "shape mismatch (" + a.shape_str() + " vs " + b.shape_str() + ")");
}

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op,
                          double (*fwd)(double, double), double da_coef, double db_coef,
                          bool grad_uses_operands) {
  Broadcast mode = resolve_broadcast(a, b, op);
  const Tensor& big = (mode == Broadcast::kLeftRow) ? b : a;
  const int n = big.rows(), m = big.cols();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      std::size_t idx = static_cast<std::size_t>(i) * m + j;
      double x = (mode == Broadcast::kLeftRow) ? av[static_cast<std::size_t>(j)] : av[idx];
      double y = (mode == Broadcast::kRightRow) ? bv[static_cast<std::size_t>(j)] : bv[idx];
      out[idx] = fwd(x, y);
    }
  }
  Tensor result(n, m, std::move(out));

  Tape* tape = common_tape({&a, &b}, op);
  if (!tape) return result;
  int na = a.node_id(), nb = b.node_id();
  std::size_t a_size = static_cast<std::size_t>(a.size());
  std::size_t b_size = static_cast<std::size_t>(b.size());
  auto rule = [=, ap = grad_uses_operands ? a.shared_values() : nullptr,
               bp = grad_uses_operands ? b.shared_values() : nullptr](
                  std::vector<std::vector<double>>& grads, const std::vector<double>& gout) {
    static const std::vector<double> kNone;
    const std::vector<double>& av = ap ? *ap : kNone;
    const std::vector<double>& bv = bp ? *bp : kNone;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        std::size_t idx = static_cast<std::size_t>(i) * m + j;
        double g = gout[idx];
        if (na >= 0) {
          std::size_t ia = (mode == Broadcast::kLeftRow) ? static_cast<std::size_t>(j) : idx;
          double coef = da_coef;
          if (grad_uses_operands) {
            std::size_t ib = (mode == Broadcast::kRightRow) ? static_cast<std::size_t>(j) : idx;
            coef = bv[ib];  // d(a*b)/da = b
          }
          grad_buf(grads, na, a_size)[ia] += coef * g;
        }
        if (nb >= 0) {
          std::size_t ib = (mode == Broadcast::kRightRow) ? static_cast<std::size_t>(j) : idx;
          double coef = db_coef;
          if (grad_uses_operands) {
            std::size_t ia = (mode == Broadcast::kLeftRow) ? static_cast<std::size_t>(j) : idx;
            coef = av[ia];  // d(a*b)/db = a
          }
          grad_buf(grads, nb, b_size)[ib] += coef * g;
        }
      }
    }
  };
  return detail_record_op(tape, std::move(result), {na, nb}, std::move(rule));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "add", [](double x, double y) { return x + y; }, 1.0, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "sub", [](double x, double y) { return x - y; }, 1.0, -1.0, false);
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "elementwise_mul", [](double x, double y) { return x * y; }, 0.0,
                            0.0, true);
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.empty() || b.empty()) fail("concat", "empty input");
  if (axis != 0 && axis != 1) fail("concat", "axis must be 0 or 1");
  int n, m;
  if (axis == 0) {
    if (a.cols() != b.cols()) {
      fail("concat", "column counts differ (" + a.shape_str() + " vs " + b.shape_str() + ")");
    }
    n = a.rows() + b.rows();
    m = a.cols();
  } else {
    if (a.rows() != b.rows()) {
      fail("concat", "row counts differ (" + a.shape_str() + " vs " + b.shape_str() + ")");
    }
    n = a.rows();
    m = a.cols() + b.cols();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n) * m);
  if (axis == 0) {
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
  } else {
    for (int i = 0; i < n; ++i) {
      const auto& av = a.values();
      const auto& bv = b.values();
      out.insert(out.end(), av.begin() + static_cast<std::size_t>(i) * a.cols(),
                 av.begin() + static_cast<std::size_t>(i + 1) * a.cols());
      out.insert(out.end(), bv.begin() + static_cast<std::size_t>(i) * b.cols(),
                 bv.begin() + static_cast<std::size_t>(i + 1) * b.cols());
    }
  }
  Tensor result(n, m, std::move(out));

  Tape* tape = common_tape({&a, &b}, "concat");
  if (!tape) return result;
  int na = a.node_id(), nb = b.node_id();
  int ar = a.rows(), ac = a.cols(), bc = b.cols();
  auto rule = [=](std::vector<std::vector<double>>& grads, const std::vector<double>& gout) {
    if (axis == 0) {
      std::size_t asz = static_cast<std::size_t>(ar) * ac;
      if (na >= 0) {
        auto& ga = grad_buf(grads, na, asz);
        for (std::size_t i = 0; i < asz; ++i) ga[i] += gout[i];
      }
      if (nb >= 0) {
        std::size_t bsz = gout.size() - asz;
        auto& gb = grad_buf(grads, nb, bsz);
        for (std::size_t i = 0; i < bsz; ++i) gb[i] += gout[asz + i];
      }
    } else {
      for (int i = 0; i < n; ++i) {
        const double* grow = gout.data() + static_cast<std::size_t>(i) * m;
        if (na >= 0) {
          auto& ga = grad_buf(grads, na, static_cast<std::size_t>(ar) * ac);
          for (int j = 0; j < ac; ++j) ga[static_cast<std::size_t>(i) * ac + j] += grow[j];
        }
        if (nb >= 0) {
          auto& gb = grad_buf(grads, nb, static_cast<std::size_t>(ar) * bc);
          for (int j = 0; j < bc; ++j) gb[static_cast<std::size_t>(i) * bc + j] += grow[ac + j];
        }
      }
    }
  };
  return detail_record_op(tape, std::move(result), {na, nb}, std::move(rule));
}

namespace {

Tensor unary_elementwise(const Tensor& x, const char* op, double (*fwd)(double),
                         double (*grad_from_out)(double)) {
  if (x.empty()) fail(op, "empty input");
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.values()[i]);
  Tensor result(x.rows(), x.cols(), std::move(out));

  Tape* tape = common_tape({&x}, op);
  if (!tape) return result;
  int nx = x.node_id();
  auto rule = [nx, op = result.shared_values(), grad_from_out](
                  std::vector<std::vector<double>>& grads, const std::vector<double>& gout) {
    if (nx < 0) return;
    const std::vector<double>& ov = *op;
    auto& gx = grad_buf(grads, nx, ov.size());
    for (std::size_t i = 0; i < ov.size(); ++i) gx[i] += grad_from_out(ov[i]) * gout[i];
  };
  return detail_record_op(tape, std::move(result), {nx}, std::move(rule));
}

}  // namespace

Tensor relu(const Tensor& x) {
  if (x.empty()) fail("relu", "empty input");
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  Tensor result(x.rows(), x.cols(), std::move(out));

  Tape* tape = common_tape({&x}, "relu");
  if (!tape) return result;
  int nx = x.node_id();
  auto rule = [nx, xp = x.shared_values()](std::vector<std::vector<double>>& grads,
                                           const std::vector<double>& gout) {
    if (nx < 0) return;
    const std::vector<double>& xv = *xp;
    auto& gx = grad_buf(grads, nx, xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += gout[i];
    }
  };
  return detail_record_op(tape, std::move(result), {nx}, std::move(rule));
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double s) { return s * (1.0 - s); });
}

Tensor tanh_act(const Tensor& x) {
  return unary_elementwise(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double t) { return 1.0 - t * t; });
}

Tensor softmax_columns(const Tensor& x) {
  if (x.empty()) fail("softmax_columns", "empty input");
  const int n = x.rows(), m = x.cols();
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (int j = 0; j < m; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) mx = std::max(mx, xv[static_cast<std::size_t>(i) * m + j]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      double e = std::exp(xv[static_cast<std::size_t>(i) * m + j] - mx);
      out[static_cast<std::size_t>(i) * m + j] = e;
      z += e;
    }
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i) * m + j] /= z;
  }
  Tensor result(n, m, std::move(out));

  Tape* tape = common_tape({&x}, "softmax_columns");
  if (!tape) return result;
  int nx = x.node_id();
  auto rule = [nx, n, m, pp = result.shared_values()](std::vector<std::vector<double>>& grads,
                                                      const std::vector<double>& gout) {
    if (nx < 0) return;
    const std::vector<double>& pv = *pp;
    auto& gx = grad_buf(grads, nx, pv.size());
    for (int j = 0; j < m; ++j) {
      double dot = 0.0;
      for (int i = 0; i < n; ++i) {
        std::size_t idx = static_cast<std::size_t>(i) * m + j;
        dot += pv[idx] * gout[idx];
      }
      for (int i = 0; i < n; ++i) {
        std::size_t idx = static_cast<std::size_t>(i) * m + j;
        gx[idx] += pv[idx] * (gout[idx] - dot);
      }
    }
  };
  return detail_record_op(tape, std::move(result), {nx}, std::move(rule));
}

Tensor mean_pool_rows(const Tensor& x) {
  if (x.empty()) fail("mean_pool_rows", "empty input");
  const int n = x.rows(), m = x.cols();
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(j)] += x.values()[static_cast<std::size_t>(i) * m + j];
  }
  for (double& v : out) v /= n;
  Tensor result(1, m, std::move(out));

  Tape* tape = common_tape({&x}, "mean_pool_rows");
  if (!tape) return result;
  int nx = x.node_id();
  auto rule = [nx, n, m](std::vector<std::vector<double>>& grads, const std::vector<double>& gout) {
    if (nx < 0) return;
    auto& gx = grad_buf(grads, nx, static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) gx[static_cast<std::size_t>(i) * m + j] += gout[static_cast<std::size_t>(j)] / n;
    }
  };
  return detail_record_op(tape, std::move(result), {nx}, std::move(rule));
}

Tensor max_pool_rows(const Tensor& x) {
  if (x.empty()) fail("max_pool_rows", "empty input");
  const int n = x.rows(), m = x.cols();
  std::vector<double> out(static_cast<std::size_t>(m));
  std::vector<int> argmax(static_cast<std::size_t>(m), 0);
  for (int j = 0; j < m; ++j) {
    double best = x.values()[static_cast<std::size_t>(j)];
    int best_i = 0;
    for (int i = 1; i < n; ++i) {
      double v = x.values()[static_cast<std::size_t>(i) * m + j];
      if (v > best) {  // ties keep the first row
        best = v;
        best_i = i;
      }
    }
    out[static_cast<std::size_t>(j)] = best;
    argmax[static_cast<std::size_t>(j)] = best_i;
  }
  Tensor result(1, m, std::move(out));

  Tape* tape = common_tape({&x}, "max_pool_rows");
  if (!tape) return result;
  int nx = x.node_id();
  auto rule = [nx, n, m, argmax](std::vector<std::vector<double>>& grads,
                                 const std::vector<double>& gout) {
    if (nx < 0) return;
    auto& gx = grad_buf(grads, nx, static_cast<std::size_t>(n) * m);
    for (int j = 0; j < m; ++j) {
      gx[static_cast<std::size_t>(argmax[static_cast<std::size_t>(j)]) * m + j] += gout[static_cast<std::size_t>(j)];
    }
  };
  return detail_record_op(tape, std::move(result), {nx}, std::move(rule));
}

namespace {

Tensor reduce_all(const Tensor& x, const char* op, bool take_mean) {
  if (x.empty()) fail(op, "empty input");
  double s = 0.0;
  for (double v : x.values()) s += v;
  double denom = take_mean ? static_cast<double>(x.size()) : 1.0;
  Tensor result = Tensor::scalar(s / denom);

  Tape* tape = common_tape({&x}, op);
  if (!tape) return result;
  int nx = x.node_id();
  std::size_t sz = static_cast<std::size_t>(x.size());
  auto rule = [nx, sz, denom](std::vector<std::vector<double>>& grads,
                              const std::vector<double>& gout) {
    if (nx < 0) return;
    auto& gx = grad_buf(grads, nx, sz);
    double g = gout[0] / denom;
    for (std::size_t i = 0; i < sz; ++i) gx[i] += g;
  };
  return detail_record_op(tape, std::move(result), {nx}, std::move(rule));
}

}  // namespace

Tensor sum(const Tensor& x) { return reduce_all(x, "sum", false); }
Tensor mean(const Tensor& x) { return reduce_all(x, "mean", true); }

Tensor scale(const Tensor& x, double factor) {
  if (x.empty()) fail("scale", "empty input");
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.values()[i];
  Tensor result(x.rows(), x.cols(), std::move(out));

  Tape* tape = common_tape({&x}, "scale");
  if (!tape) return result;
  int nx = x.node_id();
  std::size_t sz = x.values().size();
  auto rule = [nx, sz, factor](std::vector<std::vector<double>>& grads,
                               const std::vector<double>& gout) {
    if (nx < 0) return;
    auto& gx = grad_buf(grads, nx, sz);
    for (std::size_t i = 0; i < sz; ++i) gx[i] += factor * gout[i];
  };
  return detail_record_op(tape, std::move(result), {nx}, std::move(rule));
}

Tensor take_rows(const Tensor& table, const std::vector<int>& row_ids) {
  if (table.empty()) fail("take_rows", "empty table");
  if (row_ids.empty()) fail("take_rows", "empty id list");
  const int m = table.cols();
  std::vector<double> out;
  out.reserve(row_ids.size() * static_cast<std::size_t>(m));
  for (int id : row_ids) {
    if (id < 0 || id >= table.rows()) {
      fail("take_rows", "row id " + std::to_string(id) + " out of range for " + table.shape_str());
    }
    const double* row = table.values().data() + static_cast<std::size_t>(id) * m;
    out.insert(out.end(), row, row + m);
  }
  Tensor result(static_cast<int>(row_ids.size()), m, std::move(out));

  Tape* tape = common_tape({&table}, "take_rows");
  if (!tape) return result;
  int nt = table.node_id();
  std::size_t table_size = table.values().size();
  auto rule = [nt, m, row_ids, table_size](std::vector<std::vector<double>>& grads,
                                           const std::vector<double>& gout) {
    if (nt < 0) return;
    auto& gt = grad_buf(grads, nt, table_size);
    for (std::size_t r = 0; r < row_ids.size(); ++r) {
      double* dst = gt.data() + static_cast<std::size_t>(row_ids[r]) * m;
      const double* src = gout.data() + r * static_cast<std::size_t>(m);
      for (int j = 0; j < m; ++j) dst[j] += src[j];
    }
  };
  return detail_record_op(tape, std::move(result), {nt}, std::move(rule));
}

Tensor reshape(const Tensor& x, int rows, int cols) {
  if (x.empty()) fail("reshape", "empty input");
  if (rows * cols != x.size()) {
    fail("reshape", "cannot reshape " + x.shape_str() + " to " + shape_of(rows, cols));
  }
  Tensor result(rows, cols, x.values());

  Tape* tape = common_tape({&x}, "reshape");
  if (!tape) return result;
  int nx = x.node_id();
  std::size_t sz = x.values().size();
  auto rule = [nx, sz](std::vector<std::vector<double>>& grads, const std::vector<double>& gout) {
    if (nx < 0) return;
    auto& gx = grad_buf(grads, nx, sz);
    for (std::size_t i = 0; i < sz; ++i) gx[i] += gout[i];
  };
  return detail_record_op(tape, std::move(result), {nx}, std::move(rule));
}

Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, int axis) {
  if (inputs.empty()) throw std::invalid_argument("forward_op: empty input set");
  auto expect = [&](std::size_t n) {
    if (inputs.size() != n) {
      fail(op_kind_name(kind), "expected " + std::to_string(n) + " inputs, got " +
                                   std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::kMatmul: expect(2); return matmul(inputs[0], inputs[1]);
    case OpKind::kAdd: expect(2); return add(inputs[0], inputs[1]);
    case OpKind::kSub: expect(2); return sub(inputs[0], inputs[1]);
    case OpKind::kElementwiseMul: expect(2); return elementwise_mul(inputs[0], inputs[1]);
    case OpKind::kConcat: expect(2); return concat(inputs[0], inputs[1], axis);
    case OpKind::kRelu: expect(1); return relu(inputs[0]);
    case OpKind::kSigmoid: expect(1); return sigmoid(inputs[0]);
    case OpKind::kTanh: expect(1); return tanh_act(inputs[0]);
    case OpKind::kSoftmaxColumns: expect(1); return softmax_columns(inputs[0]);
    case OpKind::kMeanPoolRows: expect(1); return mean_pool_rows(inputs[0]);
    case OpKind::kMaxPoolRows: expect(1); return max_pool_rows(inputs[0]);
    case OpKind::kSum: expect(1); return sum(inputs[0]);
    case OpKind::kMean: expect(1); return mean(inputs[0]);
  }
  throw std::invalid_argument("forward_op: unknown kind");
}

}  // namespace cmml
