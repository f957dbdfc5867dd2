#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cmml {

class Tape;

// Dense row-major matrix of doubles. Vectors are 1 x n rows and scalars are
// 1 x 1. Values are immutable after construction; every operation returns a
// fresh tensor. A tensor may be bound to a tape node, in which case the
// operation that produced it recorded a local gradient rule on that tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols, std::vector<double> values);

  static Tensor zeros(int rows, int cols);
  static Tensor full(int rows, int cols, double value);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);
  static Tensor column(std::vector<double> values);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);
  static Tensor identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  bool empty() const { return size() == 0; }

  double at(int r, int c) const;
  double item() const;  // 1x1 tensors only
  const std::vector<double>& values() const;
  // Shared handle to the immutable value buffer; gradient rules capture this
  // instead of copying operand arrays.
  std::shared_ptr<const std::vector<double>> shared_values() const { return values_; }
  std::string shape_str() const;

  bool requires_grad() const { return node_ >= 0; }
  Tape* tape() const { return tape_; }
  int node_id() const { return node_; }

  // Same values, detached from any tape.
  Tensor detached() const;

  bool all_finite() const;
  bool same_values(const Tensor& other) const;  // shape and bitwise value equality

 private:
  friend class Tape;
  friend Tensor detail_record_op(Tape* tape, Tensor result, std::vector<int> input_nodes,
                                 std::function<void(std::vector<std::vector<double>>&,
                                                    const std::vector<double>&)> rule);
  int rows_ = 0;
  int cols_ = 0;
  std::shared_ptr<const std::vector<double>> values_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

enum class OpKind {
  kMatmul,
  kAdd,
  kSub,
  kElementwiseMul,
  kConcat,
  kRelu,
  kSigmoid,
  kTanh,
  kSoftmaxColumns,
  kMeanPoolRows,
  kMaxPoolRows,
  kSum,
  kMean,
};

const char* op_kind_name(OpKind kind);

// Named forward operations. Binary elementwise ops accept equal shapes or a
// right operand of shape 1 x cols / rows x 1, broadcast over the leading
// batch dimension; anything richer is rejected.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor elementwise_mul(const Tensor& a, const Tensor& b);
Tensor concat(const Tensor& a, const Tensor& b, int axis);  // 0 = rows, 1 = cols
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor softmax_columns(const Tensor& x);
Tensor mean_pool_rows(const Tensor& x);  // n x d -> 1 x d
Tensor max_pool_rows(const Tensor& x);   // n x d -> 1 x d
Tensor sum(const Tensor& x);             // -> 1 x 1
Tensor mean(const Tensor& x);            // -> 1 x 1

// Plumbing ops outside the forward_op dispatch set.
Tensor scale(const Tensor& x, double factor);
Tensor take_rows(const Tensor& table, const std::vector<int>& row_ids);
Tensor reshape(const Tensor& x, int rows, int cols);

// Uniform dispatcher over the named operations above. `axis` applies to
// kConcat only. Throws on an empty input set or arity mismatch.
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, int axis = 1);

// Result of a backward pass: dRoot/dLeaf for every watched leaf. Leaves the
// root does not reach get zero gradients.
class Gradients {
 public:
  Tensor at(const Tensor& leaf) const;
  bool reached(const Tensor& leaf) const;

 private:
  friend class Tape;
  std::unordered_map<int, Tensor> by_node_;
  std::unordered_map<int, std::pair<int, int>> leaf_shapes_;
};

// Reverse-mode tape. Single-owner: create one per forward pass, watch the
// leaves you want gradients for, build the computation, call backward once
// on a scalar root. Records stay in topological (creation) order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `t`'s values as a gradient-tracked leaf and returns the bound
  // tensor to use in the forward computation.
  Tensor watch(const Tensor& t);

  // One backward pass per forward build; a second call without new forward
  // work is an error.
  Gradients backward(const Tensor& root);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  bool consumed() const { return consumed_; }

 private:
  friend Tensor detail_record_op(Tape* tape, Tensor result, std::vector<int> input_nodes,
                                 std::function<void(std::vector<std::vector<double>>&,
                                                    const std::vector<double>&)> rule);

  struct Node {
    int rows = 0;
    int cols = 0;
    bool is_leaf = false;
    std::vector<int> inputs;
    // Accumulates input gradients given this node's output gradient.
    std::function<void(std::vector<std::vector<double>>&, const std::vector<double>&)> backprop;
  };

  std::vector<Node> nodes_;
  std::vector<int> leaves_;
  bool consumed_ = false;
};

}  // namespace cmml
