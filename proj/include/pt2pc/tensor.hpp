#pragma once

// Dense rank-2 float tensors with a reverse-mode differentiation tape.
//
// Ops record onto the thread's active Tape (see TapeScope) whenever one of
// their inputs requires a gradient. Backward functions are themselves
// written in terms of recorded ops, so a gradient computed with
// create_graph=true can be differentiated again (needed by the gradient
// penalty).

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pt2pc {

class Tape;

namespace detail {
struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;
  bool requires_grad = false;
  Tape* tape = nullptr;  // recording tape; null for leaves
  std::int64_t op = -1;  // index into tape's records; -1 for leaves
  std::vector<float> grad;  // accumulated by Tape::backward on leaves
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols);
  static Tensor full(int rows, int cols, float value);
  static Tensor from(int rows, int cols, std::vector<float> values);
  static Tensor scalar(float value) { return from(1, 1, {value}); }
  static Tensor row(std::span<const float> values);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->data.size(); }
  std::vector<int> shape() const { return {rows(), cols()}; }

  std::span<const float> values() const { return node_->data; }
  /// Mutable access for parameters and leaves only; never mutate a tensor
  /// that has been consumed by a recorded op.
  std::span<float> mutable_values() { return node_->data; }
  float at(int r, int c) const { return node_->data[static_cast<std::size_t>(r) * cols() + c]; }
  float item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  /// Gradient accumulated by the last backward pass (leaves only).
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() { return node_->grad; }
  void zero_grad();

  /// Copy of the data with no tape history.
  Tensor detach() const;

  detail::TensorNode* node() const { return node_.get(); }
  bool same(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;
  friend class Tape;
  friend Tensor make_tensor(int, int, std::vector<float>);
};

using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t num_records() const { return records_.size(); }
  bool consumed() const { return consumed_; }

  /// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable
  /// from `loss`. Consumes the tape: calling again before reset() throws.
  void backward(const Tensor& loss);

  /// Gradients of scalar `output` with respect to `inputs` (zeros when
  /// unreachable). With create_graph the returned tensors are recorded on
  /// this tape and can be differentiated again. Does not consume the tape.
  std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs, bool create_graph);

  void reset();

  /// Used by op implementations.
  void record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn);

 private:
  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn fn;
  };

  std::vector<Tensor> run_backward(const Tensor& output, const std::vector<Tensor>* inputs, bool create_graph);

  std::deque<Record> records_;
  bool consumed_ = false;
};

/// Makes `tape` the recording tape of the current thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording on the current thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// ---- ops ------------------------------------------------------------------

/// op(a) * op(b), where op transposes when the flag is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor add_scalar(const Tensor& x, float value);
/// x[M,D] + b[1,D] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [M,D] -> [1,D].
Tensor sum_rows(const Tensor& x);
/// [1,D] -> [M,D].
Tensor repeat_rows(const Tensor& x, int times);
/// [1,1] -> [rows,cols].
Tensor expand(const Tensor& x, int rows, int cols);
/// Elementwise power; 0^p is taken as 0 for p < 0 so that sqrt has a zero
/// subgradient at the origin.
Tensor pow(const Tensor& x, float exponent);
Tensor sqrt(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope);

struct MaxPoolResult {
  Tensor values;                // [1,D]
  std::vector<int> argmax;      // row index per column
};
/// Columnwise max over K rows; ties go to the lowest row.
MaxPoolResult max_pool_set(const Tensor& x);
/// out[0,d] = x[index[d], d].
Tensor pick_rows(const Tensor& x, std::vector<int> index);
/// Inverse layout of pick_rows: [1,D] -> [rows,D], zero except x[index[d], d].
Tensor scatter_rows(const Tensor& x, std::vector<int> index, int rows);

/// axis 0 stacks rows, axis 1 concatenates features.
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);
/// Embeds x at [start, start+len) of a zero tensor with `total` extent on `axis`.
Tensor pad(const Tensor& x, int axis, int start, int total);
Tensor gather_rows(const Tensor& x, std::vector<int> index);
Tensor scatter_add_rows(const Tensor& x, std::vector<int> index, int rows);

/// -log softmax(logits)[label] for logits [1,C]. First-order only.
Tensor cross_entropy(const Tensor& logits, int label);

// ---- layers and optimizer -------------------------------------------------

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [1, out]

  int in_features() const { return weight.cols(); }
  int out_features() const { return weight.rows(); }
  /// x[M,in] -> [M,out].
  Tensor operator()(const Tensor& x) const;
};

/// Weights uniform in [-1/sqrt(in), 1/sqrt(in)], zero bias.
Linear make_linear(int in, int out, std::uint64_t seed);

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.9f;
  float eps = 1e-8f;
};

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of `params` using their accumulated grads.
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg);
/// Same update with explicit gradient buffers.
void adam_step(std::vector<Tensor>& params, std::span<const std::vector<float>> grads, AdamState& state,
               const AdamConfig& cfg);

}  // namespace pt2pc
