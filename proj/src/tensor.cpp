#include "pt2pc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <unordered_map>

#include "pt2pc/error.hpp"

namespace pt2pc {

namespace {

thread_local Tape* g_active_tape = nullptr;

// Every output element is accumulated as c_ij += a_ip * b_pj over p in
// ascending order, with multiply and add rounded separately (this file is
// built without FP contraction), so a row's result never depends on its
// position in the batch or on which kernel path handled it. This keeps
// point- and child-permutation invariance bit-exact.
using v8 = float __attribute__((vector_size(32)));

inline v8 load8(const float* p) {
  v8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store8(float* p, v8 v) { std::memcpy(p, &v, sizeof v); }

// R rows by 8*V columns starting at column j0, accumulators in registers.
template <int R, int V>
void gemm_tile(const float* a, int k, const float* b, int n, float* c, int j0) {
  v8 acc[R][V];
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) acc[r][v] = load8(c + static_cast<std::ptrdiff_t>(r) * n + j0 + 8 * v);
  for (int p = 0; p < k; ++p) {
    const float* bp = b + static_cast<std::ptrdiff_t>(p) * n + j0;
    v8 bv[V];
    for (int v = 0; v < V; ++v) bv[v] = load8(bp + 8 * v);
    for (int r = 0; r < R; ++r) {
      const float s = a[static_cast<std::ptrdiff_t>(r) * k + p];
      for (int v = 0; v < V; ++v) acc[r][v] += s * bv[v];
    }
  }
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) store8(c + static_cast<std::ptrdiff_t>(r) * n + j0 + 8 * v, acc[r][v]);
}

template <int R>
void gemm_rows(const float* a, int k, const float* b, int n, float* c) {
  int j = 0;
  for (; j + 32 <= n; j += 32) gemm_tile<R, 4>(a, k, b, n, c, j);
  for (; j + 8 <= n; j += 8) gemm_tile<R, 1>(a, k, b, n, c, j);
  for (; j < n; ++j)
    for (int r = 0; r < R; ++r) {
      float acc = c[static_cast<std::ptrdiff_t>(r) * n + j];
      const float* ar = a + static_cast<std::ptrdiff_t>(r) * k;
      for (int p = 0; p < k; ++p) acc += ar[p] * b[static_cast<std::ptrdiff_t>(p) * n + j];
      c[static_cast<std::ptrdiff_t>(r) * n + j] = acc;
    }
}

void gemm_nn(const float* a, int m, int k, const float* b, int n, float* c) {
  int i = 0;
  for (; i + 4 <= m; i += 4)
    gemm_rows<4>(a + static_cast<std::ptrdiff_t>(i) * k, k, b, n, c + static_cast<std::ptrdiff_t>(i) * n);
  for (; i < m; ++i)
    gemm_rows<1>(a + static_cast<std::ptrdiff_t>(i) * k, k, b, n, c + static_cast<std::ptrdiff_t>(i) * n);
}

std::vector<float> transposed(const float* x, int rows, int cols) {
  std::vector<float> t(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) t[static_cast<std::size_t>(c) * rows + r] = x[static_cast<std::size_t>(r) * cols + c];
  return t;
}

// c = op(a) * op(b), c zero-initialized, shapes already checked.
void gemm(const float* a, int ar, int ac, bool ta, const float* b, int br, int bc, bool tb, float* c) {
  if (!ta && !tb) {
    gemm_nn(a, ar, ac, b, bc, c);
  } else if (!ta && tb) {
    const auto bt = transposed(b, br, bc);
    gemm_nn(a, ar, ac, bt.data(), br, c);
  } else if (ta && !tb) {
    const auto at = transposed(a, ar, ac);
    gemm_nn(at.data(), ac, ar, b, bc, c);
  } else {
    const auto at = transposed(a, ar, ac);
    const auto bt = transposed(b, br, bc);
    gemm_nn(at.data(), ac, ar, bt.data(), br, c);
  }
}

std::string dims(const Tensor& t) { return "[" + std::to_string(t.rows()) + "," + std::to_string(t.cols()) + "]"; }

void check_finite(const Tensor& t, const char* op) {
  for (float v : t.values())
    if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, std::string("non-finite value produced by ") + op);
}

bool wants_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

bool wants_record(const std::vector<Tensor>& inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShapeMismatch,
          std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
}

}  // namespace

Tensor make_tensor(int rows, int cols, std::vector<float> values) {
  require(rows >= 0 && cols >= 0, ErrorCode::kShapeMismatch, "negative tensor extent");
  require(values.size() == static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), ErrorCode::kShapeMismatch,
          "tensor data length does not match shape");
  auto n = std::make_shared<detail::TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->data = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(int rows, int cols) {
  return make_tensor(rows, cols, std::vector<float>(static_cast<std::size_t>(rows) * cols, 0.0f));
}

Tensor Tensor::full(int rows, int cols, float value) {
  return make_tensor(rows, cols, std::vector<float>(static_cast<std::size_t>(rows) * cols, value));
}

Tensor Tensor::from(int rows, int cols, std::vector<float> values) { return make_tensor(rows, cols, std::move(values)); }

Tensor Tensor::row(std::span<const float> values) {
  return make_tensor(1, static_cast<int>(values.size()), std::vector<float>(values.begin(), values.end()));
}

float Tensor::item() const {
  require(size() == 1, ErrorCode::kShapeMismatch, "item() on non-scalar tensor " + dims(*this));
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  require(node_->op < 0, ErrorCode::kInvalidArgument, "requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  return *this;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0f); }

Tensor Tensor::detach() const { return make_tensor(rows(), cols(), node_->data); }

// ---- tape -----------------------------------------------------------------

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }
NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }
Tape* active_tape() { return g_active_tape; }

void Tape::record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn) {
  auto* n = out.node();
  n->requires_grad = true;
  n->tape = this;
  n->op = static_cast<std::int64_t>(records_.size());
  records_.push_back(Record{std::move(inputs), out, std::move(fn)});
}

void Tape::reset() {
  records_.clear();
  consumed_ = false;
}

std::vector<Tensor> Tape::run_backward(const Tensor& output, const std::vector<Tensor>* inputs, bool create_graph) {
  require(output.size() == 1, ErrorCode::kShapeMismatch, "backward requires a scalar output, got " + dims(output));
  require(!consumed_, ErrorCode::kTapeConsumed, "tape already consumed by backward(); record again");
  auto* out_node = output.node();
  require(out_node->op < 0 || out_node->tape == this, ErrorCode::kInvalidArgument,
          "output was not recorded on this tape");

  std::unordered_map<detail::TensorNode*, Tensor> grads;
  grads.emplace(out_node, Tensor::full(output.rows(), output.cols(), 1.0f));

  std::unordered_map<detail::TensorNode*, std::size_t> wanted;
  if (inputs)
    for (std::size_t i = 0; i < inputs->size(); ++i) wanted.emplace((*inputs)[i].node(), i);
  std::vector<Tensor> result(inputs ? inputs->size() : 0);

  for (std::int64_t idx = out_node->op; idx >= 0; --idx) {
    Record& rec = records_[static_cast<std::size_t>(idx)];
    auto it = grads.find(rec.output.node());
    if (it == grads.end()) continue;
    Tensor g = std::move(it->second);
    grads.erase(it);
    if (auto w = wanted.find(rec.output.node()); w != wanted.end()) result[w->second] = g;

    std::vector<Tensor> in_grads;
    if (create_graph) {
      TapeScope scope(*this);
      in_grads = rec.fn(g);
    } else {
      NoGradScope scope;
      in_grads = rec.fn(g);
    }
    for (std::size_t i = 0; i < rec.inputs.size() && i < in_grads.size(); ++i) {
      const Tensor& in = rec.inputs[i];
      if (!in.requires_grad() || !in_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(in.node(), in_grads[i]);
      if (!inserted) {
        if (create_graph) {
          TapeScope scope(*this);
          slot->second = add(slot->second, in_grads[i]);
        } else {
          NoGradScope scope;
          slot->second = add(slot->second, in_grads[i]);
        }
      }
    }
  }

  if (inputs) {
    for (auto& [node, g] : grads)
      if (auto w = wanted.find(node); w != wanted.end()) result[w->second] = g;
    for (std::size_t i = 0; i < result.size(); ++i)
      if (!result[i].defined()) result[i] = Tensor::zeros((*inputs)[i].rows(), (*inputs)[i].cols());
    return result;
  }

  for (auto& [node, g] : grads) {
    if (node->op >= 0 || !node->requires_grad) continue;
    if (node->grad.size() != node->data.size()) node->grad.assign(node->data.size(), 0.0f);
    auto src = g.values();
    for (std::size_t i = 0; i < src.size(); ++i) node->grad[i] += src[i];
  }
  return {};
}

void Tape::backward(const Tensor& loss) {
  run_backward(loss, nullptr, false);
  consumed_ = true;
}

std::vector<Tensor> Tape::grad(const Tensor& output, const std::vector<Tensor>& inputs, bool create_graph) {
  return run_backward(output, &inputs, create_graph);
}

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const int m = ta ? a.cols() : a.rows();
  const int k = ta ? a.rows() : a.cols();
  const int kb = tb ? b.cols() : b.rows();
  const int n = tb ? b.rows() : b.cols();
  require(k == kb, ErrorCode::kShapeMismatch, "matmul: inner dimensions differ " + dims(a) + " x " + dims(b));

  Tensor out = Tensor::zeros(m, n);
  gemm(a.values().data(), a.rows(), a.cols(), ta, b.values().data(), b.rows(), b.cols(), tb,
       out.mutable_values().data());
  check_finite(out, "matmul");

  if (wants_record({&a, &b})) {
    g_active_tape->record(out, {a, b}, [a, b, ta, tb](const Tensor& g) -> std::vector<Tensor> {
      Tensor ga, gb;
      if (a.requires_grad()) {
        if (!ta) ga = matmul(g, b, false, !tb);
        else ga = tb ? matmul(b, g, true, true) : matmul(b, g, false, true);
      }
      if (b.requires_grad()) {
        if (!tb) gb = ta ? matmul(a, g, false, false) : matmul(a, g, true, false);
        else gb = ta ? matmul(g, a, true, true) : matmul(g, a, true, false);
      }
      return {ga, gb};
    });
  }
  return out;
}

namespace {

template <class F>
Tensor elementwise2(const Tensor& a, const Tensor& b, const char* name, F f) {
  same_shape(a, b, name);
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  auto x = a.values(), y = b.values();
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  check_finite(out, name);
  return out;
}

template <class F>
Tensor elementwise1(const Tensor& a, const char* name, F f) {
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  auto x = a.values();
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
  check_finite(out, name);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = elementwise2(a, b, "add", [](float x, float y) { return x + y; });
  if (wants_record({&a, &b}))
    g_active_tape->record(out, {a, b}, [](const Tensor& g) -> std::vector<Tensor> { return {g, g}; });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = elementwise2(a, b, "sub", [](float x, float y) { return x - y; });
  if (wants_record({&a, &b}))
    g_active_tape->record(out, {a, b}, [b](const Tensor& g) -> std::vector<Tensor> {
      return {g, b.requires_grad() ? scale(g, -1.0f) : Tensor()};
    });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = elementwise2(a, b, "mul", [](float x, float y) { return x * y; });
  if (wants_record({&a, &b}))
    g_active_tape->record(out, {a, b}, [a, b](const Tensor& g) -> std::vector<Tensor> {
      return {a.requires_grad() ? mul(g, b) : Tensor(), b.requires_grad() ? mul(g, a) : Tensor()};
    });
  return out;
}

Tensor scale(const Tensor& x, float factor) {
  Tensor out = elementwise1(x, "scale", [factor](float v) { return v * factor; });
  if (wants_record({&x}))
    g_active_tape->record(out, {x}, [factor](const Tensor& g) -> std::vector<Tensor> { return {scale(g, factor)}; });
  return out;
}

Tensor add_scalar(const Tensor& x, float value) {
  Tensor out = elementwise1(x, "add_scalar", [value](float v) { return v + value; });
  if (wants_record({&x})) g_active_tape->record(out, {x}, [](const Tensor& g) -> std::vector<Tensor> { return {g}; });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require(bias.rows() == 1 && bias.cols() == x.cols(), ErrorCode::kShapeMismatch,
          "add_bias: bias " + dims(bias) + " does not fit " + dims(x));
  Tensor out = x.detach();
  auto o = out.mutable_values();
  auto b = bias.values();
  const auto cols = static_cast<std::size_t>(x.cols());
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i % cols];
  check_finite(out, "add_bias");
  if (wants_record({&x, &bias}))
    g_active_tape->record(out, {x, bias}, [bias](const Tensor& g) -> std::vector<Tensor> {
      return {g, bias.requires_grad() ? sum_rows(g) : Tensor()};
    });
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.values()) s += v;
  Tensor out = Tensor::scalar(static_cast<float>(s));
  check_finite(out, "sum");
  const int r = x.rows(), c = x.cols();
  if (wants_record({&x}))
    g_active_tape->record(out, {x}, [r, c](const Tensor& g) -> std::vector<Tensor> { return {expand(g, r, c)}; });
  return out;
}

Tensor mean(const Tensor& x) {
  require(x.size() > 0, ErrorCode::kShapeMismatch, "mean of empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(x.size()));
}

Tensor sum_rows(const Tensor& x) {
  Tensor out = Tensor::zeros(1, x.cols());
  auto o = out.mutable_values();
  auto v = x.values();
  const auto cols = static_cast<std::size_t>(x.cols());
  for (std::size_t i = 0; i < v.size(); ++i) o[i % cols] += v[i];
  check_finite(out, "sum_rows");
  const int r = x.rows();
  if (wants_record({&x}))
    g_active_tape->record(out, {x}, [r](const Tensor& g) -> std::vector<Tensor> { return {repeat_rows(g, r)}; });
  return out;
}

Tensor repeat_rows(const Tensor& x, int times) {
  require(x.rows() == 1 && times >= 1, ErrorCode::kShapeMismatch, "repeat_rows expects a [1,D] row");
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(times) * x.cols());
  for (int i = 0; i < times; ++i) data.insert(data.end(), x.values().begin(), x.values().end());
  Tensor out = Tensor::from(times, x.cols(), std::move(data));
  if (wants_record({&x})) g_active_tape->record(out, {x}, [](const Tensor& g) -> std::vector<Tensor> { return {sum_rows(g)}; });
  return out;
}

Tensor expand(const Tensor& x, int rows, int cols) {
  require(x.size() == 1, ErrorCode::kShapeMismatch, "expand expects a scalar");
  Tensor out = Tensor::full(rows, cols, x.values()[0]);
  if (wants_record({&x})) g_active_tape->record(out, {x}, [](const Tensor& g) -> std::vector<Tensor> { return {sum(g)}; });
  return out;
}

Tensor pow(const Tensor& x, float exponent) {
  Tensor out = elementwise1(x, "pow", [exponent](float v) {
    if (v == 0.0f && exponent < 0.0f) return 0.0f;
    return std::pow(v, exponent);
  });
  if (wants_record({&x}))
    g_active_tape->record(out, {x}, [x, exponent](const Tensor& g) -> std::vector<Tensor> {
      return {mul(g, scale(pow(x, exponent - 1.0f), exponent))};
    });
  return out;
}

Tensor sqrt(const Tensor& x) { return pow(x, 0.5f); }

Tensor leaky_relu(const Tensor& x, float slope) {
  Tensor out = elementwise1(x, "leaky_relu", [slope](float v) { return v >= 0.0f ? v : slope * v; });
  if (wants_record({&x})) {
    Tensor mask = elementwise1(x, "leaky_relu", [slope](float v) { return v >= 0.0f ? 1.0f : slope; });
    g_active_tape->record(out, {x}, [mask](const Tensor& g) -> std::vector<Tensor> { return {mul(g, mask)}; });
  }
  return out;
}

MaxPoolResult max_pool_set(const Tensor& x) {
  require(x.rows() >= 1, ErrorCode::kShapeMismatch, "max_pool_set over an empty set");
  std::vector<int> arg(static_cast<std::size_t>(x.cols()), 0);
  auto v = x.values();
  const auto cols = static_cast<std::size_t>(x.cols());
  for (int r = 1; r < x.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c)
      if (v[r * cols + c] > v[static_cast<std::size_t>(arg[c]) * cols + c]) arg[c] = r;
  Tensor values = pick_rows(x, arg);
  return {values, std::move(arg)};
}

Tensor pick_rows(const Tensor& x, std::vector<int> index) {
  require(static_cast<int>(index.size()) == x.cols(), ErrorCode::kShapeMismatch, "pick_rows: index length != cols");
  Tensor out = Tensor::zeros(1, x.cols());
  auto o = out.mutable_values();
  for (int c = 0; c < x.cols(); ++c) {
    require(index[c] >= 0 && index[c] < x.rows(), ErrorCode::kShapeMismatch, "pick_rows: index out of range");
    o[c] = x.at(index[c], c);
  }
  const int rows = x.rows();
  if (wants_record({&x}))
    g_active_tape->record(out, {x}, [index = std::move(index), rows](const Tensor& g) -> std::vector<Tensor> {
      return {scatter_rows(g, index, rows)};
    });
  return out;
}

Tensor scatter_rows(const Tensor& x, std::vector<int> index, int rows) {
  require(x.rows() == 1 && static_cast<int>(index.size()) == x.cols(), ErrorCode::kShapeMismatch,
          "scatter_rows expects a [1,D] row and D indices");
  Tensor out = Tensor::zeros(rows, x.cols());
  auto o = out.mutable_values();
  for (int c = 0; c < x.cols(); ++c) {
    require(index[c] >= 0 && index[c] < rows, ErrorCode::kShapeMismatch, "scatter_rows: index out of range");
    o[static_cast<std::size_t>(index[c]) * x.cols() + c] = x.values()[c];
  }
  if (wants_record({&x}))
    g_active_tape->record(out, {x}, [index = std::move(index)](const Tensor& g) -> std::vector<Tensor> {
      return {pick_rows(g, index)};
    });
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  require(!xs.empty(), ErrorCode::kShapeMismatch, "concat of nothing");
  require(axis == 0 || axis == 1, ErrorCode::kShapeMismatch, "concat axis must be 0 or 1");
  std::vector<int> extents;
  int total = 0;
  for (const auto& t : xs) {
    if (axis == 0)
      require(t.cols() == xs[0].cols(), ErrorCode::kShapeMismatch, "concat rows: column mismatch");
    else
      require(t.rows() == xs[0].rows(), ErrorCode::kShapeMismatch, "concat cols: row mismatch");
    extents.push_back(axis == 0 ? t.rows() : t.cols());
    total += extents.back();
  }
  Tensor out;
  if (axis == 0) {
    std::vector<float> data;
    data.reserve(static_cast<std::size_t>(total) * xs[0].cols());
    for (const auto& t : xs) data.insert(data.end(), t.values().begin(), t.values().end());
    out = Tensor::from(total, xs[0].cols(), std::move(data));
  } else {
    const int rows = xs[0].rows();
    out = Tensor::zeros(rows, total);
    auto o = out.mutable_values();
    int off = 0;
    for (const auto& t : xs) {
      for (int r = 0; r < rows; ++r)
        std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(r) * t.cols(), t.cols(),
                    o.begin() + static_cast<std::ptrdiff_t>(r) * total + off);
      off += t.cols();
    }
  }
  if (wants_record(xs))
    g_active_tape->record(out, xs, [xs, extents, axis](const Tensor& g) -> std::vector<Tensor> {
      std::vector<Tensor> gs;
      int off = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        gs.push_back(xs[i].requires_grad() ? slice(g, axis, off, extents[i]) : Tensor());
        off += extents[i];
      }
      return gs;
    });
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  const int extent = axis == 0 ? x.rows() : x.cols();
  require(start >= 0 && length >= 0 && start + length <= extent, ErrorCode::kShapeMismatch, "slice out of range");
  Tensor out;
  if (axis == 0) {
    auto b = x.values().begin() + static_cast<std::ptrdiff_t>(start) * x.cols();
    out = Tensor::from(length, x.cols(), std::vector<float>(b, b + static_cast<std::ptrdiff_t>(length) * x.cols()));
  } else {
    out = Tensor::zeros(x.rows(), length);
    auto o = out.mutable_values();
    for (int r = 0; r < x.rows(); ++r)
      std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(r) * x.cols() + start, length,
                  o.begin() + static_cast<std::ptrdiff_t>(r) * length);
  }
  if (wants_record({&x}))
    g_active_tape->record(out, {x}, [axis, start, extent](const Tensor& g) -> std::vector<Tensor> {
      return {pad(g, axis, start, extent)};
    });
  return out;
}

Tensor pad(const Tensor& x, int axis, int start, int total) {
  const int extent = axis == 0 ? x.rows() : x.cols();
  require(start >= 0 && start + extent <= total, ErrorCode::kShapeMismatch, "pad out of range");
  Tensor out = axis == 0 ? Tensor::zeros(total, x.cols()) : Tensor::zeros(x.rows(), total);
  auto o = out.mutable_values();
  if (axis == 0) {
    std::copy(x.values().begin(), x.values().end(), o.begin() + static_cast<std::ptrdiff_t>(start) * x.cols());
  } else {
    for (int r = 0; r < x.rows(); ++r)
      std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(r) * x.cols(), x.cols(),
                  o.begin() + static_cast<std::ptrdiff_t>(r) * total + start);
  }
  if (wants_record({&x}))
    g_active_tape->record(out, {x}, [axis, start, extent](const Tensor& g) -> std::vector<Tensor> {
      return {slice(g, axis, start, extent)};
    });
  return out;
}

Tensor gather_rows(const Tensor& x, std::vector<int> index) {
  const auto cols = static_cast<std::size_t>(x.cols());
  std::vector<float> data(index.size() * cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < x.rows(), ErrorCode::kShapeMismatch, "gather_rows: index out of range");
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(index[i] * cols), cols, data.begin() + i * cols);
  }
  Tensor out = Tensor::from(static_cast<int>(index.size()), x.cols(), std::move(data));
  const int rows = x.rows();
  if (wants_record({&x}))
    g_active_tape->record(out, {x}, [index = std::move(index), rows](const Tensor& g) -> std::vector<Tensor> {
      return {scatter_add_rows(g, index, rows)};
    });
  return out;
}

Tensor scatter_add_rows(const Tensor& x, std::vector<int> index, int rows) {
  require(static_cast<int>(index.size()) == x.rows(), ErrorCode::kShapeMismatch, "scatter_add_rows: index length");
  Tensor out = Tensor::zeros(rows, x.cols());
  auto o = out.mutable_values();
  const auto cols = static_cast<std::size_t>(x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < rows, ErrorCode::kShapeMismatch, "scatter_add_rows: index out of range");
    for (std::size_t c = 0; c < cols; ++c) o[index[i] * cols + c] += x.values()[i * cols + c];
  }
  if (wants_record({&x}))
    g_active_tape->record(out, {x}, [index = std::move(index)](const Tensor& g) -> std::vector<Tensor> {
      return {gather_rows(g, index)};
    });
  return out;
}

Tensor cross_entropy(const Tensor& logits, int label) {
  require(logits.rows() == 1 && label >= 0 && label < logits.cols(), ErrorCode::kShapeMismatch,
          "cross_entropy expects [1,C] logits and a label in range");
  auto z = logits.values();
  const float zmax = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (float v : z) denom += std::exp(static_cast<double>(v - zmax));
  std::vector<float> prob(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) prob[i] = static_cast<float>(std::exp(static_cast<double>(z[i] - zmax)) / denom);
  const double loss = -(static_cast<double>(z[label] - zmax) - std::log(denom));
  Tensor out = Tensor::scalar(static_cast<float>(loss));
  check_finite(out, "cross_entropy");
  if (wants_record({&logits})) {
    prob[label] -= 1.0f;
    Tensor dz = Tensor::from(1, logits.cols(), std::move(prob));
    g_active_tape->record(out, {logits}, [dz](const Tensor& g) -> std::vector<Tensor> {
      require(active_tape() == nullptr, ErrorCode::kInvalidArgument, "cross_entropy supports first-order gradients only");
      return {scale(dz, g.item())};
    });
  }
  return out;
}

// ---- layers and optimizer -------------------------------------------------

Tensor Linear::operator()(const Tensor& x) const { return add_bias(matmul(x, weight, false, true), bias); }

Linear make_linear(int in, int out, std::uint64_t seed) {
  require(in >= 1 && out >= 1, ErrorCode::kInvalidArgument, "linear layer extents must be positive");
  std::mt19937_64 rng(seed);
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  std::uniform_real_distribution<float> u(-bound, bound);
  std::vector<float> w(static_cast<std::size_t>(in) * out);
  for (auto& v : w) v = u(rng);
  Linear l{Tensor::from(out, in, std::move(w)), Tensor::zeros(1, out)};
  l.weight.set_requires_grad(true);
  l.bias.set_requires_grad(true);
  return l;
}

void adam_step(std::vector<Tensor>& params, std::span<const std::vector<float>> grads, AdamState& state,
               const AdamConfig& cfg) {
  require(grads.size() == params.size(), ErrorCode::kShapeMismatch, "adam_step: gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0f);
      state.v.emplace_back(p.size(), 0.0f);
    }
  }
  require(state.m.size() == params.size(), ErrorCode::kShapeMismatch, "adam_step: state/parameter count mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].mutable_values();
    const auto& g = grads[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    require(m.size() == p.size(), ErrorCode::kShapeMismatch, "adam_step: state shape mismatch");
    require(g.empty() || g.size() == p.size(), ErrorCode::kShapeMismatch, "adam_step: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float gi = g.empty() ? 0.0f : g[i];
      m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg) {
  std::vector<std::vector<float>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.emplace_back(p.grad().begin(), p.grad().end());
  adam_step(params, grads, state, cfg);
}

}  // namespace pt2pc
