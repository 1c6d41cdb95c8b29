#pragma once

// Dense float tensors and a tape-based reverse-mode autodiff graph.
//
// Conventions:
//  * row-major float32 storage, shapes are lists of positive extents and a
//    scalar has the empty shape {};
//  * no broadcasting except the explicit scalar helpers (`scale`,
//    `add_scalar`) and the dedicated `bias_add` / `stamp` ops;
//  * reductions always run left to right over the flat index, so repeated
//    runs are bitwise reproducible;
//  * relu'(0) = 0 and d|x|/dx at 0 = 0.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dormant {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f);
  Tensor(Shape s, std::vector<float> values);

  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

  std::size_t numel() const noexcept { return data.size(); }
  int rank() const noexcept { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  float item() const;

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  bool operator==(const Tensor&) const = default;
};

// Bitwise equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
bool bitwise_equal(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return node(v.id).value; }
  bool requires_grad(Var v) const { return node(v.id).requires_grad; }

  // Gradient of the last backward root w.r.t. `v`; zeros if none reached it.
  Tensor grad(Var v) const;
  bool has_grad(Var v) const { return node(v.id).grad.has_value(); }

  // Accumulates d(root)/d(leaf) into every requires_grad leaf. Interior
  // gradients are recomputed from scratch on each call.
  void backward(Var root);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::string& op_name(Var v) const { return node(v.id).op; }

  // Op plumbing.
  Var push(std::string op, Tensor value, std::vector<int> inputs, BackwardFn fn);
  bool wants_grad(int id) const { return node(id).requires_grad; }
  const Tensor& out_grad(int id) const { return *node(id).grad; }
  const Tensor& value_of(int id) const { return node(id).value; }
  // Lazily zero-initialized gradient buffer of node `id`.
  Tensor& grad_buffer(int id);

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  const Node& node(int id) const;
  Node& node(int id);

  std::vector<Node> nodes_;
};

// ---- dense kernels (no graph) -------------------------------------------

// C[m×n] (+)= A[m×k] · B[k×n], reduction over k in increasing order.
void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
// C[m×n] (+)= A[k×m]ᵀ · B[k×n].
void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void transpose(int rows, int cols, const float* src, float* dst);

// ---- differentiable ops --------------------------------------------------

Var matmul(Var a, Var b);
Var bias_add(Var x, Var bias);  // x[N×F] + bias[F] per row
Var conv2d(Var input, Var kernel, Var bias);
Var relu(Var x);
Var maxpool2x2(Var x);
Var flatten(Var x);
Var reshape(Var x, Shape shape);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var x);
Var scale(Var x, float factor);
Var add_scalar(Var x, float offset);
Var abs(Var x);
Var tanh(Var x);
Var sum(Var x);
Var dot(Var a, Var b);
Var l2norm(Var x);
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
// base with base[indices[i]] += values[i] (flat indices, unique).
Var scatter_add(Var base, std::span<const std::uint32_t> indices, Var values);
// (1 − m)⊙x + m⊙p with mask[H×W] shared over channels and pattern[C×H×W]
// shared over the batch; x is N×C×H×W.
Var stamp(Var x, Var mask, Var pattern);

}  // namespace dormant
