#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <sstream>

#include "errors.hpp"

namespace dormant {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) fail(ErrorKind::Dimension, "non-positive extent in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size()) {
    fail(ErrorKind::Dimension, "shape " + shape_string(shape) + " does not match " +
                                   std::to_string(data.size()) + " values");
  }
}

float Tensor::item() const {
  if (data.size() != 1) fail(ErrorKind::Usage, "item() on tensor of shape " + shape_string(shape));
  return data[0];
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](float v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return graph->value(*this); }

// ---- Graph ----------------------------------------------------------------

const Graph::Node& Graph::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    fail(ErrorKind::Usage, "variable does not belong to this graph");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

Graph::Node& Graph::node(int id) {
  return const_cast<Node&>(static_cast<const Graph&>(*this).node(id));
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::push(std::string op, Tensor value, std::vector<int> inputs, BackwardFn fn) {
  bool needs = false;
  for (int in : inputs) {
    if (in >= static_cast<int>(nodes_.size())) fail(ErrorKind::Usage, "input node out of order");
    needs = needs || node(in).requires_grad;
  }
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.requires_grad = needs;
  n.is_leaf = false;
  n.inputs = std::move(inputs);
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Graph::grad_buffer(int id) {
  Node& n = node(id);
  if (!n.grad) n.grad = Tensor(n.value.shape, 0.0f);
  return *n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = node(v.id);
  return n.grad ? *n.grad : Tensor(n.value.shape, 0.0f);
}

void Graph::zero_grad() {
  for (Node& n : nodes_) n.grad.reset();
}

void Graph::backward(Var root) {
  if (root.graph != this) fail(ErrorKind::Usage, "backward root belongs to another graph");
  const Node& r = node(root.id);
  if (r.value.numel() != 1 || !r.value.shape.empty()) {
    fail(ErrorKind::Usage, "backward root must be a scalar, got shape " + shape_string(r.value.shape));
  }
  for (Node& n : nodes_) {
    if (!n.is_leaf) n.grad.reset();
  }
  if (!r.requires_grad) return;
  grad_buffer(root.id).data[0] += 1.0f;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf || !n.grad || !n.backward) continue;
    n.backward(*this, id);
  }
}

// ---- kernels --------------------------------------------------------------

void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0f);
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * n;
    const float* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0f);
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = a[static_cast<std::size_t>(p) * m + i];
      const float* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose(int rows, int cols, const float* src, float* dst) {
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      dst[static_cast<std::size_t>(j) * rows + i] = src[static_cast<std::size_t>(i) * cols + j];
}

namespace {

void require_same_graph(Var a, Var b, const char* op) {
  if (a.graph == nullptr || a.graph != b.graph) {
    fail(ErrorKind::Usage, std::string(op) + ": operands from different graphs");
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    fail(ErrorKind::Dimension, std::string(op) + ": shape mismatch " + shape_string(a.shape) +
                                   " vs " + shape_string(b.shape));
  }
}

// y = f(x) elementwise with dy/dx = df(x, y).
template <class F, class DF>
Var unary(const char* name, Var x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape, 0.0f);
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  const int xi = x.id;
  return x.graph->push(name, std::move(out), {xi}, [xi, df](Graph& g, int self) {
    if (!g.wants_grad(xi)) return;
    const Tensor& gy = g.out_grad(self);
    const Tensor& xv = g.value_of(xi);
    const Tensor& yv = g.value_of(self);
    Tensor& gx = g.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    fail(ErrorKind::Dimension,
         "matmul: incompatible shapes " + shape_string(av.shape) + " and " + shape_string(bv.shape));
  }
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  gemm_nn(m, n, k, av.data.data(), bv.data.data(), out.data.data(), false);
  const int ai = a.id, bi = b.id;
  return a.graph->push("matmul", std::move(out), {ai, bi}, [ai, bi, m, n, k](Graph& g, int self) {
    const Tensor& gy = g.out_grad(self);
    if (g.wants_grad(ai)) {
      // dA = dY · Bᵀ
      std::vector<float> bt(static_cast<std::size_t>(k) * n);
      transpose(k, n, g.value_of(bi).data.data(), bt.data());
      gemm_nn(m, k, n, gy.data.data(), bt.data(), g.grad_buffer(ai).data.data(), true);
    }
    if (g.wants_grad(bi)) {
      // dB = Aᵀ · dY
      gemm_tn(k, n, m, g.value_of(ai).data.data(), gy.data.data(), g.grad_buffer(bi).data.data(),
              true);
    }
  });
}

Var bias_add(Var x, Var bias) {
  require_same_graph(x, bias, "bias_add");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0)) {
    fail(ErrorKind::Dimension,
         "bias_add: incompatible shapes " + shape_string(xv.shape) + " and " + shape_string(bv.shape));
  }
  const int rows = xv.dim(0), cols = xv.dim(1);
  Tensor out = xv;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] += bv[c];
  const int xi = x.id, bi = bias.id;
  return x.graph->push("bias_add", std::move(out), {xi, bi}, [xi, bi, rows, cols](Graph& g, int self) {
    const Tensor& gy = g.out_grad(self);
    if (g.wants_grad(xi)) {
      Tensor& gx = g.grad_buffer(xi);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i];
    }
    if (g.wants_grad(bi)) {
      Tensor& gb = g.grad_buffer(bi);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) gb[c] += gy[static_cast<std::size_t>(r) * cols + c];
    }
  });
}

namespace {

// col[(c*kh + dy)*kw + dx][oy*ow + ox] = x[c][oy+dy][ox+dx]
void im2col(const float* x, int c, int h, int w, int kh, int kw, float* col) {
  const int oh = h - kh + 1, ow = w - kw + 1;
  for (int ci = 0; ci < c; ++ci)
    for (int dy = 0; dy < kh; ++dy)
      for (int dx = 0; dx < kw; ++dx) {
        float* dst = col + static_cast<std::size_t>((ci * kh + dy) * kw + dx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const float* src = x + (static_cast<std::size_t>(ci) * h + oy + dy) * w + dx;
          std::copy(src, src + ow, dst + static_cast<std::size_t>(oy) * ow);
        }
      }
}

void col2im_add(const float* col, int c, int h, int w, int kh, int kw, float* x) {
  const int oh = h - kh + 1, ow = w - kw + 1;
  for (int ci = 0; ci < c; ++ci)
    for (int dy = 0; dy < kh; ++dy)
      for (int dx = 0; dx < kw; ++dx) {
        const float* src = col + static_cast<std::size_t>((ci * kh + dy) * kw + dx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          float* dst = x + (static_cast<std::size_t>(ci) * h + oy + dy) * w + dx;
          const float* s = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) dst[ox] += s[ox];
        }
      }
}

}  // namespace

Var conv2d(Var input, Var kernel, Var bias) {
  require_same_graph(input, kernel, "conv2d");
  require_same_graph(input, bias, "conv2d");
  const Tensor& xv = input.value();
  const Tensor& kv = kernel.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 4 || kv.rank() != 4 || bv.rank() != 1 || kv.dim(1) != xv.dim(1) ||
      bv.dim(0) != kv.dim(0)) {
    fail(ErrorKind::Dimension, "conv2d: incompatible shapes input " + shape_string(xv.shape) +
                                   ", kernel " + shape_string(kv.shape) + ", bias " +
                                   shape_string(bv.shape));
  }
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int f = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  if (kh > h || kw > w) {
    fail(ErrorKind::Dimension, "conv2d: kernel " + shape_string(kv.shape) + " larger than input " +
                                   shape_string(xv.shape));
  }
  const int oh = h - kh + 1, ow = w - kw + 1;
  const int ckk = c * kh * kw, hw = oh * ow;
  Tensor out({n, f, oh, ow});
  std::vector<float> col(static_cast<std::size_t>(ckk) * hw);
  for (int s = 0; s < n; ++s) {
    im2col(xv.data.data() + static_cast<std::size_t>(s) * c * h * w, c, h, w, kh, kw, col.data());
    float* y = out.data.data() + static_cast<std::size_t>(s) * f * hw;
    for (int fi = 0; fi < f; ++fi) std::fill(y + static_cast<std::size_t>(fi) * hw, y + static_cast<std::size_t>(fi + 1) * hw, bv[fi]);
    gemm_nn(f, hw, ckk, kv.data.data(), col.data(), y, true);
  }
  const int xi = input.id, ki = kernel.id, bi = bias.id;
  return input.graph->push(
      "conv2d", std::move(out), {xi, ki, bi},
      [=](Graph& g, int self) {
        const Tensor& gy = g.out_grad(self);
        const Tensor& xv = g.value_of(xi);
        const Tensor& kv = g.value_of(ki);
        const bool gx = g.wants_grad(xi), gk = g.wants_grad(ki), gb = g.wants_grad(bi);
        std::vector<float> col(static_cast<std::size_t>(ckk) * hw);
        std::vector<float> colt(static_cast<std::size_t>(ckk) * hw);
        for (int s = 0; s < n; ++s) {
          const float* dy = gy.data.data() + static_cast<std::size_t>(s) * f * hw;
          if (gb) {
            Tensor& db = g.grad_buffer(bi);
            for (int fi = 0; fi < f; ++fi) {
              const float* row = dy + static_cast<std::size_t>(fi) * hw;
              for (int j = 0; j < hw; ++j) db[fi] += row[j];
            }
          }
          if (gk) {
            im2col(xv.data.data() + static_cast<std::size_t>(s) * c * h * w, c, h, w, kh, kw,
                   col.data());
            transpose(ckk, hw, col.data(), colt.data());
            gemm_nn(f, ckk, hw, dy, colt.data(), g.grad_buffer(ki).data.data(), true);
          }
          if (gx) {
            gemm_tn(ckk, hw, f, kv.data.data(), dy, col.data(), false);
            col2im_add(col.data(), c, h, w, kh, kw,
                       g.grad_buffer(xi).data.data() + static_cast<std::size_t>(s) * c * h * w);
          }
        }
      });
}

Var relu(Var x) {
  return unary(
      "relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Var maxpool2x2(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(2) < 2 || xv.dim(3) < 2) {
    fail(ErrorKind::Dimension, "maxpool2x2: expected N×C×H×W with H,W ≥ 2, got " + shape_string(xv.shape));
  }
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
  std::size_t o = 0;
  for (int p = 0; p < n * c; ++p) {
    const std::size_t plane = static_cast<std::size_t>(p) * h * w;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = plane + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = plane + static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        out[o] = xv[best];
        (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
  }
  const int xi = x.id;
  return x.graph->push("maxpool2x2", std::move(out), {xi}, [xi, argmax](Graph& g, int self) {
    if (!g.wants_grad(xi)) return;
    const Tensor& gy = g.out_grad(self);
    Tensor& gx = g.grad_buffer(xi);
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[(*argmax)[i]] += gy[i];
  });
}

Var reshape(Var x, Shape shape) {
  const Tensor& xv = x.value();
  if (shape_numel(shape) != xv.numel()) {
    fail(ErrorKind::Dimension,
         "reshape: cannot view " + shape_string(xv.shape) + " as " + shape_string(shape));
  }
  Tensor out(std::move(shape), xv.data);
  const int xi = x.id;
  return x.graph->push("reshape", std::move(out), {xi}, [xi](Graph& g, int self) {
    if (!g.wants_grad(xi)) return;
    const Tensor& gy = g.out_grad(self);
    Tensor& gx = g.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i];
  });
}

Var flatten(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1) fail(ErrorKind::Dimension, "flatten: scalar input");
  const int n = xv.dim(0);
  return reshape(x, {n, static_cast<int>(xv.numel() / static_cast<std::size_t>(n))});
}

namespace {

template <class F, class DA, class DB>
Var binary(const char* name, Var a, Var b, F f, DA da, DB db) {
  require_same_graph(a, b, name);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, name);
  Tensor out(av.shape, 0.0f);
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i], bv[i]);
  const int ai = a.id, bi = b.id;
  return a.graph->push(name, std::move(out), {ai, bi}, [ai, bi, da, db](Graph& g, int self) {
    const Tensor& gy = g.out_grad(self);
    const Tensor& av = g.value_of(ai);
    const Tensor& bv = g.value_of(bi);
    if (g.wants_grad(ai)) {
      Tensor& ga = g.grad_buffer(ai);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gy[i] * da(av[i], bv[i]);
    }
    if (g.wants_grad(bi)) {
      Tensor& gb = g.grad_buffer(bi);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += gy[i] * db(av[i], bv[i]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
      [](float, float) { return 1.0f; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
      [](float, float) { return -1.0f; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](float x, float y) { return x * y; }, [](float, float y) { return y; },
      [](float x, float) { return x; });
}

Var div(Var a, Var b) {
  for (float v : b.value().data) {
    if (v == 0.0f) fail(ErrorKind::Numeric, "div: division by zero");
  }
  return binary(
      "div", a, b, [](float x, float y) { return x / y; }, [](float, float y) { return 1.0f / y; },
      [](float x, float y) { return -x / (y * y); });
}

Var neg(Var x) {
  return unary("neg", x, [](float v) { return -v; }, [](float, float) { return -1.0f; });
}

Var scale(Var x, float factor) {
  return unary(
      "scale", x, [factor](float v) { return v * factor; }, [factor](float, float) { return factor; });
}

Var add_scalar(Var x, float offset) {
  return unary(
      "add_scalar", x, [offset](float v) { return v + offset; }, [](float, float) { return 1.0f; });
}

Var abs(Var x) {
  return unary(
      "abs", x, [](float v) { return std::fabs(v); },
      [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Var tanh(Var x) {
  return unary(
      "tanh", x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  float acc = 0.0f;
  for (float v : xv.data) acc += v;
  const int xi = x.id;
  return x.graph->push("sum", Tensor::scalar(acc), {xi}, [xi](Graph& g, int self) {
    if (!g.wants_grad(xi)) return;
    const float gy = g.out_grad(self)[0];
    Tensor& gx = g.grad_buffer(xi);
    for (float& v : gx.data) v += gy;
  });
}

Var dot(Var a, Var b) {
  require_same_graph(a, b, "dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "dot");
  float acc = 0.0f;
  for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i] * bv[i];
  const int ai = a.id, bi = b.id;
  return a.graph->push("dot", Tensor::scalar(acc), {ai, bi}, [ai, bi](Graph& g, int self) {
    const float gy = g.out_grad(self)[0];
    const Tensor& av = g.value_of(ai);
    const Tensor& bv = g.value_of(bi);
    if (g.wants_grad(ai)) {
      Tensor& ga = g.grad_buffer(ai);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gy * bv[i];
    }
    if (g.wants_grad(bi)) {
      Tensor& gb = g.grad_buffer(bi);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += gy * av[i];
    }
  });
}

Var l2norm(Var x) {
  const Tensor& xv = x.value();
  float acc = 0.0f;
  for (float v : xv.data) acc += v * v;
  const float norm = std::sqrt(acc);
  const int xi = x.id;
  return x.graph->push("l2norm", Tensor::scalar(norm), {xi}, [xi](Graph& g, int self) {
    if (!g.wants_grad(xi)) return;
    const float norm = g.value_of(self)[0];
    if (norm == 0.0f) return;  // subgradient 0 at the origin
    const float gy = g.out_grad(self)[0];
    const Tensor& xv = g.value_of(xi);
    Tensor& gx = g.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy * xv[i] / norm;
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) {
    fail(ErrorKind::Dimension, "softmax_cross_entropy: logits must be N×n, got " + shape_string(lv.shape));
  }
  const int n = lv.dim(0), classes = lv.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    fail(ErrorKind::Dimension, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                   " labels for " + std::to_string(n) + " rows");
  }
  auto probs = std::make_shared<std::vector<float>>(lv.numel());
  auto owned = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  float total = 0.0f;
  for (int r = 0; r < n; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= classes) {
      fail(ErrorKind::Index, "softmax_cross_entropy: label " + std::to_string(label) +
                                 " outside [0, " + std::to_string(classes) + ")");
    }
    const float* row = lv.data.data() + static_cast<std::size_t>(r) * classes;
    float* p = probs->data() + static_cast<std::size_t>(r) * classes;
    float mx = row[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    float z = 0.0f;
    for (int c = 0; c < classes; ++c) {
      p[c] = std::exp(row[c] - mx);
      z += p[c];
    }
    for (int c = 0; c < classes; ++c) p[c] /= z;
    total += std::log(z) - (row[label] - mx);
  }
  const int li = logits.id;
  return logits.graph->push(
      "softmax_cross_entropy", Tensor::scalar(total / static_cast<float>(n)), {li},
      [li, probs, owned, n, classes](Graph& g, int self) {
        if (!g.wants_grad(li)) return;
        const float gy = g.out_grad(self)[0] / static_cast<float>(n);
        Tensor& gl = g.grad_buffer(li);
        for (int r = 0; r < n; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * classes;
          for (int c = 0; c < classes; ++c) {
            const float target = c == (*owned)[static_cast<std::size_t>(r)] ? 1.0f : 0.0f;
            gl[base + c] += gy * ((*probs)[base + c] - target);
          }
        }
      });
}

Var scatter_add(Var base, std::span<const std::uint32_t> indices, Var values) {
  require_same_graph(base, values, "scatter_add");
  const Tensor& bv = base.value();
  const Tensor& vv = values.value();
  if (vv.numel() != indices.size()) {
    fail(ErrorKind::Dimension, "scatter_add: " + std::to_string(indices.size()) + " indices for " +
                                   std::to_string(vv.numel()) + " values");
  }
  Tensor out = bv;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= bv.numel()) {
      fail(ErrorKind::Index, "scatter_add: index " + std::to_string(indices[i]) + " outside tensor of " +
                                 std::to_string(bv.numel()) + " elements");
    }
    out[indices[i]] += vv[i];
  }
  auto idx = std::make_shared<std::vector<std::uint32_t>>(indices.begin(), indices.end());
  const int bi = base.id, vi = values.id;
  return base.graph->push("scatter_add", std::move(out), {bi, vi}, [bi, vi, idx](Graph& g, int self) {
    const Tensor& gy = g.out_grad(self);
    if (g.wants_grad(bi)) {
      Tensor& gb = g.grad_buffer(bi);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += gy[i];
    }
    if (g.wants_grad(vi)) {
      Tensor& gv = g.grad_buffer(vi);
      for (std::size_t i = 0; i < idx->size(); ++i) gv[i] += gy[(*idx)[i]];
    }
  });
}

Var stamp(Var x, Var mask, Var pattern) {
  require_same_graph(x, mask, "stamp");
  require_same_graph(x, pattern, "stamp");
  const Tensor& xv = x.value();
  const Tensor& mv = mask.value();
  const Tensor& pv = pattern.value();
  if (xv.rank() != 4 || mv.rank() != 2 || pv.rank() != 3 || mv.dim(0) != xv.dim(2) ||
      mv.dim(1) != xv.dim(3) || pv.dim(0) != xv.dim(1) || pv.dim(1) != xv.dim(2) ||
      pv.dim(2) != xv.dim(3)) {
    fail(ErrorKind::Dimension, "stamp: incompatible shapes input " + shape_string(xv.shape) +
                                   ", mask " + shape_string(mv.shape) + ", pattern " +
                                   shape_string(pv.shape));
  }
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t hw = mv.numel();
  Tensor out(xv.shape, 0.0f);
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci) {
      const std::size_t base = (static_cast<std::size_t>(s) * c + ci) * hw;
      const float* p = pv.data.data() + static_cast<std::size_t>(ci) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = (1.0f - mv[i]) * xv[base + i] + mv[i] * p[i];
    }
  const int xi = x.id, mi = mask.id, pi = pattern.id;
  return x.graph->push("stamp", std::move(out), {xi, mi, pi}, [=](Graph& g, int self) {
    const Tensor& gy = g.out_grad(self);
    const Tensor& xv = g.value_of(xi);
    const Tensor& mv = g.value_of(mi);
    const Tensor& pv = g.value_of(pi);
    float* gx = g.wants_grad(xi) ? g.grad_buffer(xi).data.data() : nullptr;
    float* gm = g.wants_grad(mi) ? g.grad_buffer(mi).data.data() : nullptr;
    float* gp = g.wants_grad(pi) ? g.grad_buffer(pi).data.data() : nullptr;
    for (int s = 0; s < n; ++s)
      for (int ci = 0; ci < c; ++ci) {
        const std::size_t base = (static_cast<std::size_t>(s) * c + ci) * hw;
        const std::size_t pbase = static_cast<std::size_t>(ci) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const float d = gy[base + i];
          if (gx) gx[base + i] += d * (1.0f - mv[i]);
          if (gm) gm[i] += d * (pv[pbase + i] - xv[base + i]);
          if (gp) gp[pbase + i] += d * mv[i];
        }
      }
  });
}

}  // namespace dormant
