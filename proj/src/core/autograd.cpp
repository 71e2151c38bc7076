#include "balign/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "balign/errors.hpp"
#include "balign/kernels.hpp"

namespace balign {

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::make_op(Tensor value, std::vector<Var> inputs, BackwardFn fn, const char* op) {
  require_finite(value, op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  for (const Var& in : inputs) {
    if (in.defined() && in.node_->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (Var& in : inputs) node->inputs.push_back(std::move(in.node_));
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

const Tensor& Var::value() const {
  if (!node_) throw UsageError("access to undefined Var");
  return node_->value;
}

Tensor& Var::mutable_value() {
  if (!node_) throw UsageError("access to undefined Var");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }
bool Var::has_grad() const { return node_ && !node_->grad.empty(); }

const Tensor& Var::grad() const {
  if (!has_grad()) throw UsageError(std::string("no gradient recorded for ") + op_name());
  return node_->grad;
}

Tensor& Var::mutable_grad() {
  if (!node_) throw UsageError("access to undefined Var");
  return node_->ensure_grad();
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var Var::detach() const { return Var(value(), false); }

const char* Var::op_name() const { return node_ ? node_->op : "undefined"; }

std::vector<const Node*> topological_order(const Var& root) {
  std::vector<const Node*> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<const Node*> seen;
  // iterative post-order DFS
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw UsageError("backward requires a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) return;
  std::vector<const Node*> order = topological_order(loss);
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& node = const_cast<Node&>(**it);
    if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
  }
  for (const Node* node : order) {
    if (node->inputs.empty() && !node->grad.empty()) require_finite(node->grad, "gradient");
  }
}

namespace {

bool wants(const NodePtr& n) { return n && n->requires_grad; }

enum class Broadcast { None, Channel };

Broadcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::None;
  if (a.size() == 4 && b.size() == 4 && b[1] == 1 && a[0] == b[0] && a[2] == b[2] && a[3] == b[3]) {
    return Broadcast::Channel;
  }
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Calls f(i_a, i_b) for every element of a, with i_b the broadcast partner.
template <class F>
void for_each_pair(const Shape& a, Broadcast kind, F&& f) {
  const std::size_t total = shape_numel(a);
  if (kind == Broadcast::None) {
    for (std::size_t i = 0; i < total; ++i) f(i, i);
    return;
  }
  const std::size_t plane = static_cast<std::size_t>(a[2]) * a[3];
  for (int n = 0; n < a[0]; ++n)
    for (int c = 0; c < a[1]; ++c) {
      const std::size_t ia = (static_cast<std::size_t>(n) * a[1] + c) * plane;
      const std::size_t ib = static_cast<std::size_t>(n) * plane;
      for (std::size_t p = 0; p < plane; ++p) f(ia + p, ib + p);
    }
}

template <class Fwd, class Bwd>
Var unary(const Var& x, const char* op, Fwd fwd, Bwd dfdx) {
  Tensor out(x.shape());
  const auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(in[i]);
  return Var::make_op(std::move(out), {x}, [dfdx](Node& self) {
    Node& in = *self.inputs[0];
    Tensor& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(in.value[i], self.value[i]);
  }, op);
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, const Var& bias, int stride, int padding) {
  const auto g = kernels::conv2d_geometry(input.shape(), kernel.shape(), stride, padding);
  if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != g.out_channels)) {
    throw DimensionError("conv2d bias shape " + shape_str(bias.shape()));
  }
  Tensor out(g.output_shape());
  kernels::conv2d_forward(g, input.value().data(), kernel.value().data(),
                          bias.defined() ? bias.value().data() : std::span<const double>{}, out.data());
  return Var::make_op(std::move(out), {input, kernel, bias}, [g](Node& self) {
    const NodePtr& in = self.inputs[0];
    const NodePtr& k = self.inputs[1];
    const NodePtr& b = self.inputs[2];
    if (wants(in)) kernels::conv2d_backward_input(g, self.grad.data(), k->value.data(), in->ensure_grad().data());
    const bool kb = wants(k), bb = wants(b);
    if (kb || bb) {
      Tensor scratch_k;
      std::span<double> gk;
      if (kb) {
        gk = k->ensure_grad().data();
      } else {
        scratch_k = Tensor::zeros(k->value.shape());
        gk = scratch_k.data();
      }
      kernels::conv2d_backward_kernel(g, self.grad.data(), in->value.data(), gk,
                                      bb ? b->ensure_grad().data() : std::span<double>{});
    }
  }, "conv2d");
}

namespace {

Var binary(const Var& a, const Var& b, int kind, const char* op) {
  const Broadcast bk = broadcast_kind(a.shape(), b.shape(), op);
  Tensor out(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  auto o = out.data();
  switch (kind) {
    case 0: for_each_pair(a.shape(), bk, [&](std::size_t i, std::size_t j) { o[i] = av[i] + bv[j]; }); break;
    case 1: for_each_pair(a.shape(), bk, [&](std::size_t i, std::size_t j) { o[i] = av[i] - bv[j]; }); break;
    default: for_each_pair(a.shape(), bk, [&](std::size_t i, std::size_t j) { o[i] = av[i] * bv[j]; }); break;
  }
  Shape shape = a.shape();
  return Var::make_op(std::move(out), {a, b}, [bk, kind, shape](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const auto g = self.grad.data();
    if (na.requires_grad) {
      auto ga = na.ensure_grad().data();
      if (kind == 2) {
        const auto bv = nb.value.data();
        for_each_pair(shape, bk, [&](std::size_t i, std::size_t j) { ga[i] += g[i] * bv[j]; });
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    }
    if (nb.requires_grad) {
      auto gb = nb.ensure_grad().data();
      const double sign = kind == 1 ? -1.0 : 1.0;
      if (kind == 2) {
        const auto av = na.value.data();
        for_each_pair(shape, bk, [&](std::size_t i, std::size_t j) { gb[j] += g[i] * av[i]; });
      } else {
        for_each_pair(shape, bk, [&](std::size_t i, std::size_t j) { gb[j] += sign * g[i]; });
      }
    }
  }, op);
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, 0, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, 1, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, 2, "mul"); }

Var scale(const Var& a, double s) {
  return unary(a, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (first.size() < 2) throw DimensionError("concat needs rank >= 2, got " + shape_str(first));
  int channels = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || s[0] != first[0] ||
        !std::equal(s.begin() + 2, s.end(), first.begin() + 2)) {
      throw DimensionError("concat: mismatched extents " + shape_str(s) + " vs " + shape_str(first));
    }
    channels += s[1];
  }
  Shape shape = first;
  shape[1] = channels;
  std::size_t inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) inner *= static_cast<std::size_t>(shape[i]);
  Tensor out(shape);
  std::vector<int> widths;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const int c = p.shape()[1];
    widths.push_back(c);
    const auto src = p.value().data();
    for (int n = 0; n < shape[0]; ++n) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(n * c * inner), c * inner,
                  out.data().begin() + static_cast<std::ptrdiff_t>((n * channels) * inner + offset));
    }
    offset += c * inner;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return Var::make_op(std::move(out), std::move(inputs), [widths, channels, inner](Node& self) {
    const int batch = self.value.shape()[0];
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t block = widths[k] * inner;
      Node& in = *self.inputs[k];
      if (in.requires_grad) {
        auto g = in.ensure_grad().data();
        for (int n = 0; n < batch; ++n) {
          const double* src = self.grad.data().data() + n * channels * inner + off;
          double* dst = g.data() + n * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      off += block;
    }
  }, "concat");
}

Var slice_channels(const Var& x, int begin, int count) {
  const Shape& s = x.shape();
  if (s.size() < 2 || begin < 0 || count < 1 || begin + count > s[1]) {
    throw DimensionError("slice_channels [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                         shape_str(s));
  }
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
  Shape shape = s;
  shape[1] = count;
  Tensor out(shape);
  const int channels = s[1];
  for (int n = 0; n < s[0]; ++n) {
    std::copy_n(x.value().data().begin() + static_cast<std::ptrdiff_t>((n * channels + begin) * inner), count * inner,
                out.data().begin() + static_cast<std::ptrdiff_t>(n * count * inner));
  }
  return Var::make_op(std::move(out), {x}, [begin, count, channels, inner](Node& self) {
    auto g = self.inputs[0]->ensure_grad().data();
    const int batch = self.value.shape()[0];
    for (int n = 0; n < batch; ++n) {
      const double* src = self.grad.data().data() + n * count * inner;
      double* dst = g.data() + (n * channels + begin) * inner;
      for (std::size_t i = 0; i < count * inner; ++i) dst[i] += src[i];
    }
  }, "slice_channels");
}

Var relu(const Var& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double in, double) { return in > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& x) {
  return unary(x, "sigmoid",
               [](double v) {
                 if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [](double, double out) { return out * (1.0 - out); });
}

Var log(const Var& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double in, double) { return 1.0 / in; });
}

Var square(const Var& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double in, double) { return 2.0 * in; });
}

Var clamp(const Var& x, double lo, double hi) {
  return unary(x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double in, double) { return (in > lo && in < hi) ? 1.0 : 0.0; });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return Var::make_op(Tensor({1}, {acc}), {x}, [](Node& self) {
    const double g = self.grad[0];
    for (double& v : self.inputs[0]->ensure_grad().data()) v += g;
  }, "sum");
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return Var::make_op(Tensor({1}, {acc / n}), {x}, [n](Node& self) {
    const double g = self.grad[0] / n;
    for (double& v : self.inputs[0]->ensure_grad().data()) v += g;
  }, "mean");
}

Var maxpool2(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("maxpool2 expects NCHW, got " + shape_str(s));
  if (s[2] % 2 || s[3] % 2) throw DimensionError("maxpool2 needs even spatial extents, got " + shape_str(s));
  Tensor out({s[0], s[1], s[2] / 2, s[3] / 2});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  kernels::maxpool2_forward(s[0] * s[1], s[2], s[3], x.value().data(), out.data(), *argmax);
  return Var::make_op(std::move(out), {x}, [argmax](Node& self) {
    kernels::maxpool2_backward(self.grad.data(), *argmax, self.inputs[0]->ensure_grad().data());
  }, "maxpool2");
}

Var upsample2(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("upsample2 expects NCHW, got " + shape_str(s));
  Tensor out({s[0], s[1], s[2] * 2, s[3] * 2});
  kernels::upsample2_forward(s[0] * s[1], s[2], s[3], x.value().data(), out.data());
  return Var::make_op(std::move(out), {x}, [s](Node& self) {
    kernels::upsample2_backward(s[0] * s[1], s[2], s[3], self.grad.data(), self.inputs[0]->ensure_grad().data());
  }, "upsample2");
}

Var global_avg_pool(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("global_avg_pool expects NCHW, got " + shape_str(s));
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  Tensor out({s[0], s[1]});
  const auto in = x.value().data();
  for (std::size_t p = 0; p < out.size(); ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += in[p * plane + i];
    out[p] = acc / static_cast<double>(plane);
  }
  return Var::make_op(std::move(out), {x}, [plane](Node& self) {
    auto g = self.inputs[0]->ensure_grad().data();
    for (std::size_t p = 0; p < self.grad.size(); ++p) {
      const double v = self.grad[p] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) g[p * plane + i] += v;
    }
  }, "global_avg_pool");
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return Var::make_op(std::move(out), {x}, [](Node& self) {
    auto g = self.inputs[0]->ensure_grad().data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  }, "reshape");
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
    throw DimensionError("linear: input " + shape_str(xs) + " weight " + shape_str(ws));
  }
  const int N = xs[0], F = xs[1], O = ws[0];
  if (bias.defined() && bias.shape() != Shape{O}) throw DimensionError("linear bias " + shape_str(bias.shape()));
  Tensor out({N, O});
  const auto xv = x.value().data();
  const auto wv = weight.value().data();
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      double acc = bias.defined() ? bias.value()[o] : 0.0;
      for (int f = 0; f < F; ++f) acc += xv[n * F + f] * wv[o * F + f];
      out[n * O + o] = acc;
    }
  return Var::make_op(std::move(out), {x, weight, bias}, [N, F, O](Node& self) {
    const NodePtr& in = self.inputs[0];
    const NodePtr& w = self.inputs[1];
    const NodePtr& b = self.inputs[2];
    const auto g = self.grad.data();
    if (wants(in)) {
      auto gx = in->ensure_grad().data();
      const auto wv = w->value.data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o)
          for (int f = 0; f < F; ++f) gx[n * F + f] += g[n * O + o] * wv[o * F + f];
    }
    if (wants(w)) {
      auto gw = w->ensure_grad().data();
      const auto xv = in->value.data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o)
          for (int f = 0; f < F; ++f) gw[o * F + f] += g[n * O + o] * xv[n * F + f];
    }
    if (wants(b)) {
      auto gb = b->ensure_grad().data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) gb[o] += g[n * O + o];
    }
  }, "linear");
}

Var slot_linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || weight.shape() != Shape{xs[1], xs[2]} || (bias.defined() && bias.shape() != Shape{xs[1]})) {
    throw DimensionError("slot_linear: input " + shape_str(xs) + " weight " + shape_str(weight.shape()));
  }
  const int N = xs[0], K = xs[1], C = xs[2];
  Tensor out({N, K});
  const auto xv = x.value().data();
  const auto wv = weight.value().data();
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      double acc = bias.defined() ? bias.value()[k] : 0.0;
      for (int c = 0; c < C; ++c) acc += xv[(n * K + k) * C + c] * wv[k * C + c];
      out[n * K + k] = acc;
    }
  return Var::make_op(std::move(out), {x, weight, bias}, [N, K, C](Node& self) {
    const NodePtr& in = self.inputs[0];
    const NodePtr& w = self.inputs[1];
    const NodePtr& b = self.inputs[2];
    const auto g = self.grad.data();
    if (wants(in)) {
      auto gx = in->ensure_grad().data();
      const auto wv = w->value.data();
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k)
          for (int c = 0; c < C; ++c) gx[(n * K + k) * C + c] += g[n * K + k] * wv[k * C + c];
    }
    if (wants(w)) {
      auto gw = w->ensure_grad().data();
      const auto xv = in->value.data();
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k)
          for (int c = 0; c < C; ++c) gw[k * C + c] += g[n * K + k] * xv[(n * K + k) * C + c];
    }
    if (wants(b)) {
      auto gb = b->ensure_grad().data();
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) gb[k] += g[n * K + k];
    }
  }, "slot_linear");
}

Var mean_axis1(const Var& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 3) throw DimensionError("mean_axis1 expects [N,K,C], got " + shape_str(xs));
  const int N = xs[0], K = xs[1], C = xs[2];
  Tensor out({N, C});
  const auto xv = x.value().data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc += xv[(n * K + k) * C + c];
      out[n * C + c] = acc / K;
    }
  return Var::make_op(std::move(out), {x}, [N, K, C](Node& self) {
    auto gx = self.inputs[0]->ensure_grad().data();
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k)
        for (int c = 0; c < C; ++c) gx[(n * K + k) * C + c] += self.grad[n * C + c] / K;
  }, "mean_axis1");
}

}  // namespace balign
