#include "motionlab/grad/graph.hpp"

#include "motionlab/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace motionlab::grad {
namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::ShapeMismatch, op + ": " + to_string(a) + " vs " + to_string(b));
}

void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Maps each element of a tensor of shape `out` to the element of `small` it
// reads under broadcasting. Empty when the shapes are identical.
// How the smaller operand of a binary op maps onto the output: identical,
// repeated over leading dimensions, or stretched along size-1 axes.
struct Broadcast {
  enum class Kind { Same, Trailing, General } kind = Kind::Same;
  std::size_t period = 0;
  Shape out;
  std::vector<std::size_t> small_stride;  // 0 along stretched axes

  // Calls f(i, j) for every output index i and matching small index j.
  template <typename F>
  void for_each(std::size_t n, F&& f) const {
    switch (kind) {
      case Kind::Same:
        for (std::size_t i = 0; i < n; ++i) f(i, i);
        return;
      case Kind::Trailing:
        for (std::size_t base = 0; base < n; base += period) {
          for (std::size_t k = 0; k < period; ++k) f(base + k, k);
        }
        return;
      case Kind::General: {
        const std::size_t rank = out.size();
        const std::size_t inner = out[rank - 1];
        const std::size_t inner_stride = small_stride[rank - 1];
        std::vector<std::size_t> counter(rank, 0);
        std::size_t offset = 0;
        for (std::size_t base = 0; base < n; base += inner) {
          for (std::size_t k = 0; k < inner; ++k) f(base + k, offset + k * inner_stride);
          for (std::size_t d = rank - 1; d-- > 0;) {
            offset += small_stride[d];
            if (++counter[d] < out[d]) break;
            offset -= small_stride[d] * counter[d];
            counter[d] = 0;
          }
        }
        return;
      }
    }
  }
};

Broadcast make_broadcast(const Shape& out, const Shape& small, const std::string& op) {
  Broadcast bc;
  if (out == small) return bc;
  if (small.size() <= out.size() &&
      std::equal(small.begin(), small.end(), out.end() - static_cast<std::ptrdiff_t>(small.size()))) {
    bc.kind = Broadcast::Kind::Trailing;
    bc.period = volume(small);
    return bc;
  }
  if (small.size() != out.size()) shape_error(op, out, small);
  for (std::size_t d = 0; d < out.size(); ++d) {
    if (small[d] != out[d] && small[d] != 1) shape_error(op, out, small);
  }
  bc.kind = Broadcast::Kind::General;
  bc.out = out;
  bc.small_stride.assign(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = out.size(); d-- > 0;) {
    bc.small_stride[d] = small[d] == 1 ? 0 : stride;
    stride *= small[d];
  }
  return bc;
}

struct ConvGeometry {
  std::size_t channels, height, width;  // image
  std::size_t kh, kw, stride, padding;
  std::size_t out_h, out_w;             // sliding-window grid
};

// image [C,H,W] -> cols [C*kh*kw, out_h*out_w]
void im2col(const double* image, const ConvGeometry& g, double* cols) {
  const std::size_t grid = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * grid;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            row[oy * g.out_w + ox] =
                inside ? image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                               static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates cols back into image.
void col2im(const double* cols, const ConvGeometry& g, double* image) {
  const std::size_t grid = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * grid;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                  static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

const Tensor& BackwardContext::output() const { return graph_.nodes_[node_].value; }
const Tensor& BackwardContext::output_grad() const { return graph_.nodes_[node_].grad; }
const Tensor& BackwardContext::input(std::size_t i) const {
  return graph_.nodes_[graph_.nodes_[node_].inputs.at(i)].value;
}
Tensor* BackwardContext::input_grad(std::size_t i) {
  auto& in = graph_.nodes_[graph_.nodes_[node_].inputs.at(i)];
  if (!in.requires_grad) return nullptr;
  if (in.grad.empty() && !in.value.empty()) in.grad = Tensor(in.value.shape());
  return &in.grad;
}

Graph::Graph(Options options) : options_(options), rng_(options.seed) {}

Var Graph::push(Tensor value, std::vector<int> inputs, VjpFn vjp) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [&](int i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.vjp = std::move(vjp);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw Error(ErrorCode::ShapeMismatch, "invalid graph variable");
  }
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }
const Tensor& Graph::grad(Var v) const { return node(v).grad; }

Var Graph::constant(Tensor value) { return push(std::move(value), {}, {}); }

Var Graph::variable(Tensor value) {
  Var v = push(std::move(value), {}, {});
  nodes_[v.id].requires_grad = true;
  return v;
}

Var Graph::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  Var v = variable(p.value);
  nodes_[v.id].param = &p;
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0)) {
    shape_error("matmul", ta.shape(), tb.shape());
  }
  const auto m = static_cast<Eigen::Index>(ta.dim(0));
  const auto k = static_cast<Eigen::Index>(ta.dim(1));
  const auto n = static_cast<Eigen::Index>(tb.dim(1));
  Tensor out = Tensor::uninitialized({ta.dim(0), tb.dim(1)});
  MatMap(out.data(), m, n).noalias() = ConstMatMap(ta.data(), m, k) * ConstMatMap(tb.data(), k, n);
  return push(std::move(out), {a.id, b.id}, [m, k, n](BackwardContext& ctx) {
    ConstMatMap g(ctx.output_grad().data(), m, n);
    if (Tensor* ga = ctx.input_grad(0)) {
      MatMap(ga->data(), m, k).noalias() += g * ConstMatMap(ctx.input(1).data(), k, n).transpose();
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      MatMap(gb->data(), k, n).noalias() += ConstMatMap(ctx.input(0).data(), m, k).transpose() * g;
    }
  });
}

Var Graph::binary(Var a, Var b, int kind) {
  static const char* names[] = {"add", "sub", "mul"};
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  auto bc = std::make_shared<Broadcast>(make_broadcast(ta.shape(), tb.shape(), names[kind]));
  Tensor out = Tensor::uninitialized(ta.shape());
  const std::size_t n = out.size();
  const double* pa = ta.data();
  const double* pb = tb.data();
  double* po = out.data();
  switch (kind) {
    case 0: bc->for_each(n, [&](std::size_t i, std::size_t j) { po[i] = pa[i] + pb[j]; }); break;
    case 1: bc->for_each(n, [&](std::size_t i, std::size_t j) { po[i] = pa[i] - pb[j]; }); break;
    default: bc->for_each(n, [&](std::size_t i, std::size_t j) { po[i] = pa[i] * pb[j]; }); break;
  }
  return push(std::move(out), {a.id, b.id}, [bc, kind](BackwardContext& ctx) {
    const Tensor& g = ctx.output_grad();
    const std::size_t n = g.size();
    const double* pg = g.data();
    if (Tensor* ga = ctx.input_grad(0)) {
      if (kind == 2) {
        const double* pb = ctx.input(1).data();
        double* out = ga->data();
        bc->for_each(n, [&](std::size_t i, std::size_t j) { out[i] += pg[i] * pb[j]; });
      } else {
        add_into(*ga, g);
      }
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      double* out = gb->data();
      if (kind == 2) {
        const double* pa = ctx.input(0).data();
        bc->for_each(n, [&](std::size_t i, std::size_t j) { out[j] += pg[i] * pa[i]; });
      } else if (kind == 1) {
        bc->for_each(n, [&](std::size_t i, std::size_t j) { out[j] -= pg[i]; });
      } else {
        bc->for_each(n, [&](std::size_t i, std::size_t j) { out[j] += pg[i]; });
      }
    }
  });
}

Var Graph::add(Var a, Var b) { return binary(a, b, 0); }
Var Graph::sub(Var a, Var b) { return binary(a, b, 1); }
Var Graph::mul(Var a, Var b) { return binary(a, b, 2); }

Var Graph::scale(Var a, double factor) { return affine(a, factor, 0.0); }

Var Graph::affine(Var a, double factor, double offset) {
  Tensor out = value(a);
  for (double& v : out.values()) v = factor * v + offset;
  return push(std::move(out), {a.id}, [factor](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& g = ctx.output_grad();
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += factor * g[i];
  });
}

Var Graph::sigmoid(Var a) {
  Tensor out = value(a);
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(out), {a.id}, [](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& y = ctx.output();
    const Tensor& g = ctx.output_grad();
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var Graph::tanh(Var a) {
  Tensor out = value(a);
  for (double& v : out.values()) v = std::tanh(v);
  return push(std::move(out), {a.id}, [](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& y = ctx.output();
    const Tensor& g = ctx.output_grad();
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var Graph::relu(Var a) {
  Tensor out = value(a);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), {a.id}, [](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& x = ctx.input(0);
    const Tensor& g = ctx.output_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) (*ga)[i] += g[i];
    }
  });
}

Var Graph::softmax(Var a, std::size_t axis) {
  const Tensor& ta = value(a);
  if (axis >= ta.rank()) shape_error("softmax axis", ta.shape(), {axis});
  const AxisSplit s = split_axis(ta.shape(), axis);
  Tensor out = Tensor::uninitialized(ta.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, ta[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(ta[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= total;
    }
  }
  return push(std::move(out), {a.id}, [s](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& y = ctx.output();
    const Tensor& g = ctx.output_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.len; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.len; ++k) {
          const std::size_t i = base + k * s.inner;
          (*ga)[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Var Graph::concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of zero tensors");
  Shape out_shape = value(parts[0]).shape();
  if (axis >= out_shape.size()) shape_error("concat axis", out_shape, {axis});
  std::vector<std::size_t> lens;
  std::vector<int> ids;
  out_shape[axis] = 0;
  for (Var p : parts) {
    const Shape& s = value(p).shape();
    if (s.size() != out_shape.size()) shape_error("concat", out_shape, s);
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != out_shape[d]) shape_error("concat", value(parts[0]).shape(), s);
    }
    lens.push_back(s[axis]);
    out_shape[axis] += s[axis];
    ids.push_back(p.id);
  }
  const AxisSplit s = split_axis(out_shape, axis);
  Tensor out = Tensor::uninitialized(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& src = value(parts[k]);
    const std::size_t chunk = lens[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk, out.data() + o * s.len * s.inner + offset);
    }
    offset += chunk;
  }
  return push(std::move(out), std::move(ids), [s, lens](BackwardContext& ctx) {
    const Tensor& g = ctx.output_grad();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < lens.size(); ++k) {
      const std::size_t chunk = lens[k] * s.inner;
      if (Tensor* gk = ctx.input_grad(k)) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = g.data() + o * s.len * s.inner + offset;
          double* dst = gk->data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += chunk;
    }
  });
}

Var Graph::slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& ta = value(a);
  if (axis >= ta.rank() || begin > end || end > ta.dim(axis)) {
    shape_error("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                    std::to_string(axis),
                ta.shape(), {});
  }
  const AxisSplit s = split_axis(ta.shape(), axis);
  Shape out_shape = ta.shape();
  out_shape[axis] = end - begin;
  Tensor out = Tensor::uninitialized(out_shape);
  const std::size_t chunk = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(ta.data() + o * s.len * s.inner + begin * s.inner, chunk, out.data() + o * chunk);
  }
  return push(std::move(out), {a.id}, [s, begin, chunk](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& g = ctx.output_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = ga->data() + o * s.len * s.inner + begin * s.inner;
      const double* src = g.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

Var Graph::reshape(Var a, Shape shape) {
  Tensor out = value(a).reshaped(std::move(shape));
  return push(std::move(out), {a.id}, [](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& g = ctx.output_grad();
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var Graph::permute(Var a, const std::vector<std::size_t>& axes) {
  const Tensor& ta = value(a);
  const std::size_t r = ta.rank();
  if (axes.size() != r) shape_error("permute", ta.shape(), Shape(axes.begin(), axes.end()));
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t d = r - 1; d-- > 0;) in_stride[d] = in_stride[d + 1] * ta.dim(d + 1);
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t d = 0; d < r; ++d) {
    if (axes[d] >= r) shape_error("permute", ta.shape(), Shape(axes.begin(), axes.end()));
    out_shape[d] = ta.dim(axes[d]);
    stride[d] = in_stride[axes[d]];
  }
  // out[i] = in[src[i]]
  const std::size_t n = ta.size();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*src)[i] = offset;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < out_shape[d]) break;
      offset -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  Tensor out = Tensor::uninitialized(out_shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = ta[(*src)[i]];
  return push(std::move(out), {a.id}, [src](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& g = ctx.output_grad();
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[(*src)[i]] += g[i];
  });
}

Var Graph::sum(Var a) {
  const Tensor& ta = value(a);
  double total = 0.0;
  for (double v : ta.values()) total += v;
  return push(Tensor::scalar(total), {a.id}, [](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const double g = ctx.output_grad()[0];
    for (double& v : ga->values()) v += g;
  });
}

Var Graph::sum(Var a, std::size_t axis) {
  const Tensor& ta = value(a);
  if (axis >= ta.rank()) shape_error("sum axis", ta.shape(), {axis});
  const AxisSplit s = split_axis(ta.shape(), axis);
  Shape out_shape = ta.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.len; ++k) {
      const double* src = ta.data() + (o * s.len + k) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return push(std::move(out), {a.id}, [s](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& g = ctx.output_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.len; ++k) {
        double* dst = ga->data() + (o * s.len + k) * s.inner;
        const double* src = g.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Var Graph::mean(Var a) {
  const std::size_t n = value(a).size();
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var Graph::l2_norm(Var a) {
  const Tensor& ta = value(a);
  if (ta.rank() == 0) shape_error("l2_norm", ta.shape(), {});
  const std::size_t len = ta.shape().back();
  Shape out_shape(ta.shape().begin(), ta.shape().end() - 1);
  Tensor out = Tensor::uninitialized(out_shape);
  const std::size_t rows = out.size();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t k = 0; k < len; ++k) ss += ta[r * len + k] * ta[r * len + k];
    out[r] = std::sqrt(ss);
  }
  return push(std::move(out), {a.id}, [len](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.output();
    const Tensor& g = ctx.output_grad();
    for (std::size_t r = 0; r < y.size(); ++r) {
      if (y[r] == 0.0) continue;  // subgradient 0 at the kink
      const double f = g[r] / y[r];
      for (std::size_t k = 0; k < len; ++k) (*ga)[r * len + k] += f * x[r * len + k];
    }
  });
}

Var Graph::conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t padding) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(b);
  if (tx.rank() != 4 || tw.rank() != 4 || tw.dim(1) != tx.dim(1) || tb.size() != tw.dim(0) ||
      stride == 0 || tx.dim(2) + 2 * padding < tw.dim(2) || tx.dim(3) + 2 * padding < tw.dim(3)) {
    shape_error("conv2d", tx.shape(), tw.shape());
  }
  const std::size_t batch = tx.dim(0);
  const std::size_t outc = tw.dim(0);
  ConvGeometry g{tx.dim(1), tx.dim(2), tx.dim(3), tw.dim(2), tw.dim(3), stride, padding, 0, 0};
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;
  const std::size_t ck = g.channels * g.kh * g.kw;
  const std::size_t grid = g.out_h * g.out_w;
  auto cols = std::make_shared<Buffer>(batch * ck * grid);
  Tensor out = Tensor::uninitialized({batch, outc, g.out_h, g.out_w});
  ConstMatMap wmat(tw.data(), static_cast<Eigen::Index>(outc), static_cast<Eigen::Index>(ck));
  for (std::size_t n = 0; n < batch; ++n) {
    double* c = cols->data() + n * ck * grid;
    im2col(tx.data() + n * g.channels * g.height * g.width, g, c);
    MatMap o(out.data() + n * outc * grid, static_cast<Eigen::Index>(outc),
             static_cast<Eigen::Index>(grid));
    o.noalias() = wmat * ConstMatMap(c, static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(grid));
    for (std::size_t oc = 0; oc < outc; ++oc) o.row(static_cast<Eigen::Index>(oc)).array() += tb[oc];
  }
  return push(std::move(out), {x.id, w.id, b.id}, [g, cols, batch, outc, ck, grid](BackwardContext& ctx) {
    const Tensor& gout = ctx.output_grad();
    const auto eo = static_cast<Eigen::Index>(outc);
    const auto ek = static_cast<Eigen::Index>(ck);
    const auto eg = static_cast<Eigen::Index>(grid);
    Tensor* gx = ctx.input_grad(0);
    Tensor* gw = ctx.input_grad(1);
    Tensor* gb = ctx.input_grad(2);
    ConstMatMap wmat(ctx.input(1).data(), eo, ek);
    Buffer dcols(ck * grid);
    for (std::size_t n = 0; n < batch; ++n) {
      ConstMatMap go(gout.data() + n * outc * grid, eo, eg);
      const double* c = cols->data() + n * ck * grid;
      if (gw) MatMap(gw->data(), eo, ek).noalias() += go * ConstMatMap(c, ek, eg).transpose();
      if (gb) {
        for (std::size_t oc = 0; oc < outc; ++oc) (*gb)[oc] += go.row(static_cast<Eigen::Index>(oc)).sum();
      }
      if (gx) {
        MatMap(dcols.data(), ek, eg).noalias() = wmat.transpose() * go;
        col2im(dcols.data(), g, gx->data() + n * g.channels * g.height * g.width);
      }
    }
  });
}

Var Graph::transpose_conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t padding,
                            std::size_t output_padding_h, std::size_t output_padding_w) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(b);
  if (tx.rank() != 4 || tw.rank() != 4 || tw.dim(0) != tx.dim(1) || tb.size() != tw.dim(1) ||
      stride == 0 || output_padding_h >= stride || output_padding_w >= stride) {
    shape_error("transpose_conv2d", tx.shape(), tw.shape());
  }
  const std::size_t batch = tx.dim(0);
  const std::size_t inc = tx.dim(1);
  const std::size_t outc = tw.dim(1);
  const long oh = static_cast<long>((tx.dim(2) - 1) * stride + tw.dim(2) + output_padding_h) -
                  static_cast<long>(2 * padding);
  const long ow = static_cast<long>((tx.dim(3) - 1) * stride + tw.dim(3) + output_padding_w) -
                  static_cast<long>(2 * padding);
  if (oh <= 0 || ow <= 0) shape_error("transpose_conv2d output", tx.shape(), tw.shape());
  // Geometry of the adjoint convolution: the output is the image, x the window grid.
  ConvGeometry g{outc, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), tw.dim(2), tw.dim(3),
                 stride, padding, tx.dim(2), tx.dim(3)};
  const std::size_t ok = outc * g.kh * g.kw;
  const std::size_t grid = g.out_h * g.out_w;
  const std::size_t image = outc * g.height * g.width;
  Tensor out({batch, outc, g.height, g.width});
  ConstMatMap wmat(tw.data(), static_cast<Eigen::Index>(inc), static_cast<Eigen::Index>(ok));
  Buffer cols(ok * grid);
  for (std::size_t n = 0; n < batch; ++n) {
    MatMap(cols.data(), static_cast<Eigen::Index>(ok), static_cast<Eigen::Index>(grid)).noalias() =
        wmat.transpose() *
        ConstMatMap(tx.data() + n * inc * grid, static_cast<Eigen::Index>(inc), static_cast<Eigen::Index>(grid));
    double* o = out.data() + n * image;
    col2im(cols.data(), g, o);
    const std::size_t plane = g.height * g.width;
    for (std::size_t oc = 0; oc < outc; ++oc) {
      for (std::size_t i = 0; i < plane; ++i) o[oc * plane + i] += tb[oc];
    }
  }
  return push(std::move(out), {x.id, w.id, b.id}, [g, batch, inc, outc, ok, grid, image](BackwardContext& ctx) {
    const Tensor& gout = ctx.output_grad();
    const auto ei = static_cast<Eigen::Index>(inc);
    const auto ek = static_cast<Eigen::Index>(ok);
    const auto eg = static_cast<Eigen::Index>(grid);
    Tensor* gx = ctx.input_grad(0);
    Tensor* gw = ctx.input_grad(1);
    Tensor* gb = ctx.input_grad(2);
    ConstMatMap wmat(ctx.input(1).data(), ei, ek);
    Buffer gcols(ok * grid);
    const std::size_t plane = g.height * g.width;
    for (std::size_t n = 0; n < batch; ++n) {
      const double* go = gout.data() + n * image;
      im2col(go, g, gcols.data());
      ConstMatMap gc(gcols.data(), ek, eg);
      if (gx) MatMap(gx->data() + n * inc * grid, ei, eg).noalias() += wmat * gc;
      if (gw) {
        MatMap(gw->data(), ei, ek).noalias() +=
            ConstMatMap(ctx.input(0).data() + n * inc * grid, ei, eg) * gc.transpose();
      }
      if (gb) {
        for (std::size_t oc = 0; oc < outc; ++oc) {
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += go[oc * plane + i];
          (*gb)[oc] += s;
        }
      }
    }
  });
}

Var Graph::dropout(Var a, double rate) {
  if (!options_.training || rate <= 0.0) return a;
  if (rate >= 1.0) throw Error(ErrorCode::ConfigError, "dropout rate must be < 1");
  const Tensor& ta = value(a);
  auto mask = std::make_shared<Buffer>(ta.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  // Top 53 bits of each draw as a uniform in [0, 1).
  const double keep = 1.0 - rate;
  for (double& m : *mask) m = static_cast<double>(rng_() >> 11) * 0x1.0p-53 < keep ? keep_scale : 0.0;
  Tensor out = Tensor::uninitialized(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] * (*mask)[i];
  return push(std::move(out), {a.id}, [mask](BackwardContext& ctx) {
    Tensor* ga = ctx.input_grad(0);
    const Tensor& g = ctx.output_grad();
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (*mask)[i];
  });
}

Var Graph::custom(std::span<const Var> inputs, Tensor value, VjpFn vjp) {
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (Var v : inputs) ids.push_back((node(v), v.id));
  return push(std::move(value), std::move(ids), std::move(vjp));
}

void Graph::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw Error(ErrorCode::NotScalarLoss, "loss has shape " + to_string(root.value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  nodes_[loss.id].grad = Tensor(root.value.shape(), 1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.vjp) {
      BackwardContext ctx(*this, i);
      n.vjp(ctx);
    }
    if (n.param) add_into(n.param->grad, n.grad);
    // Interior gradients are consumed; only leaves keep theirs for grad().
    if (!n.inputs.empty()) n.grad = Tensor();
  }
}

}  // namespace motionlab::grad
