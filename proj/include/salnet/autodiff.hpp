#pragma once

#include <algorithm>
#include <cstring>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "salnet/core.hpp"

namespace salnet {

struct ParamTensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
};

// Named parameter registry. Ordered map so every iteration (updates,
// checkpoints, gradient accumulation) is deterministic.
class ParamStore {
 public:
  ParamTensor& add(const std::string& name, const Shape& shape) {
    if (params_.count(name)) throw config_error("duplicate parameter: " + name);
    ParamTensor& p = params_[name];
    p.shape = shape;
    p.data.assign(shape_numel(shape), 0.0);
    p.grad.assign(shape_numel(shape), 0.0);
    return p;
  }

  ParamTensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw config_error("unknown parameter: " + name);
    return it->second;
  }
  const ParamTensor& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw config_error("unknown parameter: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grads() {
    for (auto& [name, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  std::map<std::string, ParamTensor>& all() { return params_; }
  const std::map<std::string, ParamTensor>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  // Graphs cache parameter values; any direct mutation of data must bump the
  // version so the next forward refreshes its copies.
  uint64_t version() const { return version_; }
  void touch() { ++version_; }

 private:
  std::map<std::string, ParamTensor> params_;
  uint64_t version_ = 1;
};

struct ConvSpec {
  int stride = 1;
  int pad = -1;  // -1 = same padding, (k-1)/2 per axis
};

enum class Op {
  input,
  constant,
  param,
  conv2d,
  maxpool2x2,
  relu,
  tanh_fn,
  sigmoid,
  add,
  scale,
  matmul,
  outer_xxt,
  flatten,
  concat,
  mean_square,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::constant: return "constant";
    case Op::param: return "param";
    case Op::conv2d: return "conv2d";
    case Op::maxpool2x2: return "maxpool2x2";
    case Op::relu: return "relu";
    case Op::tanh_fn: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::add: return "add";
    case Op::scale: return "scale";
    case Op::matmul: return "matmul";
    case Op::outer_xxt: return "outer_xxt";
    case Op::flatten: return "flatten";
    case Op::concat: return "concat";
    case Op::mean_square: return "mean_square";
  }
  return "?";
}

using ValueId = int;

namespace detail {

// stride-1 fast path: per (oc,ic,ky,kx) weight, accumulate a shifted row
inline void conv2d_forward(const double* x, const double* w, const double* b,
                           double* y, int C, int H, int W, int OC, int KH, int KW,
                           int stride, int ph, int pw, int OH, int OW) {
  for (int oc = 0; oc < OC; ++oc) {
    double bias = b ? b[oc] : 0.0;
    double* yp = y + static_cast<std::size_t>(oc) * OH * OW;
    for (int i = 0; i < OH * OW; ++i) yp[i] = bias;
  }
  if (stride == 1) {
    for (int oc = 0; oc < OC; ++oc) {
      double* yplane = y + static_cast<std::size_t>(oc) * OH * OW;
      for (int ic = 0; ic < C; ++ic) {
        const double* xplane = x + static_cast<std::size_t>(ic) * H * W;
        const double* wk = w + ((static_cast<std::size_t>(oc) * C + ic) * KH) * KW;
        for (int ky = 0; ky < KH; ++ky) {
          for (int kx = 0; kx < KW; ++kx) {
            double wv = wk[ky * KW + kx];
            if (wv == 0.0) continue;
            int ox_lo = std::max(0, pw - kx);
            int ox_hi = std::min(OW, W + pw - kx);
            for (int oy = 0; oy < OH; ++oy) {
              int iy = oy - ph + ky;
              if (iy < 0 || iy >= H) continue;
              const double* xrow = xplane + static_cast<std::size_t>(iy) * W - pw + kx;
              double* yrow = yplane + static_cast<std::size_t>(oy) * OW;
              for (int ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wv * xrow[ox];
            }
          }
        }
      }
    }
    return;
  }
  for (int oc = 0; oc < OC; ++oc) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        double acc = y[(static_cast<std::size_t>(oc) * OH + oy) * OW + ox];
        for (int ic = 0; ic < C; ++ic) {
          for (int ky = 0; ky < KH; ++ky) {
            int iy = oy * stride - ph + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < KW; ++kx) {
              int ix = ox * stride - pw + kx;
              if (ix < 0 || ix >= W) continue;
              acc += x[(static_cast<std::size_t>(ic) * H + iy) * W + ix] *
                     w[((static_cast<std::size_t>(oc) * C + ic) * KH + ky) * KW + kx];
            }
          }
        }
        y[(static_cast<std::size_t>(oc) * OH + oy) * OW + ox] = acc;
      }
    }
  }
}

inline void conv2d_backward(const double* x, const double* w, const double* gy,
                            double* gx, double* gw, double* gb, int C, int H, int W,
                            int OC, int KH, int KW, int stride, int ph, int pw,
                            int OH, int OW) {
  if (gb) {
    for (int oc = 0; oc < OC; ++oc) {
      const double* gyp = gy + static_cast<std::size_t>(oc) * OH * OW;
      double acc = 0.0;
      for (int i = 0; i < OH * OW; ++i) acc += gyp[i];
      gb[oc] += acc;
    }
  }
  if (stride == 1) {
    for (int oc = 0; oc < OC; ++oc) {
      const double* gyplane = gy + static_cast<std::size_t>(oc) * OH * OW;
      for (int ic = 0; ic < C; ++ic) {
        const double* xplane = x + static_cast<std::size_t>(ic) * H * W;
        double* gxplane = gx ? gx + static_cast<std::size_t>(ic) * H * W : nullptr;
        const double* wk = w + ((static_cast<std::size_t>(oc) * C + ic) * KH) * KW;
        double* gwk = gw ? gw + ((static_cast<std::size_t>(oc) * C + ic) * KH) * KW : nullptr;
        for (int ky = 0; ky < KH; ++ky) {
          for (int kx = 0; kx < KW; ++kx) {
            int ox_lo = std::max(0, pw - kx);
            int ox_hi = std::min(OW, W + pw - kx);
            double wacc = 0.0;
            double wv = wk[ky * KW + kx];
            for (int oy = 0; oy < OH; ++oy) {
              int iy = oy - ph + ky;
              if (iy < 0 || iy >= H) continue;
              const double* xrow = xplane + static_cast<std::size_t>(iy) * W - pw + kx;
              double* gxrow = gxplane ? gxplane + static_cast<std::size_t>(iy) * W - pw + kx : nullptr;
              const double* gyrow = gyplane + static_cast<std::size_t>(oy) * OW;
              if (gw) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) wacc += gyrow[ox] * xrow[ox];
              }
              if (gxrow) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) gxrow[ox] += wv * gyrow[ox];
              }
            }
            if (gwk) gwk[ky * KW + kx] += wacc;
          }
        }
      }
    }
    return;
  }
  for (int oc = 0; oc < OC; ++oc) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        double g = gy[(static_cast<std::size_t>(oc) * OH + oy) * OW + ox];
        if (g == 0.0) continue;
        for (int ic = 0; ic < C; ++ic) {
          for (int ky = 0; ky < KH; ++ky) {
            int iy = oy * stride - ph + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < KW; ++kx) {
              int ix = ox * stride - pw + kx;
              if (ix < 0 || ix >= W) continue;
              std::size_t xi = (static_cast<std::size_t>(ic) * H + iy) * W + ix;
              std::size_t wi = ((static_cast<std::size_t>(oc) * C + ic) * KH + ky) * KW + kx;
              if (gw) gw[wi] += g * x[xi];
              if (gx) gx[xi] += g * w[wi];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// Reverse-mode tape. Nodes are appended in topological order by construction;
// forward executes them in order, backward replays them in exact reverse.
class Graph {
 public:
  explicit Graph(ParamStore* store = nullptr) : store_(store) {}

  ValueId input(const Shape& shape, const std::string& name = "") {
    Node n;
    n.op = Op::input;
    n.shape = shape;
    n.name = name.empty() ? auto_name("input") : name;
    n.data.assign(shape_numel(shape), 0.0);
    return push(std::move(n));
  }

  ValueId constant(const Shape& shape, const std::vector<double>& values,
                   const std::string& name = "") {
    if (values.size() != shape_numel(shape))
      throw config_error("constant size mismatch: " + name);
    Node n;
    n.op = Op::constant;
    n.shape = shape;
    n.name = name.empty() ? auto_name("const") : name;
    n.data = values;
    return push(std::move(n));
  }

  // One node per distinct parameter name; repeated requests share the node so
  // every use in the graph accumulates into the same adjoint.
  ValueId param(const std::string& name) {
    if (!store_) throw config_error("graph has no parameter store");
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return it->second;
    ParamTensor& p = store_->at(name);
    Node n;
    n.op = Op::param;
    n.shape = p.shape;
    n.name = name;
    n.bound = &p;
    n.data = p.data;  // refreshed on forward when the store version moves
    ValueId id = push(std::move(n));
    param_nodes_[name] = id;
    return id;
  }

  // a rank-2 input is treated as a single-channel 1xHxW plane
  ValueId conv2d(ValueId x, ValueId w, ValueId b = -1, ConvSpec spec = {}) {
    Shape xs = shape(x);
    if (xs.size() == 2) xs = {1, xs[0], xs[1]};
    const Shape& ws = shape(w);
    if (xs.size() != 3 || ws.size() != 4)
      throw config_error("conv2d expects CxHxW input and OCxICxKHxKW kernel, got " +
                         shape_str(xs) + " and " + shape_str(ws));
    if (ws[1] != xs[0])
      throw config_error("conv2d channel mismatch at " + next_name("conv2d") + ": input " +
                         shape_str(xs) + " kernel " + shape_str(ws));
    int ph = spec.pad >= 0 ? spec.pad : (ws[2] - 1) / 2;
    int pw = spec.pad >= 0 ? spec.pad : (ws[3] - 1) / 2;
    int oh = (xs[1] + 2 * ph - ws[2]) / spec.stride + 1;
    int ow = (xs[2] + 2 * pw - ws[3]) / spec.stride + 1;
    if (oh <= 0 || ow <= 0) throw config_error("conv2d output collapses: " + shape_str(xs));
    Node n;
    n.op = Op::conv2d;
    n.shape = {ws[0], oh, ow};
    n.args = {x, w};
    if (b >= 0) {
      if (shape(b) != Shape{ws[0]})
        throw config_error("conv2d bias shape mismatch: " + shape_str(shape(b)));
      n.args.push_back(b);
    }
    n.conv = spec;
    n.conv.pad = ph;
    n.name = auto_name("conv2d");
    n.data.assign(shape_numel(n.shape), 0.0);
    return push(std::move(n));
  }

  ValueId maxpool2x2(ValueId x) {
    const Shape& xs = shape(x);
    if (xs.size() != 3 || xs[1] % 2 || xs[2] % 2)
      throw config_error("maxpool2x2 needs CxHxW with even H,W, got " + shape_str(xs));
    Node n;
    n.op = Op::maxpool2x2;
    n.shape = {xs[0], xs[1] / 2, xs[2] / 2};
    n.args = {x};
    n.name = auto_name("maxpool2x2");
    n.data.assign(shape_numel(n.shape), 0.0);
    n.pool_idx.assign(shape_numel(n.shape), 0);
    return push(std::move(n));
  }

  ValueId relu(ValueId x) { return unary(Op::relu, x); }
  ValueId tanh_fn(ValueId x) { return unary(Op::tanh_fn, x); }
  ValueId sigmoid(ValueId x) { return unary(Op::sigmoid, x); }

  ValueId add(ValueId a, ValueId b) {
    if (shape(a) != shape(b))
      throw config_error(std::string("add shape mismatch at ") + next_name("add") + ": " +
                         shape_str(shape(a)) + " vs " + shape_str(shape(b)));
    Node n;
    n.op = Op::add;
    n.shape = shape(a);
    n.args = {a, b};
    n.name = auto_name("add");
    n.data.assign(shape_numel(n.shape), 0.0);
    return push(std::move(n));
  }

  ValueId scale(ValueId x, double c) {
    Node n;
    n.op = Op::scale;
    n.shape = shape(x);
    n.args = {x};
    n.scalar = c;
    n.name = auto_name("scale");
    n.data.assign(shape_numel(n.shape), 0.0);
    return push(std::move(n));
  }

  // {m,k} x {k,n} -> {m,n}; a rank-1 right operand acts as a column, {m,k} x {k} -> {m}
  ValueId matmul(ValueId a, ValueId b) {
    const Shape& as = shape(a);
    const Shape& bs = shape(b);
    bool vec = bs.size() == 1;
    if (as.size() != 2 || (bs.size() != 2 && !vec) || as[1] != bs[0])
      throw config_error("matmul shape mismatch at " + next_name("matmul") + ": " +
                         shape_str(as) + " x " + shape_str(bs));
    Node n;
    n.op = Op::matmul;
    n.shape = vec ? Shape{as[0]} : Shape{as[0], bs[1]};
    n.args = {a, b};
    n.name = auto_name("matmul");
    n.data.assign(shape_numel(n.shape), 0.0);
    return push(std::move(n));
  }

  // X -> X X^T; upper triangle computed, mirrored. Accepts an RxC matrix or a
  // CxHxW feature map whose spatial dims are treated as vectorized columns.
  ValueId outer_xxt(ValueId x) {
    const Shape& xs = shape(x);
    if (xs.size() != 2 && xs.size() != 3)
      throw config_error("outer_xxt expects a matrix or feature map, got " + shape_str(xs));
    Node n;
    n.op = Op::outer_xxt;
    n.shape = {xs[0], xs[0]};
    n.args = {x};
    n.name = auto_name("outer_xxt");
    n.data.assign(shape_numel(n.shape), 0.0);
    return push(std::move(n));
  }

  ValueId flatten(ValueId x) {
    Node n;
    n.op = Op::flatten;
    n.shape = {static_cast<int>(shape_numel(shape(x)))};
    n.args = {x};
    n.name = auto_name("flatten");
    n.data.assign(shape_numel(n.shape), 0.0);
    return push(std::move(n));
  }

  ValueId concat(const std::vector<ValueId>& parts) {
    if (parts.empty()) throw config_error("concat of zero values");
    int total = 0;
    for (ValueId v : parts) {
      if (shape(v).size() != 1)
        throw config_error("concat expects rank-1 values, got " + shape_str(shape(v)));
      total += shape(v)[0];
    }
    Node n;
    n.op = Op::concat;
    n.shape = {total};
    n.args = parts;
    n.name = auto_name("concat");
    n.data.assign(shape_numel(n.shape), 0.0);
    return push(std::move(n));
  }

  // mean of squared entries, a scalar
  ValueId mean_square(ValueId x) {
    Node n;
    n.op = Op::mean_square;
    n.shape = {1};
    n.args = {x};
    n.name = auto_name("mean_square");
    n.data.assign(1, 0.0);
    return push(std::move(n));
  }

  void set_input(ValueId id, const std::vector<double>& values) {
    Node& n = node(id);
    if (n.op != Op::input && n.op != Op::constant)
      throw config_error("set_input on non-input node " + n.name);
    if (values.size() != n.data.size())
      throw config_error("set_input size mismatch on " + n.name + ": got " +
                         std::to_string(values.size()) + " want " +
                         std::to_string(n.data.size()));
    n.data = values;
  }

  void forward() {
    if (store_ && store_->version() != param_version_) {
      for (auto& [name, id] : param_nodes_) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        n.data = n.bound->data;
      }
      param_version_ = store_->version();
    }
    for (Node& n : nodes_) forward_node(n);
    forward_done_ = true;
  }

  void backward(ValueId out, const std::vector<double>& seed) {
    backward_multi({{out, seed}});
  }

  // Seed several nodes at once, then one reverse sweep. Needed when a loss is
  // assembled outside the graph and its adjoints re-enter at multiple points.
  void backward_multi(const std::vector<std::pair<ValueId, std::vector<double>>>& seeds) {
    if (!forward_done_) throw config_error("backward before forward");
    for (Node& n : nodes_) {
      n.grad.assign(n.data.size(), 0.0);
    }
    for (const auto& [id, seed] : seeds) {
      Node& n = node(id);
      if (seed.size() != n.data.size())
        throw config_error("backward seed shape mismatch on " + n.name);
      for (std::size_t i = 0; i < seed.size(); ++i) n.grad[i] += seed[i];
    }
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) backward_node(nodes_[static_cast<std::size_t>(i)]);
    // flush parameter adjoints into the store
    for (auto& [name, id] : param_nodes_) {
      Node& n = node(id);
      ParamTensor* p = n.bound;
      for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  }

  void reset_adjoints() {
    for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }

  const Shape& shape(ValueId id) const { return node(id).shape; }
  const std::vector<double>& data(ValueId id) const { return node(id).data; }
  const std::vector<double>& grad(ValueId id) const { return node(id).grad; }
  double scalar_value(ValueId id) const { return node(id).data.at(0); }
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::input;
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    std::vector<ValueId> args;
    ConvSpec conv;
    double scalar = 0.0;
    std::vector<int> pool_idx;
    ParamTensor* bound = nullptr;
    std::string name;
  };

  ValueId unary(Op op, ValueId x) {
    Node n;
    n.op = op;
    n.shape = shape(x);
    n.args = {x};
    n.name = auto_name(op_name(op));
    n.data.assign(shape_numel(n.shape), 0.0);
    return push(std::move(n));
  }

  std::string auto_name(const std::string& base) {
    return base + "#" + std::to_string(nodes_.size());
  }
  std::string next_name(const std::string& base) const {
    return base + "#" + std::to_string(nodes_.size());
  }

  ValueId push(Node&& n) {
    nodes_.push_back(std::move(n));
    forward_done_ = false;
    return static_cast<ValueId>(nodes_.size() - 1);
  }

  Node& node(ValueId id) {
    if (id < 0 || id >= static_cast<ValueId>(nodes_.size()))
      throw config_error("bad value id " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& node(ValueId id) const {
    if (id < 0 || id >= static_cast<ValueId>(nodes_.size()))
      throw config_error("bad value id " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
  }

  void check_finite(const Node& n) {
    for (double v : n.data) {
      if (!std::isfinite(v))
        throw numeric_error("non-finite value in output of node " + n.name);
    }
  }

  void forward_node(Node& n) {
    switch (n.op) {
      case Op::input:
      case Op::constant:
        break;
      case Op::param:
        break;  // refreshed in forward() when the store version moves
      case Op::conv2d: {
        const Node& x = node(n.args[0]);
        const Node& w = node(n.args[1]);
        const double* b = n.args.size() > 2 ? node(n.args[2]).data.data() : nullptr;
        bool flat = x.shape.size() == 2;
        detail::conv2d_forward(x.data.data(), w.data.data(), b, n.data.data(),
                               flat ? 1 : x.shape[0], x.shape[flat ? 0 : 1],
                               x.shape[flat ? 1 : 2], w.shape[0], w.shape[2], w.shape[3],
                               n.conv.stride, n.conv.pad, n.conv.pad, n.shape[1], n.shape[2]);
        break;
      }
      case Op::maxpool2x2: {
        const Node& x = node(n.args[0]);
        int C = x.shape[0], H = x.shape[1], W = x.shape[2];
        int OH = H / 2, OW = W / 2;
        for (int c = 0; c < C; ++c) {
          const double* xp = x.data.data() + static_cast<std::size_t>(c) * H * W;
          double* yp = n.data.data() + static_cast<std::size_t>(c) * OH * OW;
          int* ip = n.pool_idx.data() + static_cast<std::size_t>(c) * OH * OW;
          for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
              int base = (2 * oy) * W + 2 * ox;
              int best = base;
              double bv = xp[base];
              // fixed scan order; ties keep the first index
              if (xp[base + 1] > bv) { bv = xp[base + 1]; best = base + 1; }
              if (xp[base + W] > bv) { bv = xp[base + W]; best = base + W; }
              if (xp[base + W + 1] > bv) { bv = xp[base + W + 1]; best = base + W + 1; }
              yp[oy * OW + ox] = bv;
              ip[oy * OW + ox] = best;
            }
          }
        }
        break;
      }
      case Op::relu: {
        const Node& x = node(n.args[0]);
        for (std::size_t i = 0; i < n.data.size(); ++i)
          n.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
        break;
      }
      case Op::tanh_fn: {
        const Node& x = node(n.args[0]);
        for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = std::tanh(x.data[i]);
        break;
      }
      case Op::sigmoid: {
        const Node& x = node(n.args[0]);
        for (std::size_t i = 0; i < n.data.size(); ++i)
          n.data[i] = 1.0 / (1.0 + std::exp(-x.data[i]));
        break;
      }
      case Op::add: {
        const Node& a = node(n.args[0]);
        const Node& b = node(n.args[1]);
        for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = a.data[i] + b.data[i];
        break;
      }
      case Op::scale: {
        const Node& x = node(n.args[0]);
        for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = n.scalar * x.data[i];
        break;
      }
      case Op::matmul: {
        const Node& a = node(n.args[0]);
        const Node& b = node(n.args[1]);
        int m = a.shape[0], k = a.shape[1];
        int p = b.shape.size() == 2 ? b.shape[1] : 1;
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t)
              acc += a.data[static_cast<std::size_t>(i) * k + t] * b.data[static_cast<std::size_t>(t) * p + j];
            n.data[static_cast<std::size_t>(i) * p + j] = acc;
          }
        }
        break;
      }
      case Op::outer_xxt: {
        const Node& x = node(n.args[0]);
        int r = x.shape[0];
        int c = static_cast<int>(x.data.size()) / r;
        for (int i = 0; i < r; ++i) {
          for (int j = i; j < r; ++j) {
            double acc = 0.0;
            const double* xi = x.data.data() + static_cast<std::size_t>(i) * c;
            const double* xj = x.data.data() + static_cast<std::size_t>(j) * c;
            for (int t = 0; t < c; ++t) acc += xi[t] * xj[t];
            n.data[static_cast<std::size_t>(i) * r + j] = acc;
            n.data[static_cast<std::size_t>(j) * r + i] = acc;
          }
        }
        break;
      }
      case Op::flatten: {
        const Node& x = node(n.args[0]);
        n.data = x.data;
        break;
      }
      case Op::concat: {
        std::size_t off = 0;
        for (ValueId a : n.args) {
          const Node& x = node(a);
          std::copy(x.data.begin(), x.data.end(), n.data.begin() + static_cast<long>(off));
          off += x.data.size();
        }
        break;
      }
      case Op::mean_square: {
        const Node& x = node(n.args[0]);
        double acc = 0.0;
        for (double v : x.data) acc += v * v;
        n.data[0] = acc / static_cast<double>(x.data.size());
        break;
      }
    }
    check_finite(n);
  }

  void backward_node(Node& n) {
    bool any = false;
    for (double g : n.grad) {
      if (g != 0.0) { any = true; break; }
    }
    if (!any) return;
    switch (n.op) {
      case Op::input:
      case Op::constant:
      case Op::param:
        break;
      case Op::conv2d: {
        Node& x = node(n.args[0]);
        Node& w = node(n.args[1]);
        double* gb = n.args.size() > 2 ? node(n.args[2]).grad.data() : nullptr;
        bool flat = x.shape.size() == 2;
        detail::conv2d_backward(x.data.data(), w.data.data(), n.grad.data(), x.grad.data(),
                                w.grad.data(), gb, flat ? 1 : x.shape[0], x.shape[flat ? 0 : 1],
                                x.shape[flat ? 1 : 2], w.shape[0], w.shape[2], w.shape[3],
                                n.conv.stride, n.conv.pad, n.conv.pad, n.shape[1], n.shape[2]);
        break;
      }
      case Op::maxpool2x2: {
        Node& x = node(n.args[0]);
        int C = n.shape[0], OH = n.shape[1], OW = n.shape[2];
        int H = x.shape[1], W = x.shape[2];
        for (int c = 0; c < C; ++c) {
          const int* ip = n.pool_idx.data() + static_cast<std::size_t>(c) * OH * OW;
          const double* gp = n.grad.data() + static_cast<std::size_t>(c) * OH * OW;
          double* gx = x.grad.data() + static_cast<std::size_t>(c) * H * W;
          for (int i = 0; i < OH * OW; ++i) gx[ip[i]] += gp[i];
        }
        break;
      }
      case Op::relu: {
        Node& x = node(n.args[0]);
        for (std::size_t i = 0; i < n.data.size(); ++i)
          if (n.data[i] > 0.0) x.grad[i] += n.grad[i];
        break;
      }
      case Op::tanh_fn: {
        Node& x = node(n.args[0]);
        for (std::size_t i = 0; i < n.data.size(); ++i)
          x.grad[i] += (1.0 - n.data[i] * n.data[i]) * n.grad[i];
        break;
      }
      case Op::sigmoid: {
        Node& x = node(n.args[0]);
        for (std::size_t i = 0; i < n.data.size(); ++i)
          x.grad[i] += n.data[i] * (1.0 - n.data[i]) * n.grad[i];
        break;
      }
      case Op::add: {
        Node& a = node(n.args[0]);
        Node& b = node(n.args[1]);
        for (std::size_t i = 0; i < n.data.size(); ++i) {
          a.grad[i] += n.grad[i];
          b.grad[i] += n.grad[i];
        }
        break;
      }
      case Op::scale: {
        Node& x = node(n.args[0]);
        for (std::size_t i = 0; i < n.data.size(); ++i) x.grad[i] += n.scalar * n.grad[i];
        break;
      }
      case Op::matmul: {
        Node& a = node(n.args[0]);
        Node& b = node(n.args[1]);
        int m = a.shape[0], k = a.shape[1];
        int p = b.shape.size() == 2 ? b.shape[1] : 1;
        for (int i = 0; i < m; ++i) {
          for (int t = 0; t < k; ++t) {
            double acc = 0.0;
            for (int j = 0; j < p; ++j)
              acc += n.grad[static_cast<std::size_t>(i) * p + j] * b.data[static_cast<std::size_t>(t) * p + j];
            a.grad[static_cast<std::size_t>(i) * k + t] += acc;
          }
        }
        for (int t = 0; t < k; ++t) {
          for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
              acc += a.data[static_cast<std::size_t>(i) * k + t] * n.grad[static_cast<std::size_t>(i) * p + j];
            b.grad[static_cast<std::size_t>(t) * p + j] += acc;
          }
        }
        break;
      }
      case Op::outer_xxt: {
        // dX = (G + G^T) X
        Node& x = node(n.args[0]);
        int r = x.shape[0];
        int c = static_cast<int>(x.data.size()) / r;
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < r; ++j) {
            double g = n.grad[static_cast<std::size_t>(i) * r + j] +
                       n.grad[static_cast<std::size_t>(j) * r + i];
            if (g == 0.0) continue;
            const double* xj = x.data.data() + static_cast<std::size_t>(j) * c;
            double* gxi = x.grad.data() + static_cast<std::size_t>(i) * c;
            for (int t = 0; t < c; ++t) gxi[t] += g * xj[t];
          }
        }
        break;
      }
      case Op::flatten: {
        Node& x = node(n.args[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) x.grad[i] += n.grad[i];
        break;
      }
      case Op::concat: {
        std::size_t off = 0;
        for (ValueId a : n.args) {
          Node& x = node(a);
          for (std::size_t i = 0; i < x.data.size(); ++i) x.grad[i] += n.grad[off + i];
          off += x.data.size();
        }
        break;
      }
      case Op::mean_square: {
        Node& x = node(n.args[0]);
        double s = 2.0 * n.grad[0] / static_cast<double>(x.data.size());
        for (std::size_t i = 0; i < x.data.size(); ++i) x.grad[i] += s * x.data[i];
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, ValueId> param_nodes_;
  ParamStore* store_;
  uint64_t param_version_ = 0;
  bool forward_done_ = false;
};

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool pass = true;
  double max_rel_err = 0.0;
};

// Compares a given adjoint set against central finite differences of the loss.
// Relative error is guarded below by 0.01 so near-zero analytic gradients are
// compared absolutely instead of against FD noise.
inline GradCheckReport grad_check_against(
    Graph& graph, ValueId loss, ParamStore& store,
    const std::map<std::string, std::vector<double>>& analytic, double step,
    double tolerance) {
  if (step <= 0.0) throw config_error("grad_check step must be positive");
  if (shape_numel(graph.shape(loss)) != 1)
    throw config_error("grad_check expects a scalar loss");
  GradCheckReport report;
  for (const auto& [name, an_grad] : analytic) {
    ParamTensor& p = store.at(name);
    GradCheckEntry entry;
    entry.param = name;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      double keep = p.data[i];
      p.data[i] = keep + step;
      store.touch();
      graph.forward();
      double lp = graph.scalar_value(loss);
      p.data[i] = keep - step;
      store.touch();
      graph.forward();
      double lm = graph.scalar_value(loss);
      p.data[i] = keep;
      store.touch();
      double fd = (lp - lm) / (2.0 * step);
      double an = an_grad[i];
      double denom = std::max({std::fabs(fd), std::fabs(an), 0.01});
      double rel = std::fabs(fd - an) / denom;
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
    }
    entry.pass = entry.max_rel_err <= tolerance;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(entry);
  }
  graph.forward();  // restore cached activations for the unperturbed point
  return report;
}

inline GradCheckReport grad_check(Graph& graph, ValueId loss, ParamStore& store,
                                  const std::vector<std::string>& params, double step,
                                  double tolerance) {
  store.zero_grads();
  graph.forward();
  graph.backward(loss, {1.0});
  std::map<std::string, std::vector<double>> analytic;
  for (const std::string& name : params) analytic[name] = store.at(name).grad;
  GradCheckReport report = grad_check_against(graph, loss, store, analytic, step, tolerance);
  store.zero_grads();
  return report;
}

}  // namespace salnet
