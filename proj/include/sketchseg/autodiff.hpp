#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sketchseg/numeric.hpp"

namespace sketchseg {

template <class Scalar>
class Tape;

// Lightweight handle to a tape node.
template <class Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  Index id = -1;
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so reverse iteration is a valid topological sweep. One tape per loss
// evaluation; recorded values are immutable.
template <class Scalar>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<Scalar> leaf(Mat<Scalar> value, bool requires_grad = false) {
    return record(std::move(value), requires_grad);
  }

  Var<Scalar> constant(Mat<Scalar> value) { return record(std::move(value), false); }

  Var<Scalar> scalar_constant(Scalar v) {
    Mat<Scalar> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  const Mat<Scalar>& value(Var<Scalar> v) const {
    return nodes_.at(static_cast<std::size_t>(v.id)).value;
  }

  // Gradient from the last backward() call; zeros if the node was untouched.
  Mat<Scalar> grad(Var<Scalar> v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.grad.size() == 0) return Mat<Scalar>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var<Scalar> loss) {
    const Node& ln = nodes_.at(static_cast<std::size_t>(loss.id));
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(ln.value));
    }
    if (!grad_enabled_) {
      throw std::logic_error("backward: tape was created with gradients disabled");
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[static_cast<std::size_t>(loss.id)].grad = Mat<Scalar>::Ones(1, 1);
    for (Index i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() != 0 && n.backprop) n.backprop();
    }
  }

  // --- plumbing for op implementations -------------------------------------

  bool needs_grad(Var<Scalar> v) const {
    return nodes_.at(static_cast<std::size_t>(v.id)).needs_grad;
  }

  Var<Scalar> record(Mat<Scalar> value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = grad_enabled_ && needs_grad;
    nodes_.push_back(std::move(n));
    return Var<Scalar>{this, static_cast<Index>(nodes_.size()) - 1};
  }

  void set_backprop(Var<Scalar> v, std::function<void()> f) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.needs_grad) n.backprop = std::move(f);
  }

  const Mat<Scalar>& out_grad(Index id) const {
    return nodes_[static_cast<std::size_t>(id)].grad;
  }

  template <class Expr>
  void accumulate(Index parent, const Expr& g) {
    Node& p = nodes_[static_cast<std::size_t>(parent)];
    if (!p.needs_grad) return;
    if (p.grad.size() == 0) p.grad = Mat<Scalar>::Zero(p.value.rows(), p.value.cols());
    p.grad += g;
  }

  template <class Expr>
  void accumulate_block(Index parent, Index r0, Index c0, const Expr& g) {
    Node& p = nodes_[static_cast<std::size_t>(parent)];
    if (!p.needs_grad) return;
    if (p.grad.size() == 0) p.grad = Mat<Scalar>::Zero(p.value.rows(), p.value.cols());
    p.grad.block(r0, c0, g.rows(), g.cols()) += g;
  }

 private:
  struct Node {
    Mat<Scalar> value;
    Mat<Scalar> grad;
    std::function<void()> backprop;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

template <class Scalar>
const Mat<Scalar>& val(Var<Scalar> v) {
  return v.tape->value(v);
}

// ---------------------------------------------------------------------------
// Ops. Each records the forward value and, when gradients flow, a closure
// that pulls the output gradient into the parents.
// ---------------------------------------------------------------------------

template <class Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = *a.tape;
  require_same_shape("add", val(a), val(b));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var<Scalar> r = t.record(val(a) + val(b), ng);
  t.set_backprop(r, [&t, a, b, r] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
  return r;
}

template <class Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = *a.tape;
  require_same_shape("sub", val(a), val(b));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var<Scalar> r = t.record(val(a) - val(b), ng);
  t.set_backprop(r, [&t, a, b, r] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    t.accumulate(a.id, g);
    t.accumulate(b.id, -g);
  });
  return r;
}

// Elementwise product.
template <class Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = *a.tape;
  require_same_shape("mul", val(a), val(b));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var<Scalar> r = t.record(val(a).cwiseProduct(val(b)), ng);
  t.set_backprop(r, [&t, a, b, r] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    t.accumulate(a.id, g.cwiseProduct(val(b)));
    t.accumulate(b.id, g.cwiseProduct(val(a)));
  });
  return r;
}

template <class Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar c) {
  Tape<Scalar>& t = *a.tape;
  Var<Scalar> r = t.record(val(a) * c, t.needs_grad(a));
  t.set_backprop(r, [&t, a, r, c] { t.accumulate(a.id, t.out_grad(r.id) * c); });
  return r;
}

template <class Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = matmul(val(a), val(b));  // includes the shape check
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var<Scalar> r = t.record(std::move(y), ng);
  t.set_backprop(r, [&t, a, b, r] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    t.accumulate(a.id, g * val(b).transpose());
    t.accumulate(b.id, val(a).transpose() * g);
  });
  return r;
}

template <class Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Var<Scalar> r = t.record(val(a).transpose(), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r] { t.accumulate(a.id, t.out_grad(r.id).transpose()); });
  return r;
}

template <class Scalar>
Var<Scalar> rows(Var<Scalar> a, Index r0, Index n) {
  Tape<Scalar>& t = *a.tape;
  if (r0 < 0 || n < 0 || r0 + n > val(a).rows()) {
    throw std::invalid_argument("rows: range [" + std::to_string(r0) + ", " +
                                std::to_string(r0 + n) + ") out of bounds for " +
                                shape_str(val(a)));
  }
  Var<Scalar> r = t.record(val(a).middleRows(r0, n), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r, r0] { t.accumulate_block(a.id, r0, 0, t.out_grad(r.id)); });
  return r;
}

template <class Scalar>
Var<Scalar> cols(Var<Scalar> a, Index c0, Index n) {
  Tape<Scalar>& t = *a.tape;
  if (c0 < 0 || n < 0 || c0 + n > val(a).cols()) {
    throw std::invalid_argument("cols: range [" + std::to_string(c0) + ", " +
                                std::to_string(c0 + n) + ") out of bounds for " +
                                shape_str(val(a)));
  }
  Var<Scalar> r = t.record(val(a).middleCols(c0, n), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r, c0] { t.accumulate_block(a.id, 0, c0, t.out_grad(r.id)); });
  return r;
}

template <class Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  Tape<Scalar>& t = *parts[0].tape;
  Index total = 0;
  const Index c = val(parts[0]).cols();
  bool ng = false;
  for (const auto& p : parts) {
    if (val(p).cols() != c) {
      throw std::invalid_argument("concat_rows: column mismatch " + shape_str(val(p)));
    }
    total += val(p).rows();
    ng = ng || t.needs_grad(p);
  }
  Mat<Scalar> y(total, c);
  Index at = 0;
  for (const auto& p : parts) {
    y.middleRows(at, val(p).rows()) = val(p);
    at += val(p).rows();
  }
  Var<Scalar> r = t.record(std::move(y), ng);
  t.set_backprop(r, [&t, parts, r] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    Index at2 = 0;
    for (const auto& p : parts) {
      t.accumulate(p.id, g.middleRows(at2, val(p).rows()));
      at2 += val(p).rows();
    }
  });
  return r;
}

template <class Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  Tape<Scalar>& t = *parts[0].tape;
  Index total = 0;
  const Index rws = val(parts[0]).rows();
  bool ng = false;
  for (const auto& p : parts) {
    if (val(p).rows() != rws) {
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(val(p)));
    }
    total += val(p).cols();
    ng = ng || t.needs_grad(p);
  }
  Mat<Scalar> y(rws, total);
  Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, val(p).cols()) = val(p);
    at += val(p).cols();
  }
  Var<Scalar> r = t.record(std::move(y), ng);
  t.set_backprop(r, [&t, parts, r] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    Index at2 = 0;
    for (const auto& p : parts) {
      t.accumulate(p.id, g.middleCols(at2, val(p).cols()));
      at2 += val(p).cols();
    }
  });
  return r;
}

// a (N x d) + v (1 x d) broadcast over rows.
template <class Scalar>
Var<Scalar> add_rowvec(Var<Scalar> a, Var<Scalar> v) {
  Tape<Scalar>& t = *a.tape;
  if (val(v).rows() != 1 || val(v).cols() != val(a).cols()) {
    throw std::invalid_argument("add_rowvec: expected 1x" + std::to_string(val(a).cols()) +
                                ", got " + shape_str(val(v)));
  }
  Mat<Scalar> y = val(a);
  y.rowwise() += val(v).row(0);
  const bool ng = t.needs_grad(a) || t.needs_grad(v);
  Var<Scalar> r = t.record(std::move(y), ng);
  t.set_backprop(r, [&t, a, v, r] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    t.accumulate(a.id, g);
    t.accumulate(v.id, g.colwise().sum());
  });
  return r;
}

template <class Scalar>
Var<Scalar> broadcast_rows(Var<Scalar> v, Index n) {
  Tape<Scalar>& t = *v.tape;
  if (val(v).rows() != 1) {
    throw std::invalid_argument("broadcast_rows: expected a row vector, got " +
                                shape_str(val(v)));
  }
  Mat<Scalar> y = val(v).replicate(n, 1);
  Var<Scalar> r = t.record(std::move(y), t.needs_grad(v));
  t.set_backprop(r, [&t, v, r] { t.accumulate(v.id, t.out_grad(r.id).colwise().sum()); });
  return r;
}

template <class Scalar>
Var<Scalar> broadcast_scalar(Var<Scalar> s, Index rws, Index cls) {
  Tape<Scalar>& t = *s.tape;
  if (val(s).rows() != 1 || val(s).cols() != 1) {
    throw std::invalid_argument("broadcast_scalar: expected 1x1, got " + shape_str(val(s)));
  }
  Mat<Scalar> y = Mat<Scalar>::Constant(rws, cls, val(s)(0, 0));
  Var<Scalar> r = t.record(std::move(y), t.needs_grad(s));
  t.set_backprop(r, [&t, s, r] {
    Mat<Scalar> g(1, 1);
    g(0, 0) = t.out_grad(r.id).sum();
    t.accumulate(s.id, g);
  });
  return r;
}

template <class Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Var<Scalar> r = t.record(softmax_rows(val(a)), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    const Mat<Scalar>& y = t.value(r);
    Mat<Scalar> gx(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      const Scalar dot = g.row(i).cwiseProduct(y.row(i)).sum();
      gx.row(i) = y.row(i).cwiseProduct(g.row(i) - Mat<Scalar>::Constant(1, y.cols(), dot));
    }
    t.accumulate(a.id, gx);
  });
  return r;
}

template <class Scalar>
Var<Scalar> layer_norm_rows(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, Scalar eps) {
  Tape<Scalar>& t = *x.tape;
  Mat<Scalar> y = layer_norm_rows(val(x), val(gamma), val(beta), eps);
  const bool ng = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
  Var<Scalar> r = t.record(std::move(y), ng);
  t.set_backprop(r, [&t, x, gamma, beta, r, eps] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    const Mat<Scalar>& xv = val(x);
    const Mat<Scalar>& gv = val(gamma);
    const Scalar n = static_cast<Scalar>(xv.cols());
    Mat<Scalar> gx = Mat<Scalar>::Zero(xv.rows(), xv.cols());
    Mat<Scalar> ggamma = Mat<Scalar>::Zero(1, xv.cols());
    Mat<Scalar> gbeta = Mat<Scalar>::Zero(1, xv.cols());
    for (Index i = 0; i < xv.rows(); ++i) {
      const Scalar mean = xv.row(i).mean();
      const Scalar var = (xv.row(i).array() - mean).square().sum() / n;
      const Scalar inv = Scalar(1) / std::sqrt(var + eps);
      Mat<Scalar> xhat = ((xv.row(i).array() - mean) * inv).matrix();
      ggamma += g.row(i).cwiseProduct(xhat);
      gbeta += g.row(i);
      Mat<Scalar> gxhat = g.row(i).cwiseProduct(gv.row(0));
      const Scalar m1 = gxhat.row(0).mean();
      const Scalar m2 = gxhat.row(0).cwiseProduct(xhat.row(0)).mean();
      gx.row(i) = ((gxhat.row(0).array() - m1 - xhat.row(0).array() * m2) * inv).matrix();
    }
    t.accumulate(x.id, gx);
    t.accumulate(gamma.id, ggamma);
    t.accumulate(beta.id, gbeta);
  });
  return r;
}

template <class Scalar>
Var<Scalar> l2_normalize_rows(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Var<Scalar> r = t.record(l2_normalize_rows(val(a)), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    const Mat<Scalar>& xv = val(a);
    const Mat<Scalar>& y = t.value(r);
    Mat<Scalar> gx(xv.rows(), xv.cols());
    for (Index i = 0; i < xv.rows(); ++i) {
      Scalar n = xv.row(i).norm();
      if (n < Scalar(1e-12)) n = Scalar(1e-12);
      const Scalar dot = g.row(i).cwiseProduct(y.row(i)).sum();
      gx.row(i) = (g.row(i) - y.row(i) * dot) / n;
    }
    t.accumulate(a.id, gx);
  });
  return r;
}

template <class Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = val(a).unaryExpr([](Scalar v) { return gelu_scalar(v); });
  Var<Scalar> r = t.record(std::move(y), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r] {
    Mat<Scalar> d = val(a).unaryExpr([](Scalar v) { return gelu_grad_scalar(v); });
    t.accumulate(a.id, t.out_grad(r.id).cwiseProduct(d));
  });
  return r;
}

template <class Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = val(a).unaryExpr([](Scalar v) { return sigmoid_scalar(v); });
  Var<Scalar> r = t.record(std::move(y), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r] {
    const Mat<Scalar>& y2 = t.value(r);
    Mat<Scalar> d = y2.cwiseProduct((Mat<Scalar>::Ones(y2.rows(), y2.cols()) - y2));
    t.accumulate(a.id, t.out_grad(r.id).cwiseProduct(d));
  });
  return r;
}

template <class Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = val(a).cwiseMax(Scalar(0));
  Var<Scalar> r = t.record(std::move(y), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r] {
    Mat<Scalar> mask =
        (val(a).array() > Scalar(0)).template cast<Scalar>().matrix();
    t.accumulate(a.id, t.out_grad(r.id).cwiseProduct(mask));
  });
  return r;
}

template <class Scalar>
Var<Scalar> clamp01(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = val(a).cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
  Var<Scalar> r = t.record(std::move(y), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r] {
    Mat<Scalar> mask = ((val(a).array() > Scalar(0)) && (val(a).array() < Scalar(1)))
                           .template cast<Scalar>()
                           .matrix();
    t.accumulate(a.id, t.out_grad(r.id).cwiseProduct(mask));
  });
  return r;
}

// Elementwise sqrt; derivative treated as 0 at the origin.
template <class Scalar>
Var<Scalar> sqrt_elem(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = val(a).cwiseMax(Scalar(0)).cwiseSqrt();
  Var<Scalar> r = t.record(std::move(y), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r] {
    const Mat<Scalar>& y2 = t.value(r);
    Mat<Scalar> d = y2.unaryExpr(
        [](Scalar v) { return v > Scalar(1e-12) ? Scalar(0.5) / v : Scalar(0); });
    t.accumulate(a.id, t.out_grad(r.id).cwiseProduct(d));
  });
  return r;
}

template <class Scalar>
Var<Scalar> sum_all(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y(1, 1);
  y(0, 0) = val(a).sum();
  Var<Scalar> r = t.record(std::move(y), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r] {
    const Scalar g = t.out_grad(r.id)(0, 0);
    t.accumulate(a.id, Mat<Scalar>::Constant(val(a).rows(), val(a).cols(), g));
  });
  return r;
}

template <class Scalar>
Var<Scalar> mean_all(Var<Scalar> a) {
  return scale(sum_all(a), Scalar(1) / static_cast<Scalar>(val(a).size()));
}

// Row-major reinterpretation; element order is preserved.
template <class Scalar>
Var<Scalar> reshape(Var<Scalar> a, Index rws, Index cls) {
  Tape<Scalar>& t = *a.tape;
  if (rws * cls != val(a).size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(val(a)) + " as " +
                                std::to_string(rws) + "x" + std::to_string(cls));
  }
  Mat<Scalar> y = Eigen::Map<const Mat<Scalar>>(val(a).data(), rws, cls);
  Var<Scalar> r = t.record(std::move(y), t.needs_grad(a));
  t.set_backprop(r, [&t, a, r] {
    const Mat<Scalar>& g = t.out_grad(r.id);
    t.accumulate(a.id,
                 Eigen::Map<const Mat<Scalar>>(g.data(), val(a).rows(), val(a).cols()));
  });
  return r;
}

// Image (h x w) to K x patch^2 rows, row-major grid order, each block
// flattened row-major. Blocks partition the image, so the adjoint scatters
// without overlap.
template <class Scalar>
Var<Scalar> patchify_grid(Var<Scalar> image, Index patch) {
  Tape<Scalar>& t = *image.tape;
  const Index h = val(image).rows();
  const Index w = val(image).cols();
  if (patch < 1 || h % patch != 0 || w % patch != 0) {
    throw std::invalid_argument("patchify_grid: dims " + shape_str(val(image)) +
                                " not divisible by patch " + std::to_string(patch));
  }
  const Index gh = h / patch;
  const Index gw = w / patch;
  Mat<Scalar> y(gh * gw, patch * patch);
  for (Index pr = 0; pr < gh; ++pr)
    for (Index pc = 0; pc < gw; ++pc)
      for (Index r = 0; r < patch; ++r)
        for (Index c = 0; c < patch; ++c)
          y(pr * gw + pc, r * patch + c) = val(image)(pr * patch + r, pc * patch + c);
  Var<Scalar> out = t.record(std::move(y), t.needs_grad(image));
  t.set_backprop(out, [&t, image, out, patch, gh, gw] {
    const Mat<Scalar>& g = t.out_grad(out.id);
    Mat<Scalar> gi = Mat<Scalar>::Zero(gh * patch, gw * patch);
    for (Index pr = 0; pr < gh; ++pr)
      for (Index pc = 0; pc < gw; ++pc)
        for (Index r = 0; r < patch; ++r)
          for (Index c = 0; c < patch; ++c)
            gi(pr * patch + r, pc * patch + c) = g(pr * gw + pc, r * patch + c);
    t.accumulate(image.id, gi);
  });
  return out;
}

// Bicubic resize as a linear graph op; the plan is shared between forward
// and the adjoint in backward.
template <class Scalar>
Var<Scalar> bicubic(Var<Scalar> src, const BicubicPlan<Scalar>& plan) {
  Tape<Scalar>& t = *src.tape;
  Var<Scalar> out = t.record(bicubic_apply(plan, val(src)), t.needs_grad(src));
  t.set_backprop(out, [&t, src, out, plan] {
    t.accumulate(src.id, bicubic_apply_adjoint(plan, t.out_grad(out.id)));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Named parameter storage and gradient maps.
// ---------------------------------------------------------------------------

// Gradient: parameter name -> array of matching shape. Keys cover exactly the
// trainable set.
template <class Scalar>
using Gradient = std::map<std::string, Mat<Scalar>>;

template <class Scalar>
class ParamStore {
 public:
  struct Entry {
    Mat<Scalar> value;
    bool trainable = false;
  };

  void add(const std::string& name, Mat<Scalar> value, bool trainable) {
    if (entries_.count(name)) {
      throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    }
    order_.push_back(name);
    entries_[name] = Entry{std::move(value), trainable};
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Mat<Scalar>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return it->second.value;
  }

  const Mat<Scalar>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return it->second.value;
  }

  bool trainable(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return it->second.trainable;
  }

  const std::vector<std::string>& names() const { return order_; }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& n : order_) {
      if (entries_.at(n).trainable) out.push_back(n);
    }
    return out;
  }

  Index trainable_scalar_count() const {
    Index n = 0;
    for (const auto& name : order_) {
      const Entry& e = entries_.at(name);
      if (e.trainable) n += e.value.size();
    }
    return n;
  }

  template <class Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& name : order_) {
      const Entry& e = entries_.at(name);
      out.add(name, e.value.template cast<Other>(), e.trainable);
    }
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> entries_;
};

// Leaf vars for a parameter store, one tape node per parameter.
template <class Scalar>
struct VarMap {
  Tape<Scalar>* tape = nullptr;
  std::unordered_map<std::string, Var<Scalar>> vars;

  Var<Scalar> at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::out_of_range("VarMap: no parameter " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return vars.count(name) != 0; }
};

template <class Scalar>
VarMap<Scalar> make_leaf_vars(Tape<Scalar>& tape, const ParamStore<Scalar>& params) {
  VarMap<Scalar> m;
  m.tape = &tape;
  for (const auto& name : params.names()) {
    m.vars.emplace(name, tape.leaf(params.at(name), params.trainable(name)));
  }
  return m;
}

// Reverse-mode gradients for exactly the trainable set.
template <class Scalar>
Gradient<Scalar> collect_gradients(const Tape<Scalar>& tape, const ParamStore<Scalar>& params,
                                   const VarMap<Scalar>& vars) {
  Gradient<Scalar> g;
  for (const auto& name : params.names()) {
    if (params.trainable(name)) g[name] = tape.grad(vars.at(name));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Finite-difference verification harness.
// ---------------------------------------------------------------------------

// build: (Tape&, const VarMap&) -> Var scalar loss. Must be deterministic in
// the parameter values. Returns the max relative error per parameter between
// reverse-mode gradients and central differences (f(p+h) - f(p-h)) / 2h.
template <class Scalar, class BuildFn>
std::map<std::string, Scalar> finite_diff_check(BuildFn&& build, ParamStore<Scalar>& params,
                                                Scalar step) {
  Gradient<Scalar> analytic;
  {
    Tape<Scalar> tape;
    VarMap<Scalar> vars = make_leaf_vars(tape, params);
    Var<Scalar> loss = build(tape, vars);
    tape.backward(loss);
    analytic = collect_gradients(tape, params, vars);
  }
  auto eval = [&](const ParamStore<Scalar>& p) -> Scalar {
    Tape<Scalar> tape(false);
    VarMap<Scalar> vars = make_leaf_vars(tape, p);
    Var<Scalar> loss = build(tape, vars);
    return val(loss)(0, 0);
  };
  std::map<std::string, Scalar> report;
  for (const auto& name : params.trainable_names()) {
    Mat<Scalar>& value = params.at(name);
    const Mat<Scalar>& ag = analytic.at(name);
    Scalar worst = Scalar(0);
    for (Index i = 0; i < value.size(); ++i) {
      const Scalar saved = value.data()[i];
      value.data()[i] = saved + step;
      const Scalar fp = eval(params);
      value.data()[i] = saved - step;
      const Scalar fm = eval(params);
      value.data()[i] = saved;
      const Scalar numeric = (fp - fm) / (Scalar(2) * step);
      const Scalar a = ag.data()[i];
      const Scalar denom = std::max({std::abs(a), std::abs(numeric), Scalar(1e-6)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    report[name] = worst;
  }
  return report;
}

}  // namespace sketchseg
