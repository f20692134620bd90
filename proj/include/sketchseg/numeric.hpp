#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace sketchseg {

using Index = Eigen::Index;

// Row-major throughout: patch flattening, PNG I/O and the checkpoint format
// all assume row-major payloads.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matf = Mat<float>;
using Matd = Mat<double>;
using MatInt = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
std::string shape_str(const Mat<Scalar>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <class Scalar>
void require_same_shape(const char* op, const Mat<Scalar>& a, const Mat<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                                " vs " + shape_str(b));
  }
}

template <class Scalar>
Mat<Scalar> matmul(const Mat<Scalar>& a, const Mat<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a) +
                                " * " + shape_str(b));
  }
  return a * b;
}

// Stabilized by row-max subtraction; each row of the result sums to 1.
template <class Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& x) {
  Mat<Scalar> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

// Per-row layer norm with population variance: (x - mean) / sqrt(var + eps) * gamma + beta.
// gamma and beta are 1 x d row vectors broadcast over rows.
template <class Scalar>
Mat<Scalar> layer_norm_rows(const Mat<Scalar>& x, const Mat<Scalar>& gamma,
                            const Mat<Scalar>& beta, Scalar eps) {
  if (gamma.rows() != 1 || beta.rows() != 1 || gamma.cols() != x.cols() ||
      beta.cols() != x.cols()) {
    throw std::invalid_argument("layer_norm: gamma/beta must be 1x" +
                                std::to_string(x.cols()) + ", got " + shape_str(gamma) +
                                " and " + shape_str(beta));
  }
  if (eps <= Scalar(0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const Scalar n = static_cast<Scalar>(x.cols());
  Mat<Scalar> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mean).square().sum() / n;
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    y.row(r) =
        ((x.row(r).array() - mean) * inv) * gamma.row(0).array() + beta.row(0).array();
  }
  return y;
}

template <class Scalar>
Mat<Scalar> l2_normalize_rows(const Mat<Scalar>& x) {
  Mat<Scalar> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    Scalar n = x.row(r).norm();
    if (n < Scalar(1e-12)) n = Scalar(1e-12);
    y.row(r) = x.row(r) / n;
  }
  return y;
}

template <class Scalar>
Scalar gelu_scalar(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar(0.7071067811865476)));
}

template <class Scalar>
Scalar gelu_grad_scalar(Scalar x) {
  const Scalar phi_big = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(0.7071067811865476)));
  const Scalar phi_small =
      std::exp(Scalar(-0.5) * x * x) * Scalar(0.3989422804014327);
  return phi_big + x * phi_small;
}

template <class Scalar>
Scalar sigmoid_scalar(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

// ---------------------------------------------------------------------------
// Bicubic resize: Catmull-Rom kernel (a = -0.5), edge-clamped sampling,
// align-corners-false pixel-center convention. The plan separates weight
// computation from application so the same taps drive forward and adjoint.
// ---------------------------------------------------------------------------

template <class Scalar>
struct BicubicTaps {
  std::vector<std::array<Index, 4>> idx;  // per output coordinate, clamped source indices
  std::vector<std::array<Scalar, 4>> w;
};

template <class Scalar>
Scalar cubic_kernel(Scalar t) {
  constexpr Scalar a = Scalar(-0.5);
  t = std::abs(t);
  if (t <= Scalar(1)) return ((a + Scalar(2)) * t - (a + Scalar(3))) * t * t + Scalar(1);
  if (t < Scalar(2)) return (((t - Scalar(5)) * t + Scalar(8)) * t - Scalar(4)) * a;
  return Scalar(0);
}

template <class Scalar>
BicubicTaps<Scalar> make_bicubic_taps(Index src_n, Index out_n) {
  BicubicTaps<Scalar> taps;
  taps.idx.resize(static_cast<std::size_t>(out_n));
  taps.w.resize(static_cast<std::size_t>(out_n));
  const Scalar scale = static_cast<Scalar>(src_n) / static_cast<Scalar>(out_n);
  for (Index o = 0; o < out_n; ++o) {
    const Scalar pos = (static_cast<Scalar>(o) + Scalar(0.5)) * scale - Scalar(0.5);
    const Index base = static_cast<Index>(std::floor(pos));
    const Scalar frac = pos - static_cast<Scalar>(base);
    for (int k = 0; k < 4; ++k) {
      Index src = base - 1 + k;
      if (src < 0) src = 0;
      if (src >= src_n) src = src_n - 1;
      taps.idx[static_cast<std::size_t>(o)][static_cast<std::size_t>(k)] = src;
      taps.w[static_cast<std::size_t>(o)][static_cast<std::size_t>(k)] =
          cubic_kernel(frac - static_cast<Scalar>(k - 1));
    }
  }
  return taps;
}

template <class Scalar>
struct BicubicPlan {
  Index src_h = 0, src_w = 0, out_h = 0, out_w = 0;
  BicubicTaps<Scalar> rows, cols;
};

template <class Scalar>
BicubicPlan<Scalar> make_bicubic_plan(Index src_h, Index src_w, Index out_h, Index out_w) {
  if (src_h < 2 || src_w < 2) {
    throw std::invalid_argument("bicubic_resize: source must be at least 2x2, got " +
                                std::to_string(src_h) + "x" + std::to_string(src_w));
  }
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("bicubic_resize: output dims must be positive");
  }
  BicubicPlan<Scalar> plan;
  plan.src_h = src_h;
  plan.src_w = src_w;
  plan.out_h = out_h;
  plan.out_w = out_w;
  plan.rows = make_bicubic_taps<Scalar>(src_h, out_h);
  plan.cols = make_bicubic_taps<Scalar>(src_w, out_w);
  return plan;
}

template <class Scalar>
Mat<Scalar> bicubic_apply(const BicubicPlan<Scalar>& plan, const Mat<Scalar>& src) {
  if (src.rows() != plan.src_h || src.cols() != plan.src_w) {
    throw std::invalid_argument("bicubic_apply: source shape " + shape_str(src) +
                                " does not match plan");
  }
  // Horizontal pass, then vertical.
  Mat<Scalar> mid(plan.src_h, plan.out_w);
  for (Index r = 0; r < plan.src_h; ++r) {
    for (Index c = 0; c < plan.out_w; ++c) {
      const auto& ix = plan.cols.idx[static_cast<std::size_t>(c)];
      const auto& w = plan.cols.w[static_cast<std::size_t>(c)];
      mid(r, c) = w[0] * src(r, ix[0]) + w[1] * src(r, ix[1]) + w[2] * src(r, ix[2]) +
                  w[3] * src(r, ix[3]);
    }
  }
  Mat<Scalar> out(plan.out_h, plan.out_w);
  for (Index r = 0; r < plan.out_h; ++r) {
    const auto& ix = plan.rows.idx[static_cast<std::size_t>(r)];
    const auto& w = plan.rows.w[static_cast<std::size_t>(r)];
    for (Index c = 0; c < plan.out_w; ++c) {
      out(r, c) = w[0] * mid(ix[0], c) + w[1] * mid(ix[1], c) + w[2] * mid(ix[2], c) +
                  w[3] * mid(ix[3], c);
    }
  }
  return out;
}

// Adjoint of the (linear) resize: scatters output-space gradients back to the source.
template <class Scalar>
Mat<Scalar> bicubic_apply_adjoint(const BicubicPlan<Scalar>& plan, const Mat<Scalar>& grad_out) {
  if (grad_out.rows() != plan.out_h || grad_out.cols() != plan.out_w) {
    throw std::invalid_argument("bicubic_apply_adjoint: gradient shape " + shape_str(grad_out) +
                                " does not match plan");
  }
  Mat<Scalar> mid = Mat<Scalar>::Zero(plan.src_h, plan.out_w);
  for (Index r = 0; r < plan.out_h; ++r) {
    const auto& ix = plan.rows.idx[static_cast<std::size_t>(r)];
    const auto& w = plan.rows.w[static_cast<std::size_t>(r)];
    for (Index c = 0; c < plan.out_w; ++c) {
      const Scalar g = grad_out(r, c);
      for (int k = 0; k < 4; ++k) mid(ix[static_cast<std::size_t>(k)], c) += w[static_cast<std::size_t>(k)] * g;
    }
  }
  Mat<Scalar> out = Mat<Scalar>::Zero(plan.src_h, plan.src_w);
  for (Index r = 0; r < plan.src_h; ++r) {
    for (Index c = 0; c < plan.out_w; ++c) {
      const auto& ix = plan.cols.idx[static_cast<std::size_t>(c)];
      const auto& w = plan.cols.w[static_cast<std::size_t>(c)];
      const Scalar g = mid(r, c);
      for (int k = 0; k < 4; ++k) out(r, ix[static_cast<std::size_t>(k)]) += w[static_cast<std::size_t>(k)] * g;
    }
  }
  return out;
}

template <class Scalar>
Mat<Scalar> bicubic_resize(const Mat<Scalar>& src, Index out_h, Index out_w) {
  return bicubic_apply(make_bicubic_plan<Scalar>(src.rows(), src.cols(), out_h, out_w), src);
}

}  // namespace sketchseg
