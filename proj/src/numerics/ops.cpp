#include "cvseg/numerics/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cvseg/errors.hpp"
#include "cvseg/numerics/tape.hpp"
#include "cvseg/random.hpp"

namespace cvseg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

Index normalize_axis(Index axis, Index rank, const Shape& shape) {
  const Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + shape_string(shape));
  }
  return a;
}

// View of a shape as [outer, extent, inner] around one axis.
struct AxisView {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisView axis_view(const Shape& shape, Index axis) {
  AxisView v;
  for (Index d = 0; d < axis; ++d) v.outer *= shape[d];
  v.extent = shape[axis];
  for (Index d = axis + 1; d < static_cast<Index>(shape.size()); ++d) v.inner *= shape[d];
  return v;
}

// Right-aligned broadcast of two shapes with per-operand strides (0 on
// broadcast axes).
struct BroadcastPlan {
  Shape out;
  std::vector<Index> stride_a;
  std::vector<Index> stride_b;
};

std::vector<Index> row_major_strides(const Shape& s) {
  std::vector<Index> st(s.size(), 1);
  for (Index d = static_cast<Index>(s.size()) - 2; d >= 0; --d) st[d] = st[d + 1] * s[d + 1];
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.assign(r, 1);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::ptrdiff_t ia = static_cast<std::ptrdiff_t>(a.size()) - static_cast<std::ptrdiff_t>(r) + static_cast<std::ptrdiff_t>(i);
    const std::ptrdiff_t ib = static_cast<std::ptrdiff_t>(b.size()) - static_cast<std::ptrdiff_t>(r) + static_cast<std::ptrdiff_t>(i);
    const Index ea = ia >= 0 ? a[ia] : 1;
    const Index eb = ib >= 0 ? b[ib] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("cannot broadcast shapes " + shape_string(a) + " and " + shape_string(b));
    }
    p.out[i] = std::max(ea, eb);
    if (ea == 0 || eb == 0) p.out[i] = 0;
    if (ia >= 0 && ea != 1) p.stride_a[i] = sa[ia];
    if (ib >= 0 && eb != 1) p.stride_b[i] = sb[ib];
  }
  return p;
}

// Calls f(out_index, a_offset, b_offset) for every output element in
// row-major order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const Index total = element_count(p.out);
  if (total == 0) return;
  const Index r = static_cast<Index>(p.out.size());
  if (r == 0) {
    f(Index{0}, Index{0}, Index{0});
    return;
  }
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  const Index inner = p.out[r - 1];
  const Index ia_step = p.stride_a[r - 1];
  const Index ib_step = p.stride_b[r - 1];
  Index base_a = 0, base_b = 0, i = 0;
  while (i < total) {
    Index ia = base_a, ib = base_b;
    for (Index j = 0; j < inner; ++j, ++i, ia += ia_step, ib += ib_step) f(i, ia, ib);
    // carry into the outer dimensions
    for (Index d = r - 2; d >= 0; --d) {
      ++counter[d];
      base_a += p.stride_a[d];
      base_b += p.stride_b[d];
      if (counter[d] < p.out[d]) break;
      base_a -= p.stride_a[d] * p.out[d];
      base_b -= p.stride_b[d] * p.out[d];
      counter[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

DiffArray binary(const DiffArray& a, const DiffArray& b, BinaryKind kind, const char* name) {
  if (a.shape() == b.shape()) {
    Eigen::ArrayXd v;
    switch (kind) {
      case BinaryKind::kAdd: v = a.values() + b.values(); break;
      case BinaryKind::kSub: v = a.values() - b.values(); break;
      case BinaryKind::kMul: v = a.values() * b.values(); break;
    }
    DiffArray out(a.shape(), std::move(v));
    detail::record_op(name, out, {&a, &b}, [a, b, kind](const Eigen::ArrayXd& g) {
      switch (kind) {
        case BinaryKind::kAdd:
          detail::accumulate(a, g);
          detail::accumulate(b, g);
          break;
        case BinaryKind::kSub:
          detail::accumulate(a, g);
          detail::accumulate(b, -g);
          break;
        case BinaryKind::kMul:
          if (a.requires_grad()) detail::accumulate(a, g * b.values());
          if (b.requires_grad()) detail::accumulate(b, g * a.values());
          break;
      }
    });
    return out;
  }

  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape());
  Eigen::ArrayXd v(element_count(plan.out));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* pv = v.data();
  switch (kind) {
    case BinaryKind::kAdd:
      for_each_broadcast(plan, [&](Index i, Index ia, Index ib) { pv[i] = pa[ia] + pb[ib]; });
      break;
    case BinaryKind::kSub:
      for_each_broadcast(plan, [&](Index i, Index ia, Index ib) { pv[i] = pa[ia] - pb[ib]; });
      break;
    case BinaryKind::kMul:
      for_each_broadcast(plan, [&](Index i, Index ia, Index ib) { pv[i] = pa[ia] * pb[ib]; });
      break;
  }
  DiffArray out(plan.out, std::move(v));
  detail::record_op(name, out, {&a, &b}, [a, b, kind, plan](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd ga, gb;
    if (a.requires_grad()) ga = Eigen::ArrayXd::Zero(a.size());
    if (b.requires_grad()) gb = Eigen::ArrayXd::Zero(b.size());
    const double sign_b = kind == BinaryKind::kSub ? -1.0 : 1.0;
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    const bool want_a = ga.size() > 0, want_b = gb.size() > 0;
    for_each_broadcast(plan, [&](Index i, Index ia, Index ib) {
      if (kind == BinaryKind::kMul) {
        if (want_a) ga[ia] += g[i] * pb[ib];
        if (want_b) gb[ib] += g[i] * pa[ia];
      } else {
        if (want_a) ga[ia] += g[i];
        if (want_b) gb[ib] += sign_b * g[i];
      }
    });
    if (want_a) detail::accumulate(a, ga);
    if (want_b) detail::accumulate(b, gb);
  });
  return out;
}

}  // namespace

namespace detail {

void record_op(const char* name, DiffArray& out, std::initializer_list<const DiffArray*> inputs,
               std::function<void(const Eigen::ArrayXd&)> backward) {
  if (!grad_enabled()) return;
  bool needs = false;
  for (const DiffArray* in : inputs) needs = needs || in->requires_grad();
  if (!needs) return;
  out.set_requires_grad(true);
  Tape::active().record(name, out, [node = out.node(), fn = std::move(backward)] { fn(node->grad); });
}

}  // namespace detail

DiffArray matmul(const DiffArray& a, const DiffArray& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const Index m = a.dim(-2), kd = a.dim(-1), kb = b.dim(-2), p = b.dim(-1);
  if (kd != kb) {
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);

  // Shared right operand: a single GEMM over the flattened batch.
  if (batch_b.empty()) {
    const Index rows = a.size() / kd;
    Eigen::ArrayXd v(rows * p);
    MatMap(v.data(), rows, p).noalias() =
        ConstMatMap(a.values().data(), rows, kd) * ConstMatMap(b.values().data(), kd, p);
    Shape out_shape = a.shape();
    out_shape.back() = p;
    DiffArray out(std::move(out_shape), std::move(v));
    detail::record_op("matmul", out, {&a, &b}, [a, b, rows, kd, p](const Eigen::ArrayXd& g) {
      ConstMatMap gm(g.data(), rows, p);
      if (a.requires_grad()) {
        MatMap ga(a.node()->ensure_grad().data(), rows, kd);
        ga.noalias() += gm * ConstMatMap(b.values().data(), kd, p).transpose();
      }
      if (b.requires_grad()) {
        MatMap gb(b.node()->ensure_grad().data(), kd, p);
        gb.noalias() += ConstMatMap(a.values().data(), rows, kd).transpose() * gm;
      }
    });
    return out;
  }

  BroadcastPlan plan = plan_broadcast(batch_a, batch_b);
  Shape out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(p);
  const Index mat_a = m * kd, mat_b = kd * p, mat_c = m * p;
  Eigen::ArrayXd v(element_count(out_shape));
  for_each_broadcast(plan, [&](Index i, Index ia, Index ib) {
    MatMap(v.data() + i * mat_c, m, p).noalias() =
        ConstMatMap(a.values().data() + ia * mat_a, m, kd) *
        ConstMatMap(b.values().data() + ib * mat_b, kd, p);
  });
  DiffArray out(std::move(out_shape), std::move(v));
  detail::record_op("matmul", out, {&a, &b}, [a, b, plan, m, kd, p](const Eigen::ArrayXd& g) {
    const Index mat_a = m * kd, mat_b = kd * p, mat_c = m * p;
    for_each_broadcast(plan, [&](Index i, Index ia, Index ib) {
      ConstMatMap gm(g.data() + i * mat_c, m, p);
      if (a.requires_grad()) {
        MatMap(a.node()->ensure_grad().data() + ia * mat_a, m, kd).noalias() +=
            gm * ConstMatMap(b.values().data() + ib * mat_b, kd, p).transpose();
      }
      if (b.requires_grad()) {
        MatMap(b.node()->ensure_grad().data() + ib * mat_b, kd, p).noalias() +=
            ConstMatMap(a.values().data() + ia * mat_a, m, kd).transpose() * gm;
      }
    });
  });
  return out;
}

DiffArray add(const DiffArray& a, const DiffArray& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
DiffArray sub(const DiffArray& a, const DiffArray& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
DiffArray mul(const DiffArray& a, const DiffArray& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

DiffArray scale(const DiffArray& x, double factor) {
  DiffArray out(x.shape(), x.values() * factor);
  detail::record_op("scale", out, {&x}, [x, factor](const Eigen::ArrayXd& g) {
    detail::accumulate(x, g * factor);
  });
  return out;
}

DiffArray leaky_relu(const DiffArray& x, double slope) {
  const Eigen::ArrayXd& xv = x.values();
  DiffArray out(x.shape(), (xv > 0.0).select(xv, slope * xv));
  detail::record_op("leaky_relu", out, {&x}, [x, slope](const Eigen::ArrayXd& g) {
    detail::accumulate(x, (x.values() > 0.0).select(g, slope * g));
  });
  return out;
}

DiffArray l2_normalize(const DiffArray& x, Index axis, double epsilon) {
  const Index ax = normalize_axis(axis, x.rank(), x.shape());
  const AxisView view = axis_view(x.shape(), ax);
  Eigen::ArrayXd v(x.size());
  Eigen::ArrayXd norms(view.outer * view.inner);
  const Index block = view.extent * view.inner;
  for (Index o = 0; o < view.outer; ++o) {
    ConstMatMap in(x.values().data() + o * block, view.extent, view.inner);
    const Eigen::RowVectorXd nrm = in.colwise().norm().cwiseMax(epsilon);
    norms.segment(o * view.inner, view.inner) = nrm.transpose().array();
    MatMap(v.data() + o * block, view.extent, view.inner) = (in.array().rowwise() / nrm.array()).matrix();
  }
  DiffArray out(x.shape(), std::move(v));
  detail::record_op("l2_normalize", out, {&x}, [x, y = out.values(), norms, view](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gx(x.size());
    const Index block = view.extent * view.inner;
    for (Index o = 0; o < view.outer; ++o) {
      ConstMatMap ym(y.data() + o * block, view.extent, view.inner);
      ConstMatMap gm(g.data() + o * block, view.extent, view.inner);
      const Eigen::RowVectorXd dot = (ym.array() * gm.array()).matrix().colwise().sum();
      const Eigen::ArrayXd nrm = norms.segment(o * view.inner, view.inner);
      MatMap(gx.data() + o * block, view.extent, view.inner) =
          ((gm - (ym.array().rowwise() * dot.array()).matrix()).array().rowwise() / nrm.transpose()).matrix();
    }
    detail::accumulate(x, gx);
  });
  return out;
}

DiffArray abs(const DiffArray& x) {
  DiffArray out(x.shape(), x.values().abs());
  detail::record_op("abs", out, {&x}, [x](const Eigen::ArrayXd& g) {
    const Eigen::ArrayXd& xv = x.values();
    const Eigen::ArrayXd sign =
        (xv > 0.0).select(Eigen::ArrayXd::Ones(xv.size()),
                          (xv < 0.0).select(-Eigen::ArrayXd::Ones(xv.size()), 0.0));
    detail::accumulate(x, g * sign);
  });
  return out;
}

DiffArray softmax(const DiffArray& x, Index axis) {
  const Index ax = normalize_axis(axis, x.rank(), x.shape());
  const AxisView view = axis_view(x.shape(), ax);
  if (view.extent == 0) throw DimensionError("softmax over an empty axis of " + shape_string(x.shape()));
  Eigen::ArrayXd v(x.size());
  const Index block = view.extent * view.inner;
  for (Index o = 0; o < view.outer; ++o) {
    ConstMatMap in(x.values().data() + o * block, view.extent, view.inner);
    MatMap y(v.data() + o * block, view.extent, view.inner);
    const Eigen::RowVectorXd mx = in.colwise().maxCoeff();
    y = (in.rowwise() - mx).array().exp().matrix();
    const Eigen::RowVectorXd total = y.colwise().sum();
    y = (y.array().rowwise() / total.array()).matrix();
  }
  DiffArray out(x.shape(), std::move(v));
  detail::record_op("softmax", out, {&x}, [x, y = out.values(), view](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gx(x.size());
    const Index block = view.extent * view.inner;
    for (Index o = 0; o < view.outer; ++o) {
      ConstMatMap ym(y.data() + o * block, view.extent, view.inner);
      ConstMatMap gm(g.data() + o * block, view.extent, view.inner);
      const Eigen::RowVectorXd dot = (ym.array() * gm.array()).matrix().colwise().sum();
      MatMap(gx.data() + o * block, view.extent, view.inner) =
          (ym.array() * (gm.rowwise() - dot).array()).matrix();
    }
    detail::accumulate(x, gx);
  });
  return out;
}

DiffArray log_softmax(const DiffArray& x, Index axis) {
  const Index ax = normalize_axis(axis, x.rank(), x.shape());
  const AxisView view = axis_view(x.shape(), ax);
  if (view.extent == 0) throw DimensionError("log_softmax over an empty axis of " + shape_string(x.shape()));
  Eigen::ArrayXd v(x.size());
  const Index block = view.extent * view.inner;
  for (Index o = 0; o < view.outer; ++o) {
    ConstMatMap in(x.values().data() + o * block, view.extent, view.inner);
    MatMap y(v.data() + o * block, view.extent, view.inner);
    const Eigen::RowVectorXd mx = in.colwise().maxCoeff();
    y = in.rowwise() - mx;
    const Eigen::RowVectorXd lse = y.array().exp().matrix().colwise().sum().array().log().matrix();
    y = y.rowwise() - lse;
  }
  DiffArray out(x.shape(), std::move(v));
  detail::record_op("log_softmax", out, {&x}, [x, y = out.values(), view](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gx(x.size());
    const Index block = view.extent * view.inner;
    for (Index o = 0; o < view.outer; ++o) {
      ConstMatMap ym(y.data() + o * block, view.extent, view.inner);
      ConstMatMap gm(g.data() + o * block, view.extent, view.inner);
      const Eigen::RowVectorXd total = gm.colwise().sum();
      MatMap(gx.data() + o * block, view.extent, view.inner) =
          gm - (ym.array().exp().rowwise() * total.array()).matrix();
    }
    detail::accumulate(x, gx);
  });
  return out;
}

DiffArray reduce(const DiffArray& x, Index axis, ReduceMode mode, bool keepdims) {
  const Index ax = normalize_axis(axis, x.rank(), x.shape());
  const AxisView view = axis_view(x.shape(), ax);
  if (view.extent == 0) throw DimensionError("reduce over an empty axis of " + shape_string(x.shape()));
  Shape out_shape = x.shape();
  if (keepdims) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  const Index block = view.extent * view.inner;
  Eigen::ArrayXd v(view.outer * view.inner);
  std::vector<Index> argmax;
  if (mode == ReduceMode::kMax) argmax.resize(static_cast<std::size_t>(v.size()));
  const double* px = x.values().data();
  for (Index o = 0; o < view.outer; ++o) {
    for (Index i = 0; i < view.inner; ++i) {
      const double* base = px + o * block + i;
      const Index oi = o * view.inner + i;
      if (mode == ReduceMode::kMax) {
        Index best = 0;
        double best_v = base[0];
        for (Index j = 1; j < view.extent; ++j) {
          if (base[j * view.inner] > best_v) {
            best_v = base[j * view.inner];
            best = j;
          }
        }
        v[oi] = best_v;
        argmax[static_cast<std::size_t>(oi)] = best;
      } else {
        double s = 0.0;
        for (Index j = 0; j < view.extent; ++j) s += base[j * view.inner];
        v[oi] = mode == ReduceMode::kMean ? s / static_cast<double>(view.extent) : s;
      }
    }
  }
  DiffArray out(std::move(out_shape), std::move(v));
  detail::record_op("reduce", out, {&x}, [x, view, mode, argmax = std::move(argmax)](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(x.size());
    const Index block = view.extent * view.inner;
    const double s = mode == ReduceMode::kMean ? 1.0 / static_cast<double>(view.extent) : 1.0;
    for (Index o = 0; o < view.outer; ++o) {
      for (Index i = 0; i < view.inner; ++i) {
        const Index oi = o * view.inner + i;
        if (mode == ReduceMode::kMax) {
          gx[o * block + argmax[static_cast<std::size_t>(oi)] * view.inner + i] += g[oi];
        } else {
          for (Index j = 0; j < view.extent; ++j) gx[o * block + j * view.inner + i] += s * g[oi];
        }
      }
    }
    detail::accumulate(x, gx);
  });
  return out;
}

DiffArray sum_all(const DiffArray& x) {
  DiffArray out = DiffArray::scalar(x.values().sum());
  detail::record_op("sum_all", out, {&x}, [x](const Eigen::ArrayXd& g) {
    detail::accumulate(x, Eigen::ArrayXd::Constant(x.size(), g[0]));
  });
  return out;
}

DiffArray mean_all(const DiffArray& x) {
  if (x.size() == 0) throw DimensionError("mean of an empty array");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

DiffArray gather_rows(const DiffArray& x, const NeighborIndex& idx) {
  if (x.rank() != 2) throw DimensionError("gather_rows expects [N, C], got " + shape_string(x.shape()));
  const Index n = x.dim(0), c = x.dim(1);
  for (Index i = 0; i < idx.rows; ++i) {
    for (Index k = 0; k < idx.k; ++k) {
      const Index j = idx(i, k);
      if (j < 0 || j >= n) {
        throw IndexError("gather_rows index " + std::to_string(j) + " at (" + std::to_string(i) + ", " +
                         std::to_string(k) + ") outside [0, " + std::to_string(n) + ")");
      }
    }
  }
  Eigen::ArrayXd v(idx.rows * idx.k * c);
  const double* px = x.values().data();
  for (Index r = 0; r < idx.rows * idx.k; ++r) {
    std::copy_n(px + idx.idx[static_cast<std::size_t>(r)] * c, c, v.data() + r * c);
  }
  DiffArray out({idx.rows, idx.k, c}, std::move(v));
  detail::record_op("gather_rows", out, {&x}, [x, idx, c](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd& gx = x.node()->ensure_grad();
    for (Index r = 0; r < idx.rows * idx.k; ++r) {
      double* dst = gx.data() + idx.idx[static_cast<std::size_t>(r)] * c;
      const double* src = g.data() + r * c;
      for (Index j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
  return out;
}

DiffArray take_rows(const DiffArray& x, std::span<const Index> rows) {
  if (x.rank() < 1) throw DimensionError("take_rows on a scalar");
  const Index n = x.dim(0);
  const Index width = n > 0 ? x.size() / n : 0;
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<Index>(rows.size());
  Eigen::ArrayXd v(static_cast<Index>(rows.size()) * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n) {
      throw IndexError("take_rows index " + std::to_string(rows[r]) + " at " + std::to_string(r) +
                       " outside [0," + std::to_string(n) + ")");
    }
    std::copy_n(x.values().data() + rows[r] * width, width, v.data() + static_cast<Index>(r) * width);
  }
  DiffArray out(std::move(out_shape), std::move(v));
  detail::record_op("take_rows", out, {&x},
                    [x, rows = std::vector<Index>(rows.begin(), rows.end()), width](const Eigen::ArrayXd& g) {
                      Eigen::ArrayXd& gx = x.node()->ensure_grad();
                      for (std::size_t r = 0; r < rows.size(); ++r) {
                        gx.segment(rows[r] * width, width) += g.segment(static_cast<Index>(r) * width, width);
                      }
                    });
  return out;
}

DiffArray pick(const DiffArray& x, std::span<const int> labels) {
  if (x.rank() != 2) throw DimensionError("pick expects [N, C], got " + shape_string(x.shape()));
  const Index n = x.dim(0), c = x.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    throw DimensionError("pick: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  Eigen::ArrayXd v(n);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      throw IndexError("label " + std::to_string(y) + " at row " + std::to_string(i) + " outside [0," +
                       std::to_string(c) + ")");
    }
    v[i] = x.values()[i * c + y];
  }
  DiffArray out({n}, std::move(v));
  detail::record_op("pick", out, {&x}, [x, labels = std::vector<int>(labels.begin(), labels.end()), c](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd& gx = x.node()->ensure_grad();
    for (std::size_t i = 0; i < labels.size(); ++i) gx[static_cast<Index>(i) * c + labels[i]] += g[static_cast<Index>(i)];
  });
  return out;
}

DiffArray concat(const std::vector<DiffArray>& xs, Index axis) {
  if (xs.empty()) throw DimensionError("concat of an empty list");
  const Shape& ref = xs.front().shape();
  const Index ax = normalize_axis(axis, static_cast<Index>(ref.size()), ref);
  Shape out_shape = ref;
  out_shape[ax] = 0;
  for (const DiffArray& x : xs) {
    if (x.rank() != static_cast<Index>(ref.size())) {
      throw DimensionError("concat rank mismatch: " + shape_string(ref) + " vs " + shape_string(x.shape()));
    }
    for (Index d = 0; d < x.rank(); ++d) {
      if (d != ax && x.shape()[d] != ref[d]) {
        throw DimensionError("concat shape mismatch: " + shape_string(ref) + " vs " + shape_string(x.shape()));
      }
    }
    out_shape[ax] += x.shape()[ax];
  }
  const AxisView ov = axis_view(out_shape, ax);
  const Index out_block = ov.extent * ov.inner;
  Eigen::ArrayXd v(element_count(out_shape));
  std::vector<Index> offsets;
  Index offset = 0;
  for (const DiffArray& x : xs) {
    offsets.push_back(offset);
    const Index w = x.shape()[ax] * ov.inner;
    for (Index o = 0; o < ov.outer; ++o) {
      std::copy_n(x.values().data() + o * w, w, v.data() + o * out_block + offset);
    }
    offset += w;
  }
  DiffArray out(std::move(out_shape), std::move(v));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const DiffArray& x : xs) needs = needs || x.requires_grad();
  if (!needs) return out;
  out.set_requires_grad(true);
  Tape::active().record("concat", out, [node = out.node(), xs, offsets, ov, out_block, ax] {
    const Eigen::ArrayXd& g = node->grad;
    for (std::size_t t = 0; t < xs.size(); ++t) {
      const DiffArray& x = xs[t];
      if (!x.requires_grad()) continue;
      const Index w = x.shape()[ax] * ov.inner;
      Eigen::ArrayXd& gx = x.node()->ensure_grad();
      for (Index o = 0; o < ov.outer; ++o) {
        gx.segment(o * w, w) += g.segment(o * out_block + offsets[t], w);
      }
    }
  });
  return out;
}

DiffArray reshape(const DiffArray& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  DiffArray out(std::move(shape), x.values());
  detail::record_op("reshape", out, {&x}, [x](const Eigen::ArrayXd& g) { detail::accumulate(x, g); });
  return out;
}

DiffArray broadcast_to(const DiffArray& x, const Shape& shape) {
  BroadcastPlan plan = plan_broadcast(x.shape(), shape);
  if (plan.out != shape) {
    throw DimensionError("cannot broadcast " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  Eigen::ArrayXd v(element_count(shape));
  const double* px = x.values().data();
  for_each_broadcast(plan, [&](Index i, Index ia, Index) { v[i] = px[ia]; });
  DiffArray out(shape, std::move(v));
  detail::record_op("broadcast_to", out, {&x}, [x, plan](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd& gx = x.node()->ensure_grad();
    for_each_broadcast(plan, [&](Index i, Index ia, Index) { gx[ia] += g[i]; });
  });
  return out;
}

DiffArray transpose(const DiffArray& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_string(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  Eigen::ArrayXd v(x.size());
  MatMap(v.data(), c, r) = ConstMatMap(x.values().data(), r, c).transpose();
  DiffArray out({c, r}, std::move(v));
  detail::record_op("transpose", out, {&x}, [x, r, c](const Eigen::ArrayXd& g) {
    MatMap(x.node()->ensure_grad().data(), r, c) += ConstMatMap(g.data(), c, r).transpose();
  });
  return out;
}

DiffArray batch_norm(const DiffArray& x, const DiffArray& gamma, const DiffArray& beta, NormStats& stats,
                     const NormOptions& options) {
  if (x.rank() < 1) throw DimensionError("batch_norm on a scalar");
  const Index c = x.dim(-1);
  if (gamma.size() != c || beta.size() != c || stats.mean.size() != c || stats.var.size() != c) {
    throw DimensionError("batch_norm parameters do not match feature width of " + shape_string(x.shape()));
  }
  const Index rows = x.size() / c;
  if (rows == 0) throw DimensionError("batch_norm over zero rows");
  ConstMatMap xm(x.values().data(), rows, c);
  Eigen::RowVectorXd mean, var;
  if (options.training) {
    mean = xm.colwise().mean();
    var = (xm.rowwise() - mean).array().square().matrix().colwise().mean();
    const double m = options.momentum;
    double rate = 1.0 - m;
    if (stats.updates.defined() && m < 1.0) {
      const double t = stats.updates.values_mut()[0] += 1.0;
      rate /= 1.0 - std::pow(m, t);
    }
    stats.mean.values_mut() += rate * (mean.transpose().array() - stats.mean.values());
    stats.var.values_mut() += rate * (var.transpose().array() - stats.var.values());
  } else {
    mean = stats.mean.values().matrix().transpose();
    var = stats.var.values().matrix().transpose();
  }
  const Eigen::RowVectorXd inv_std = (var.array() + options.epsilon).rsqrt().matrix();
  RowMat xhat = (xm.rowwise() - mean).array().rowwise() * inv_std.array();
  Eigen::ArrayXd v(x.size());
  MatMap(v.data(), rows, c) =
      ((xhat.array().rowwise() * gamma.values().transpose()).rowwise() + beta.values().transpose()).matrix();
  DiffArray out(x.shape(), std::move(v));
  detail::record_op("batch_norm", out, {&x, &gamma, &beta},
                    [x, gamma, beta, xhat = std::move(xhat), inv_std, rows, c,
                     training = options.training](const Eigen::ArrayXd& g) {
                      ConstMatMap gm(g.data(), rows, c);
                      if (gamma.requires_grad()) {
                        detail::accumulate(gamma, (gm.array() * xhat.array()).colwise().sum().transpose());
                      }
                      if (beta.requires_grad()) detail::accumulate(beta, gm.colwise().sum().transpose().array());
                      if (!x.requires_grad()) return;
                      const RowMat dxhat = gm.array().rowwise() * gamma.values().transpose();
                      MatMap gx(x.node()->ensure_grad().data(), rows, c);
                      if (!training) {
                        gx += (dxhat.array().rowwise() * inv_std.array()).matrix();
                        return;
                      }
                      const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
                      const Eigen::RowVectorXd sum_dx = (dxhat.array() * xhat.array()).colwise().sum().matrix();
                      const double inv_rows = 1.0 / static_cast<double>(rows);
                      const RowMat centered =
                          ((dxhat.rowwise() - sum_d * inv_rows).array() -
                           xhat.array().rowwise() * (sum_dx.array() * inv_rows))
                              .matrix();
                      gx += (centered.array().rowwise() * inv_std.array()).matrix();
                    });
  return out;
}

DiffArray dropout(const DiffArray& x, double rate, std::uint64_t seed, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  Rng rng(seed);
  Eigen::ArrayXd mask(x.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() >= rate ? keep_scale : 0.0;
  DiffArray out(x.shape(), x.values() * mask);
  detail::record_op("dropout", out, {&x}, [x, mask = std::move(mask)](const Eigen::ArrayXd& g) {
    detail::accumulate(x, g * mask);
  });
  return out;
}

}  // namespace cvseg
