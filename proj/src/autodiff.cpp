#include "esr/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace esr::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Array& a, const Array& b) {
  fail(ErrorCode::invalid_argument,
       std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
           " and " + shape_str(b.shape()));
}

bool is_scalar(const Array& a) { return a.size() == 1; }

double guard_den(double d, double eps) {
  if (std::fabs(d) >= eps) return d;
  return d < 0.0 ? -eps : eps;
}

void same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape())
    fail(ErrorCode::invalid_argument, std::string(op) + ": vars from different tapes");
}

}  // namespace

const Array& Var::value() const { return tape_->value(id_); }
const Array& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Array value) {
  nodes_.push_back(Node{std::move(value), Array{}, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::emplace(Array value, std::vector<size_t> parents, BackwardFn backward) {
  nodes_.push_back(
      Node{std::move(value), Array{}, std::move(parents), std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (root.tape() != this)
    fail(ErrorCode::invalid_argument, "backward: var from another tape");
  if (nodes_[root.id()].value.size() != 1)
    fail(ErrorCode::invalid_argument,
         "backward: root must be scalar, got shape " +
             shape_str(nodes_[root.id()].value.shape()));
  for (auto& n : nodes_) n.grad = Array(n.value.shape());
  nodes_[root.id()].grad[0] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward) continue;
    bool zero = true;
    for (size_t k = 0; k < n.grad.size() && zero; ++k)
      if (n.grad[k] != 0.0) zero = false;
    if (zero) continue;
    n.backward(*this, n.grad);
  }
}

namespace {

// Accumulates up into the gradient of parent p, reducing to a scalar when the
// parent is a scalar broadcast into an array op.
void acc(Tape& t, size_t p, const Array& up) {
  Array& g = t.grad_mut(p);
  if (g.size() == up.size()) {
    for (size_t i = 0; i < up.size(); ++i) g[i] += up[i];
  } else if (g.size() == 1) {
    double s = 0.0;
    for (size_t i = 0; i < up.size(); ++i) s += up[i];
    g[0] += s;
  } else {
    fail(ErrorCode::internal, "gradient accumulation shape mismatch");
  }
}

template <class FwdFn, class BwdFn>
Var binary_ew(const char* name, Var a, Var b, FwdFn fwd, BwdFn bwd) {
  same_tape(a, b, name);
  const Array& av = a.value();
  const Array& bv = b.value();
  if (!av.same_shape(bv) && !is_scalar(av) && !is_scalar(bv))
    shape_error(name, av, bv);
  const Array& big = is_scalar(av) ? bv : av;
  Array out(big.shape());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = is_scalar(av) ? av[0] : av[i];
    const double y = is_scalar(bv) ? bv[0] : bv[i];
    out[i] = fwd(x, y);
  }
  Tape& t = *a.tape();
  size_t ai = a.id(), bi = b.id();
  return t.emplace(std::move(out), {ai, bi},
                   [ai, bi, bwd](Tape& t, const Array& up) {
                     const Array& av = t.value(ai);
                     const Array& bv = t.value(bi);
                     Array da(up.shape()), db(up.shape());
                     for (size_t i = 0; i < up.size(); ++i) {
                       const double x = is_scalar(av) ? av[0] : av[i];
                       const double y = is_scalar(bv) ? bv[0] : bv[i];
                       double gx, gy;
                       bwd(x, y, up[i], gx, gy);
                       da[i] = gx;
                       db[i] = gy;
                     }
                     acc(t, ai, da);
                     acc(t, bi, db);
                   });
}

template <class FwdFn, class BwdFn>
Var unary_ew(Var a, FwdFn fwd, BwdFn bwd) {
  const Array& av = a.value();
  Array out(av.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  Tape& t = *a.tape();
  size_t ai = a.id();
  return t.emplace(std::move(out), {ai}, [ai, bwd](Tape& t, const Array& up) {
    const Array& av = t.value(ai);
    Array& g = t.grad_mut(ai);
    for (size_t i = 0; i < up.size(); ++i) g[i] += bwd(av[i], up[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_ew(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double up, double& gx, double& gy) {
        gx = up;
        gy = up;
      });
}

Var sub(Var a, Var b) {
  return binary_ew(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double up, double& gx, double& gy) {
        gx = up;
        gy = -up;
      });
}

Var mul(Var a, Var b) {
  return binary_ew(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double up, double& gx, double& gy) {
        gx = up * y;
        gy = up * x;
      });
}

Var div(Var a, Var b, double eps) {
  return binary_ew(
      "div", a, b,
      [eps](double x, double y) { return x / guard_den(y, eps); },
      [eps](double x, double y, double up, double& gx, double& gy) {
        const double d = guard_den(y, eps);
        gx = up / d;
        gy = -up * x / (d * d);
      });
}

Var neg(Var a) {
  return unary_ew(
      a, [](double x) { return -x; },
      [](double, double up) { return -up; });
}

Var scale(Var a, double s) {
  return unary_ew(
      a, [s](double x) { return s * x; },
      [s](double, double up) { return s * up; });
}

Var add_const(Var a, double c) {
  return unary_ew(
      a, [c](double x) { return x + c; },
      [](double, double up) { return up; });
}

Var exp(Var a) {
  const Array& av = a.value();
  Array out(av.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  Tape& t = *a.tape();
  size_t ai = a.id();
  Array cached = out;
  return t.emplace(std::move(out), {ai},
                   [ai, y = std::move(cached)](Tape& t, const Array& up) {
                     Array& g = t.grad_mut(ai);
                     for (size_t i = 0; i < up.size(); ++i) g[i] += up[i] * y[i];
                   });
}

Var log(Var a, double eps) {
  return unary_ew(
      a, [eps](double x) { return std::log(std::max(x, eps)); },
      [eps](double x, double up) { return up / std::max(x, eps); });
}

Var tanh(Var a) {
  return unary_ew(
      a, [](double x) { return std::tanh(x); },
      [](double x, double up) {
        const double y = std::tanh(x);
        return up * (1.0 - y * y);
      });
}

Var relu(Var a) {
  return unary_ew(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double up) { return x > 0.0 ? up : 0.0; });
}

Var absval(Var a) {
  return unary_ew(
      a, [](double x) { return std::fabs(x); },
      [](double x, double up) { return x > 0.0 ? up : (x < 0.0 ? -up : 0.0); });
}

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    shape_error("matmul", av, bv);
  const size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Array out({m, n});
  for (size_t i = 0; i < m; ++i)
    for (size_t p = 0; p < k; ++p) {
      const double x = av.at(i, p);
      if (x == 0.0) continue;
      for (size_t j = 0; j < n; ++j) out.at(i, j) += x * bv.at(p, j);
    }
  Tape& t = *a.tape();
  size_t ai = a.id(), bi = b.id();
  return t.emplace(std::move(out), {ai, bi}, [ai, bi](Tape& t, const Array& up) {
    const Array& av = t.value(ai);
    const Array& bv = t.value(bi);
    Array& da = t.grad_mut(ai);
    Array& db = t.grad_mut(bi);
    const size_t m = av.rows(), k = av.cols(), n = bv.cols();
    // dA += up * B^T
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) {
        const double u = up[i * n + j];
        if (u == 0.0) continue;
        for (size_t p = 0; p < k; ++p) da.at(i, p) += u * bv.at(p, j);
      }
    // dB += A^T * up
    for (size_t i = 0; i < m; ++i)
      for (size_t p = 0; p < k; ++p) {
        const double x = av.at(i, p);
        if (x == 0.0) continue;
        for (size_t j = 0; j < n; ++j) db.at(p, j) += x * up[i * n + j];
      }
  });
}

Var transpose(Var a) {
  const Array& av = a.value();
  if (av.rank() != 2)
    fail(ErrorCode::invalid_argument,
         "transpose: rank-2 required, got " + shape_str(av.shape()));
  const size_t m = av.rows(), n = av.cols();
  Array out({n, m});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  Tape& t = *a.tape();
  size_t ai = a.id();
  return t.emplace(std::move(out), {ai}, [ai, m, n](Tape& t, const Array& up) {
    Array& g = t.grad_mut(ai);
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) g.at(i, j) += up.at(j, i);
  });
}

Var sum(Var a) {
  const Array& av = a.value();
  double s = 0.0;
  for (size_t i = 0; i < av.size(); ++i) s += av[i];
  Tape& t = *a.tape();
  size_t ai = a.id();
  return t.emplace(Array::scalar(s), {ai}, [ai](Tape& t, const Array& up) {
    Array& g = t.grad_mut(ai);
    for (size_t i = 0; i < g.size(); ++i) g[i] += up[0];
  });
}

Var mean(Var a) {
  const Array& av = a.value();
  const double n = static_cast<double>(av.size());
  double s = 0.0;
  for (size_t i = 0; i < av.size(); ++i) s += av[i];
  Tape& t = *a.tape();
  size_t ai = a.id();
  return t.emplace(Array::scalar(s / n), {ai}, [ai, n](Tape& t, const Array& up) {
    Array& g = t.grad_mut(ai);
    for (size_t i = 0; i < g.size(); ++i) g[i] += up[0] / n;
  });
}

Var sum_axis(Var a, int axis) {
  const Array& av = a.value();
  if (av.rank() != 2 || (axis != 0 && axis != 1))
    fail(ErrorCode::invalid_argument, "sum_axis: rank-2 and axis 0/1 required");
  const size_t m = av.rows(), n = av.cols();
  Array out({axis == 0 ? n : m});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += av.at(i, j);
  Tape& t = *a.tape();
  size_t ai = a.id();
  return t.emplace(std::move(out), {ai}, [ai, m, n, axis](Tape& t, const Array& up) {
    Array& g = t.grad_mut(ai);
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) g.at(i, j) += up[axis == 0 ? j : i];
  });
}

Var reshape(Var a, Shape shape) {
  const Array& av = a.value();
  Array out(shape);
  if (out.size() != av.size())
    fail(ErrorCode::invalid_argument,
         "reshape: size mismatch " + shape_str(av.shape()) + " -> " +
             shape_str(shape));
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i];
  Tape& t = *a.tape();
  size_t ai = a.id();
  return t.emplace(std::move(out), {ai}, [ai](Tape& t, const Array& up) {
    Array& g = t.grad_mut(ai);
    for (size_t i = 0; i < up.size(); ++i) g[i] += up[i];
  });
}

Var gather_rows(Var m, std::vector<size_t> idx) {
  const Array& mv = m.value();
  if (mv.rank() != 2)
    fail(ErrorCode::invalid_argument, "gather_rows: rank-2 required");
  const size_t cols = mv.cols();
  Array out({idx.size(), cols});
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= mv.rows())
      fail(ErrorCode::invalid_argument, "gather_rows: index out of range");
    for (size_t j = 0; j < cols; ++j) out.at(r, j) = mv.at(idx[r], j);
  }
  Tape& t = *m.tape();
  size_t mi = m.id();
  return t.emplace(std::move(out), {mi},
                   [mi, idx = std::move(idx), cols](Tape& t, const Array& up) {
                     Array& g = t.grad_mut(mi);
                     for (size_t r = 0; r < idx.size(); ++r)
                       for (size_t j = 0; j < cols; ++j)
                         g.at(idx[r], j) += up.at(r, j);
                   });
}

Var pick(Var a, std::vector<size_t> flat_idx) {
  const Array& av = a.value();
  Array out({flat_idx.size()});
  for (size_t k = 0; k < flat_idx.size(); ++k) {
    if (flat_idx[k] >= av.size())
      fail(ErrorCode::invalid_argument, "pick: index out of range");
    out[k] = av[flat_idx[k]];
  }
  Tape& t = *a.tape();
  size_t ai = a.id();
  return t.emplace(std::move(out), {ai},
                   [ai, idx = std::move(flat_idx)](Tape& t, const Array& up) {
                     Array& g = t.grad_mut(ai);
                     for (size_t k = 0; k < idx.size(); ++k) g[idx[k]] += up[k];
                   });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::invalid_argument, "concat_rows: empty");
  Tape& t = *parts[0].tape();
  const size_t cols = parts[0].value().cols();
  size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.value().cols() != cols)
      fail(ErrorCode::invalid_argument, "concat_rows: column mismatch");
    rows += p.value().rows();
  }
  Array out({rows, cols});
  std::vector<size_t> ids;
  std::vector<size_t> offsets;
  size_t r0 = 0;
  for (const Var& p : parts) {
    ids.push_back(p.id());
    offsets.push_back(r0);
    const Array& pv = p.value();
    for (size_t i = 0; i < pv.rows(); ++i)
      for (size_t j = 0; j < cols; ++j) out.at(r0 + i, j) = pv.at(i, j);
    r0 += pv.rows();
  }
  return t.emplace(std::move(out), ids,
                   [ids, offsets, cols](Tape& t, const Array& up) {
                     for (size_t k = 0; k < ids.size(); ++k) {
                       Array& g = t.grad_mut(ids[k]);
                       for (size_t i = 0; i < g.rows(); ++i)
                         for (size_t j = 0; j < cols; ++j)
                           g.at(i, j) += up.at(offsets[k] + i, j);
                     }
                   });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::invalid_argument, "concat_cols: empty");
  Tape& t = *parts[0].tape();
  const size_t rows = parts[0].value().rows();
  size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.value().rows() != rows)
      fail(ErrorCode::invalid_argument, "concat_cols: row mismatch");
    cols += p.value().cols();
  }
  Array out({rows, cols});
  std::vector<size_t> ids;
  std::vector<size_t> offsets;
  size_t c0 = 0;
  for (const Var& p : parts) {
    ids.push_back(p.id());
    offsets.push_back(c0);
    const Array& pv = p.value();
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < pv.cols(); ++j) out.at(i, c0 + j) = pv.at(i, j);
    c0 += pv.cols();
  }
  return t.emplace(std::move(out), ids,
                   [ids, offsets, rows](Tape& t, const Array& up) {
                     for (size_t k = 0; k < ids.size(); ++k) {
                       Array& g = t.grad_mut(ids[k]);
                       for (size_t i = 0; i < rows; ++i)
                         for (size_t j = 0; j < g.cols(); ++j)
                           g.at(i, j) += up.at(i, offsets[k] + j);
                     }
                   });
}

Var stack_last(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::invalid_argument, "stack_last: empty");
  Tape& t = *parts[0].tape();
  const Array& first = parts[0].value();
  if (first.rank() != 2)
    fail(ErrorCode::invalid_argument, "stack_last: rank-2 parts required");
  const size_t m = first.rows(), n = first.cols(), L = parts.size();
  Array out({m, n, L});
  std::vector<size_t> ids;
  for (size_t l = 0; l < L; ++l) {
    const Array& pv = parts[l].value();
    if (!pv.same_shape(first))
      shape_error("stack_last", first, pv);
    ids.push_back(parts[l].id());
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) out.at(i, j, l) = pv.at(i, j);
  }
  return t.emplace(std::move(out), ids, [ids, m, n](Tape& t, const Array& up) {
    const size_t L = ids.size();
    for (size_t l = 0; l < L; ++l) {
      Array& g = t.grad_mut(ids[l]);
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) g.at(i, j) += up.at(i, j, l);
    }
  });
}

Var stack_scalars(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::invalid_argument, "stack_scalars: empty");
  Tape& t = *parts[0].tape();
  Array out({parts.size()});
  std::vector<size_t> ids;
  for (size_t i = 0; i < parts.size(); ++i) {
    out[i] = parts[i].value().item();
    ids.push_back(parts[i].id());
  }
  return t.emplace(std::move(out), ids, [ids](Tape& t, const Array& up) {
    for (size_t i = 0; i < ids.size(); ++i) t.grad_mut(ids[i])[0] += up[i];
  });
}

Var add_rowvec(Var m, Var v) {
  same_tape(m, v, "add_rowvec");
  const Array& mv = m.value();
  const Array& vv = v.value();
  if (mv.rank() != 2 || vv.rank() != 1 || vv.size() != mv.cols())
    shape_error("add_rowvec", mv, vv);
  Array out(mv.shape());
  for (size_t i = 0; i < mv.rows(); ++i)
    for (size_t j = 0; j < mv.cols(); ++j) out.at(i, j) = mv.at(i, j) + vv[j];
  Tape& t = *m.tape();
  size_t mi = m.id(), vi = v.id();
  return t.emplace(std::move(out), {mi, vi}, [mi, vi](Tape& t, const Array& up) {
    Array& gm = t.grad_mut(mi);
    Array& gv = t.grad_mut(vi);
    for (size_t i = 0; i < up.rows(); ++i)
      for (size_t j = 0; j < up.cols(); ++j) {
        gm.at(i, j) += up.at(i, j);
        gv[j] += up.at(i, j);
      }
  });
}

Var sub_colvec(Var m, Var c) {
  same_tape(m, c, "sub_colvec");
  const Array& mv = m.value();
  const Array& cv = c.value();
  if (mv.rank() != 2 || cv.rank() != 1 || cv.size() != mv.rows())
    shape_error("sub_colvec", mv, cv);
  Array out(mv.shape());
  for (size_t i = 0; i < mv.rows(); ++i)
    for (size_t j = 0; j < mv.cols(); ++j) out.at(i, j) = mv.at(i, j) - cv[i];
  Tape& t = *m.tape();
  size_t mi = m.id(), ci = c.id();
  return t.emplace(std::move(out), {mi, ci}, [mi, ci](Tape& t, const Array& up) {
    Array& gm = t.grad_mut(mi);
    Array& gc = t.grad_mut(ci);
    for (size_t i = 0; i < up.rows(); ++i)
      for (size_t j = 0; j < up.cols(); ++j) {
        gm.at(i, j) += up.at(i, j);
        gc[i] -= up.at(i, j);
      }
  });
}

namespace {

// Interprets any array as [outer x k] with k the last axis extent.
void last_axis_view(const Array& a, size_t& outer, size_t& k) {
  if (a.rank() == 0)
    fail(ErrorCode::invalid_argument, "softmax family: rank >= 1 required");
  k = a.shape().back();
  outer = a.size() / k;
}

constexpr double kMaskedLogProb = -1e300;

}  // namespace

Var softmax(Var a) {
  const Array& av = a.value();
  size_t outer, k;
  last_axis_view(av, outer, k);
  Array out(av.shape());
  for (size_t r = 0; r < outer; ++r) {
    const double* x = av.data() + r * k;
    double* y = out.data() + r * k;
    double mx = x[0];
    for (size_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (size_t j = 0; j < k; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (size_t j = 0; j < k; ++j) y[j] /= z;
  }
  Tape& t = *a.tape();
  size_t ai = a.id();
  Array cached = out;
  return t.emplace(std::move(out), {ai},
                   [ai, outer, k, yv = std::move(cached)](Tape& t, const Array& up) {
                     Array& g = t.grad_mut(ai);
                     for (size_t r = 0; r < outer; ++r) {
                       const double* y = yv.data() + r * k;
                       const double* u = up.data() + r * k;
                       double dot = 0.0;
                       for (size_t j = 0; j < k; ++j) dot += u[j] * y[j];
                       for (size_t j = 0; j < k; ++j)
                         g[r * k + j] += y[j] * (u[j] - dot);
                     }
                   });
}

Var log_softmax(Var a) {
  const Array& av = a.value();
  size_t outer, k;
  last_axis_view(av, outer, k);
  Array out(av.shape());
  for (size_t r = 0; r < outer; ++r) {
    const double* x = av.data() + r * k;
    double* y = out.data() + r * k;
    double mx = x[0];
    for (size_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (size_t j = 0; j < k; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (size_t j = 0; j < k; ++j) y[j] = x[j] - lse;
  }
  Tape& t = *a.tape();
  size_t ai = a.id();
  Array cached = out;
  return t.emplace(std::move(out), {ai},
                   [ai, outer, k, yv = std::move(cached)](Tape& t, const Array& up) {
                     Array& g = t.grad_mut(ai);
                     for (size_t r = 0; r < outer; ++r) {
                       const double* y = yv.data() + r * k;
                       const double* u = up.data() + r * k;
                       double usum = 0.0;
                       for (size_t j = 0; j < k; ++j) usum += u[j];
                       for (size_t j = 0; j < k; ++j)
                         g[r * k + j] += u[j] - std::exp(y[j]) * usum;
                     }
                   });
}

Var logsumexp(Var a) {
  const Array& av = a.value();
  size_t outer, k;
  last_axis_view(av, outer, k);
  Shape out_shape(av.shape().begin(), av.shape().end() - 1);
  Array out(out_shape);
  for (size_t r = 0; r < outer; ++r) {
    const double* x = av.data() + r * k;
    double mx = x[0];
    for (size_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (size_t j = 0; j < k; ++j) z += std::exp(x[j] - mx);
    out[r] = mx + std::log(z);
  }
  Tape& t = *a.tape();
  size_t ai = a.id();
  return t.emplace(std::move(out), {ai}, [ai, outer, k](Tape& t, const Array& up) {
    const Array& av = t.value(ai);
    Array& g = t.grad_mut(ai);
    for (size_t r = 0; r < outer; ++r) {
      const double* x = av.data() + r * k;
      double mx = x[0];
      for (size_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
      double z = 0.0;
      for (size_t j = 0; j < k; ++j) z += std::exp(x[j] - mx);
      for (size_t j = 0; j < k; ++j)
        g[r * k + j] += up[r] * std::exp(x[j] - mx) / z;
    }
  });
}

namespace {

void check_mask(const Array& av, const Array& mask, const char* op) {
  if (!av.same_shape(mask)) shape_error(op, av, mask);
  size_t outer, k;
  last_axis_view(av, outer, k);
  for (size_t r = 0; r < outer; ++r) {
    bool any = false;
    for (size_t j = 0; j < k; ++j)
      if (mask[r * k + j] != 0.0) any = true;
    if (!any)
      fail(ErrorCode::invalid_argument,
           std::string(op) + ": fully masked row " + std::to_string(r));
  }
}

}  // namespace

Var masked_softmax(Var a, const Array& mask) {
  const Array& av = a.value();
  check_mask(av, mask, "masked_softmax");
  size_t outer, k;
  last_axis_view(av, outer, k);
  Array out(av.shape());
  for (size_t r = 0; r < outer; ++r) {
    const double* x = av.data() + r * k;
    const double* m = mask.data() + r * k;
    double* y = out.data() + r * k;
    double mx = -HUGE_VAL;
    for (size_t j = 0; j < k; ++j)
      if (m[j] != 0.0) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (size_t j = 0; j < k; ++j)
      z += (y[j] = (m[j] != 0.0 ? std::exp(x[j] - mx) : 0.0));
    for (size_t j = 0; j < k; ++j) y[j] /= z;
  }
  Tape& t = *a.tape();
  size_t ai = a.id();
  Array cached = out;
  return t.emplace(std::move(out), {ai},
                   [ai, outer, k, yv = std::move(cached)](Tape& t, const Array& up) {
                     Array& g = t.grad_mut(ai);
                     for (size_t r = 0; r < outer; ++r) {
                       const double* y = yv.data() + r * k;
                       const double* u = up.data() + r * k;
                       double dot = 0.0;
                       for (size_t j = 0; j < k; ++j) dot += u[j] * y[j];
                       for (size_t j = 0; j < k; ++j)
                         g[r * k + j] += y[j] * (u[j] - dot);
                     }
                   });
}

Var masked_log_softmax(Var a, const Array& mask) {
  const Array& av = a.value();
  check_mask(av, mask, "masked_log_softmax");
  size_t outer, k;
  last_axis_view(av, outer, k);
  Array out(av.shape());
  Array probs(av.shape());
  for (size_t r = 0; r < outer; ++r) {
    const double* x = av.data() + r * k;
    const double* m = mask.data() + r * k;
    double* y = out.data() + r * k;
    double* p = probs.data() + r * k;
    double mx = -HUGE_VAL;
    for (size_t j = 0; j < k; ++j)
      if (m[j] != 0.0) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (size_t j = 0; j < k; ++j)
      if (m[j] != 0.0) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (size_t j = 0; j < k; ++j) {
      if (m[j] != 0.0) {
        y[j] = x[j] - lse;
        p[j] = std::exp(y[j]);
      } else {
        y[j] = kMaskedLogProb;
        p[j] = 0.0;
      }
    }
  }
  Tape& t = *a.tape();
  size_t ai = a.id();
  Array mask_copy = mask;
  return t.emplace(std::move(out), {ai},
                   [ai, outer, k, pv = std::move(probs),
                    mask = std::move(mask_copy)](Tape& t, const Array& up) {
                     Array& g = t.grad_mut(ai);
                     for (size_t r = 0; r < outer; ++r) {
                       const double* p = pv.data() + r * k;
                       const double* u = up.data() + r * k;
                       const double* m = mask.data() + r * k;
                       double usum = 0.0;
                       for (size_t j = 0; j < k; ++j)
                         if (m[j] != 0.0) usum += u[j];
                       for (size_t j = 0; j < k; ++j)
                         if (m[j] != 0.0) g[r * k + j] += u[j] - p[j] * usum;
                     }
                   });
}

Var custom(Tape& tape, Array value, std::vector<Var> parents,
           Tape::BackwardFn backward) {
  std::vector<size_t> ids;
  ids.reserve(parents.size());
  for (const Var& p : parents) {
    if (p.tape() != &tape)
      fail(ErrorCode::invalid_argument, "custom: parent from another tape");
    ids.push_back(p.id());
  }
  return tape.emplace(std::move(value), std::move(ids), std::move(backward));
}

double grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& fn,
    const std::vector<Array>& point, double h) {
  // analytic gradients
  Tape t;
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const Array& a : point) leaves.push_back(t.leaf(a));
  Var y = fn(t, leaves);
  if (!y.value().all_finite())
    fail(ErrorCode::numeric, "grad_check: non-finite function value");
  t.backward(y);
  std::vector<Array> analytic;
  analytic.reserve(point.size());
  for (const Var& l : leaves) analytic.push_back(l.grad());

  auto eval = [&](const std::vector<Array>& pt) {
    Tape tt;
    std::vector<Var> ls;
    for (const Array& a : pt) ls.push_back(tt.leaf(a));
    Var yy = fn(tt, ls);
    const double v = yy.value().item();
    if (!std::isfinite(v))
      fail(ErrorCode::numeric, "grad_check: non-finite function value");
    return v;
  };

  double max_rel = 0.0;
  std::vector<Array> pt = point;
  for (size_t p = 0; p < point.size(); ++p) {
    for (size_t i = 0; i < point[p].size(); ++i) {
      const double orig = pt[p][i];
      pt[p][i] = orig + h;
      const double fp = eval(pt);
      pt[p][i] = orig - h;
      const double fm = eval(pt);
      pt[p][i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[p][i];
      const double rel =
          std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace esr::ad
