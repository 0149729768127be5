#include "esr/treemath.hpp"

#include <cmath>

namespace esr::treemath {

namespace {

// LU with partial pivoting; returns log|det| and sign, and optionally the
// inverse via Gauss-Jordan on the factorization.
struct LuResult {
  double logdet = 0.0;
  int sign = 1;
  Array inverse;
};

LuResult lu_invert(Array a) {
  const size_t n = a.rows();
  Array inv({n, n});
  for (size_t i = 0; i < n; ++i) inv.at(i, i) = 1.0;
  LuResult res;
  for (size_t col = 0; col < n; ++col) {
    size_t piv = col;
    double best = std::fabs(a.at(col, col));
    for (size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a.at(r, col)) > best) {
        best = std::fabs(a.at(r, col));
        piv = r;
      }
    }
    if (best == 0.0 || !std::isfinite(best))
      fail(ErrorCode::numeric,
           "matrix-tree: numerically singular Laplacian (degenerate weights)");
    if (piv != col) {
      for (size_t j = 0; j < n; ++j) {
        std::swap(a.at(piv, j), a.at(col, j));
        std::swap(inv.at(piv, j), inv.at(col, j));
      }
      res.sign = -res.sign;
    }
    const double d = a.at(col, col);
    res.logdet += std::log(std::fabs(d));
    if (d < 0.0) res.sign = -res.sign;
    const double dinv = 1.0 / d;
    for (size_t j = 0; j < n; ++j) {
      a.at(col, j) *= dinv;
      inv.at(col, j) *= dinv;
    }
    for (size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a.at(r, col);
      if (f == 0.0) continue;
      for (size_t j = 0; j < n; ++j) {
        a.at(r, j) -= f * a.at(col, j);
        inv.at(r, j) -= f * inv.at(col, j);
      }
    }
  }
  res.inverse = std::move(inv);
  return res;
}

// Root-augmented Laplacian: row 0 holds the root weights, remaining entries
// follow the column-sum Laplacian of the inner weights.
Array build_laplacian(const ArcWeights& aw) {
  const size_t n = aw.n;
  Array L({n, n});
  for (size_t m = 0; m < n; ++m) {
    L.at(0, m) = aw.root[m];
    for (size_t h = 0; h < n; ++h) {
      if (h == m) continue;
      if (h != 0) L.at(h, m) = -aw.inner.at(h, m);
      if (m != 0) L.at(m, m) += aw.inner.at(h, m);
    }
  }
  return L;
}

bool laplacian_usable(const ArcWeights& aw) {
  try {
    LuResult lu = lu_invert(build_laplacian(aw));
    return lu.sign > 0 && std::isfinite(lu.logdet);
  } catch (const Error&) {
    return false;
  }
}

void check_scores_shape(const Array& scores) {
  if (scores.rank() != 2 || scores.cols() != scores.rows() + 1)
    fail(ErrorCode::invalid_argument,
         "tree scores must be [n][n+1], got " + shape_str(scores.shape()));
  if (scores.rows() < 1)
    fail(ErrorCode::invalid_argument, "tree scores need n >= 1");
}

}  // namespace

ArcWeights ArcWeights::from_scores(const Array& scores) {
  check_scores_shape(scores);
  const size_t n = scores.rows();
  ArcWeights aw;
  aw.n = n;
  aw.shift.assign(n, 0.0);
  aw.root.assign(n, 0.0);
  aw.inner = Array({n, n});
  for (size_t i = 0; i < n; ++i) {
    double mx = -HUGE_VAL;
    for (size_t j = 0; j <= n; ++j)
      if (j != i + 1) mx = std::max(mx, scores.at(i, j));
    aw.shift[i] = mx;
    // the -40 clamp keeps extreme score gaps from underflowing whole
    // Laplacian columns to zero
    aw.root[i] = std::exp(std::max(scores.at(i, 0) - mx, -40.0));
    for (size_t j = 1; j <= n; ++j) {
      if (j == i + 1) continue;
      aw.inner.at(j - 1, i) = std::exp(std::max(scores.at(i, j) - mx, -40.0));
    }
  }
  return aw;
}

ArcWeights ArcWeights::from_weights(size_t n, const std::vector<double>& root,
                                    const Array& inner) {
  if (root.size() != n || inner.rank() != 2 || inner.rows() != n ||
      inner.cols() != n)
    fail(ErrorCode::invalid_argument, "ArcWeights::from_weights: bad shapes");
  for (double w : root)
    if (!(w > 0.0) || !std::isfinite(w))
      fail(ErrorCode::invalid_argument, "arc weights must be finite and > 0");
  for (size_t h = 0; h < n; ++h)
    for (size_t m = 0; m < n; ++m)
      if (h != m && (!(inner.at(h, m) > 0.0) || !std::isfinite(inner.at(h, m))))
        fail(ErrorCode::invalid_argument, "arc weights must be finite and > 0");
  ArcWeights aw;
  aw.n = n;
  aw.shift.assign(n, 0.0);
  aw.root = root;
  aw.inner = inner;
  return aw;
}

double log_partition(const ArcWeights& aw) {
  LuResult lu = lu_invert(build_laplacian(aw));
  if (lu.sign <= 0)
    fail(ErrorCode::numeric, "matrix-tree: nonpositive determinant");
  double total_shift = 0.0;
  for (double s : aw.shift) total_shift += s;
  return lu.logdet + total_shift;
}

namespace {

// marginals from the Laplacian inverse B:
//   mu(0 -> m+1)   = r[m] * B[m][0]
//   mu(h+1 -> m+1) = w[h][m] * (B[m][m]*[m!=0] - B[m][h]*[h!=0])
Array marginals_from_inverse(const ArcWeights& aw, const Array& B) {
  const size_t n = aw.n;
  Array mu({n, n + 1});
  for (size_t m = 0; m < n; ++m) {
    mu.at(m, 0) = aw.root[m] * B.at(m, 0);
    for (size_t h = 0; h < n; ++h) {
      if (h == m) continue;
      double g = 0.0;
      if (m != 0) g += B.at(m, m);
      if (h != 0) g -= B.at(m, h);
      mu.at(m, h + 1) = aw.inner.at(h, m) * g;
    }
  }
  return mu;
}

}  // namespace

Array edge_marginals(const ArcWeights& aw) {
  LuResult lu = lu_invert(build_laplacian(aw));
  return marginals_from_inverse(aw, lu.inverse);
}

double tree_entropy(const ArcWeights& aw) {
  // a distribution collapsed beyond double range carries zero entropy
  if (!laplacian_usable(aw)) return 0.0;
  LuResult lu = lu_invert(build_laplacian(aw));
  double total_shift = 0.0;
  for (double s : aw.shift) total_shift += s;
  const double log_z = lu.logdet + total_shift;
  Array mu = marginals_from_inverse(aw, lu.inverse);
  const size_t n = aw.n;
  double expected_score = 0.0;
  for (size_t m = 0; m < n; ++m) {
    if (aw.root[m] > 0.0)
      expected_score += mu.at(m, 0) * (std::log(aw.root[m]) + aw.shift[m]);
    for (size_t h = 0; h < n; ++h) {
      if (h == m) continue;
      if (aw.inner.at(h, m) > 0.0)
        expected_score +=
            mu.at(m, h + 1) * (std::log(aw.inner.at(h, m)) + aw.shift[m]);
    }
  }
  // clamp rounding noise on collapsed distributions
  return std::max(0.0, log_z - expected_score);
}

ad::Var log_partition_node(ad::Var scores) {
  const Array& sv = scores.value();
  check_scores_shape(sv);
  ArcWeights aw = ArcWeights::from_scores(sv);
  LuResult lu = lu_invert(build_laplacian(aw));
  if (lu.sign <= 0)
    fail(ErrorCode::numeric, "matrix-tree: nonpositive determinant");
  double total_shift = 0.0;
  for (double s : aw.shift) total_shift += s;
  const double log_z = lu.logdet + total_shift;
  Array mu = marginals_from_inverse(aw, lu.inverse);
  size_t si = scores.id();
  return ad::custom(*scores.tape(), Array::scalar(log_z), {scores},
                    [si, mu = std::move(mu)](ad::Tape& t, const Array& up) {
                      Array& g = t.grad_mut(si);
                      for (size_t k = 0; k < g.size(); ++k)
                        g[k] += up[0] * mu[k];
                    });
}

ad::Var edge_marginals_node(ad::Var scores) {
  const Array& sv = scores.value();
  check_scores_shape(sv);
  const size_t n = sv.rows();
  ArcWeights aw = ArcWeights::from_scores(sv);
  LuResult lu = lu_invert(build_laplacian(aw));
  Array B = lu.inverse;
  Array mu = marginals_from_inverse(aw, B);
  size_t si = scores.id();
  Array mu_out = mu;
  // Backward: d(sum U.mu)/ds. With K = B^T W B^T where W collects the
  // upstream-weighted sensitivities of mu to the inverse entries,
  //   V_root(m)  = U mu - r_m K[0][m]
  //   V_inner(h,m) = U mu - w_hm (K[m][m]*[m!=0] - K[h][m]*[h!=0])
  return ad::custom(
      *scores.tape(), std::move(mu_out), {scores},
      [si, n, aw = std::move(aw), B = std::move(B),
       mu = std::move(mu)](ad::Tape& t, const Array& up) {
        Array W({n, n});
        for (size_t m = 0; m < n; ++m) {
          W.at(m, 0) += up.at(m, 0) * aw.root[m];
          for (size_t h = 0; h < n; ++h) {
            if (h == m) continue;
            const double c = up.at(m, h + 1) * aw.inner.at(h, m);
            if (m != 0) W.at(m, m) += c;
            if (h != 0) W.at(m, h) -= c;
          }
        }
        // K = B^T W B^T
        Array BtW({n, n});
        for (size_t p = 0; p < n; ++p)
          for (size_t i = 0; i < n; ++i) {
            const double b = B.at(i, p);
            if (b == 0.0) continue;
            for (size_t j = 0; j < n; ++j) BtW.at(p, j) += b * W.at(i, j);
          }
        Array K({n, n});
        for (size_t p = 0; p < n; ++p)
          for (size_t j = 0; j < n; ++j) {
            const double b = BtW.at(p, j);
            if (b == 0.0) continue;
            for (size_t q = 0; q < n; ++q) K.at(p, q) += b * B.at(q, j);
          }
        Array& g = t.grad_mut(si);
        for (size_t m = 0; m < n; ++m) {
          g.at(m, 0) += up.at(m, 0) * mu.at(m, 0) - aw.root[m] * K.at(0, m);
          for (size_t h = 0; h < n; ++h) {
            if (h == m) continue;
            double dk = 0.0;
            if (m != 0) dk += K.at(m, m);
            if (h != 0) dk -= K.at(h, m);
            g.at(m, h + 1) +=
                up.at(m, h + 1) * mu.at(m, h + 1) - aw.inner.at(h, m) * dk;
          }
        }
      });
}

ad::Var tree_entropy_node(ad::Var scores) {
  const Array& sv = scores.value();
  check_scores_shape(sv);
  if (!laplacian_usable(ArcWeights::from_scores(sv)))
    return scores.tape()->constant(0.0);  // collapsed: zero entropy, no grad
  const size_t n = sv.rows();
  Array mask({n, n + 1}, 1.0);
  for (size_t i = 0; i < n; ++i) mask.at(i, i + 1) = 0.0;
  ad::Tape& t = *scores.tape();
  ad::Var self_mask = t.constant(mask);
  ad::Var log_z = log_partition_node(scores);
  ad::Var mu = edge_marginals_node(scores);
  ad::Var masked_scores = ad::mul(scores, self_mask);
  return ad::sub(log_z, ad::sum(ad::mul(mu, masked_scores)));
}

}  // namespace esr::treemath
