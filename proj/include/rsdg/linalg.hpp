#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "rsdg/error.hpp"
#include "rsdg/rng.hpp"

namespace rsdg {

struct SquareMatrix {
  int n = 0;
  std::vector<double> a;  // row-major n x n

  SquareMatrix() = default;
  explicit SquareMatrix(int dim) : n(dim), a(static_cast<std::size_t>(dim) * dim, 0.0) {
    require(dim >= 1, "matrix dimension must be >= 1");
  }
  SquareMatrix(int dim, std::vector<double> values) : n(dim), a(std::move(values)) {
    require(dim >= 1, "matrix dimension must be >= 1");
    require(a.size() == static_cast<std::size_t>(dim) * dim, "matrix storage size mismatch");
  }

  double& at(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }

  static SquareMatrix identity(int dim) {
    SquareMatrix m(dim);
    for (int i = 0; i < dim; ++i) m.at(i, i) = 1.0;
    return m;
  }

  bool finite() const {
    for (double v : a)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline double frobenius_norm(const SquareMatrix& m) {
  double s = 0.0;
  for (double v : m.a) s += v * v;
  return std::sqrt(s);
}

inline double frobenius_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline SquareMatrix matmul(const SquareMatrix& x, const SquareMatrix& y) {
  require(x.n == y.n, "matmul: dimension mismatch");
  SquareMatrix out(x.n);
  for (int i = 0; i < x.n; ++i)
    for (int k = 0; k < x.n; ++k) {
      const double xv = x.at(i, k);
      if (xv == 0.0) continue;
      for (int j = 0; j < x.n; ++j) out.at(i, j) += xv * y.at(k, j);
    }
  return out;
}

inline SquareMatrix transpose(const SquareMatrix& m) {
  SquareMatrix out(m.n);
  for (int i = 0; i < m.n; ++i)
    for (int j = 0; j < m.n; ++j) out.at(j, i) = m.at(i, j);
  return out;
}

// Real Schur factorization A = Q T Q^T with orthogonal Q and quasi-upper-
// triangular T (2x2 diagonal blocks only for complex conjugate pairs).
struct SchurForm {
  SquareMatrix q;
  SquareMatrix t;
};

// Eigenvalues sorted by descending magnitude, ties by descending real part,
// then descending imaginary part (keeps conjugate pairs adjacent).
struct EigenSpectrum {
  std::vector<std::complex<double>> values;
};

inline bool eigen_order(const std::complex<double>& x, const std::complex<double>& y) {
  const double ax = std::abs(x), ay = std::abs(y);
  if (ax != ay) return ax > ay;
  if (x.real() != y.real()) return x.real() > y.real();
  return x.imag() > y.imag();
}

namespace detail {

// Householder reduction to upper Hessenberg form, accumulating the
// orthogonal transform into q. Classic EISPACK ortran/orthes scheme.
inline void hessenberg(SquareMatrix& h, SquareMatrix& q) {
  const int n = h.n;
  std::vector<double> ort(static_cast<std::size_t>(n), 0.0);
  const int low = 0, high = n - 1;

  for (int m = low + 1; m <= high - 1; ++m) {
    double scale = 0.0;
    for (int i = m; i <= high; ++i) scale += std::abs(h.at(i, m - 1));
    if (scale == 0.0) continue;

    double hsum = 0.0;
    for (int i = high; i >= m; --i) {
      ort[i] = h.at(i, m - 1) / scale;
      hsum += ort[i] * ort[i];
    }
    double g = std::sqrt(hsum);
    if (ort[m] > 0) g = -g;
    hsum -= ort[m] * g;
    ort[m] -= g;

    for (int j = m; j < n; ++j) {
      double f = 0.0;
      for (int i = high; i >= m; --i) f += ort[i] * h.at(i, j);
      f /= hsum;
      for (int i = m; i <= high; ++i) h.at(i, j) -= f * ort[i];
    }
    for (int i = 0; i <= high; ++i) {
      double f = 0.0;
      for (int j = high; j >= m; --j) f += ort[j] * h.at(i, j);
      f /= hsum;
      for (int j = m; j <= high; ++j) h.at(i, j) -= f * ort[j];
    }

    // Fold this reflector into the accumulated transform while ort is still
    // consistent with the weight hsum.
    for (int j = low; j <= high; ++j) {
      double f = 0.0;
      for (int i = m; i <= high; ++i) f += ort[i] * q.at(i, j);
      f /= hsum;
      for (int i = m; i <= high; ++i) q.at(i, j) -= f * ort[i];
    }

    ort[m] *= scale;
    h.at(m, m - 1) = scale * g;
  }
}

}  // namespace detail

// Shifted-QR real Schur decomposition (Hessenberg reduction followed by the
// Francis double-shift iteration). max_iters caps the total number of QR
// sweeps; non-convergence raises an Error carrying the sweep count.
inline SchurForm schur_decompose(const SquareMatrix& m, int max_iters = 0, double tol = 1e-14) {
  require(m.n >= 1, "empty matrix");
  require(m.finite(), "matrix entries must be finite");
  const int nn = m.n;
  if (max_iters <= 0) max_iters = 60 * nn + 200;

  SquareMatrix h = m;
  SquareMatrix q = SquareMatrix::identity(nn);
  if (nn >= 3) detail::hessenberg(h, q);
  // hessenberg() accumulates reflectors acting on the left; transpose to get
  // the similarity transform with A = Q H Q^T.
  q = transpose(q);

  std::vector<double> wr(static_cast<std::size_t>(nn), 0.0);
  std::vector<double> wi(static_cast<std::size_t>(nn), 0.0);

  int n = nn - 1;
  const int low = 0, high = nn - 1;
  double exshift = 0.0;
  double p = 0, qq = 0, r = 0, s = 0, z = 0, w, x, y;
  int iter = 0;
  int sweeps = 0;

  double norm = 0.0;
  for (int i = 0; i < nn; ++i)
    for (int j = std::max(i - 1, 0); j < nn; ++j) norm += std::abs(h.at(i, j));
  if (norm == 0.0) norm = 1.0;

  while (n >= low) {
    int l = n;
    while (l > low) {
      s = std::abs(h.at(l - 1, l - 1)) + std::abs(h.at(l, l));
      if (s == 0.0) s = norm;
      if (std::abs(h.at(l, l - 1)) < tol * s) break;
      --l;
    }

    if (l == n) {
      // One real root.
      h.at(n, n) += exshift;
      wr[n] = h.at(n, n);
      wi[n] = 0.0;
      if (n > low) h.at(n, n - 1) = 0.0;
      --n;
      iter = 0;
    } else if (l == n - 1) {
      // A 2x2 block converged.
      w = h.at(n, n - 1) * h.at(n - 1, n);
      p = (h.at(n - 1, n - 1) - h.at(n, n)) / 2.0;
      qq = p * p + w;
      z = std::sqrt(std::abs(qq));
      h.at(n, n) += exshift;
      h.at(n - 1, n - 1) += exshift;
      x = h.at(n, n);

      if (qq >= 0) {
        // Real pair: rotate the block into upper triangular form.
        z = (p >= 0) ? p + z : p - z;
        wr[n - 1] = x + z;
        wr[n] = (z != 0.0) ? x - w / z : wr[n - 1];
        wi[n - 1] = 0.0;
        wi[n] = 0.0;
        x = h.at(n, n - 1);
        s = std::abs(x) + std::abs(z);
        p = x / s;
        qq = z / s;
        r = std::sqrt(p * p + qq * qq);
        p /= r;
        qq /= r;
        for (int j = n - 1; j < nn; ++j) {
          z = h.at(n - 1, j);
          h.at(n - 1, j) = qq * z + p * h.at(n, j);
          h.at(n, j) = qq * h.at(n, j) - p * z;
        }
        for (int i = 0; i <= n; ++i) {
          z = h.at(i, n - 1);
          h.at(i, n - 1) = qq * z + p * h.at(i, n);
          h.at(i, n) = qq * h.at(i, n) - p * z;
        }
        for (int i = low; i <= high; ++i) {
          z = q.at(i, n - 1);
          q.at(i, n - 1) = qq * z + p * q.at(i, n);
          q.at(i, n) = qq * q.at(i, n) - p * z;
        }
        h.at(n, n - 1) = 0.0;
      } else {
        // Complex pair: the 2x2 block stays.
        wr[n - 1] = x + p;
        wr[n] = x + p;
        wi[n - 1] = z;
        wi[n] = -z;
      }
      if (n - 1 > low) h.at(n - 1, n - 2) = 0.0;
      n -= 2;
      iter = 0;
    } else {
      // No convergence yet: one Francis double-shift sweep.
      if (++sweeps > max_iters)
        throw Error("schur_decompose did not converge within " + std::to_string(max_iters) +
                    " iterations");
      x = h.at(n, n);
      y = 0.0;
      w = 0.0;
      if (l < n) {
        y = h.at(n - 1, n - 1);
        w = h.at(n, n - 1) * h.at(n - 1, n);
      }

      if (iter == 10) {
        // Exceptional shift.
        exshift += x;
        for (int i = low; i <= n; ++i) h.at(i, i) -= x;
        s = std::abs(h.at(n, n - 1)) + std::abs(h.at(n - 1, n - 2));
        x = y = 0.75 * s;
        w = -0.4375 * s * s;
      }
      if (iter == 30) {
        s = (y - x) / 2.0;
        s = s * s + w;
        if (s > 0) {
          s = std::sqrt(s);
          if (y < x) s = -s;
          s = x - w / ((y - x) / 2.0 + s);
          for (int i = low; i <= n; ++i) h.at(i, i) -= s;
          exshift += s;
          x = y = w = 0.964;
        }
      }
      ++iter;

      int mm = n - 2;
      while (mm >= l) {
        z = h.at(mm, mm);
        r = x - z;
        s = y - z;
        p = (r * s - w) / h.at(mm + 1, mm) + h.at(mm, mm + 1);
        qq = h.at(mm + 1, mm + 1) - z - r - s;
        r = h.at(mm + 2, mm + 1);
        s = std::abs(p) + std::abs(qq) + std::abs(r);
        p /= s;
        qq /= s;
        r /= s;
        if (mm == l) break;
        if (std::abs(h.at(mm, mm - 1)) * (std::abs(qq) + std::abs(r)) <
            tol * (std::abs(p) *
                   (std::abs(h.at(mm - 1, mm - 1)) + std::abs(z) + std::abs(h.at(mm + 1, mm + 1)))))
          break;
        --mm;
      }
      for (int i = mm + 2; i <= n; ++i) {
        h.at(i, i - 2) = 0.0;
        if (i > mm + 2) h.at(i, i - 3) = 0.0;
      }

      for (int k = mm; k <= n - 1; ++k) {
        const bool notlast = (k != n - 1);
        if (k != mm) {
          p = h.at(k, k - 1);
          qq = h.at(k + 1, k - 1);
          r = notlast ? h.at(k + 2, k - 1) : 0.0;
          x = std::abs(p) + std::abs(qq) + std::abs(r);
          if (x != 0.0) {
            p /= x;
            qq /= x;
            r /= x;
          }
        }
        if (x == 0.0) break;
        s = std::sqrt(p * p + qq * qq + r * r);
        if (p < 0) s = -s;
        if (s == 0.0) continue;
        if (k != mm)
          h.at(k, k - 1) = -s * x;
        else if (l != mm)
          h.at(k, k - 1) = -h.at(k, k - 1);
        p += s;
        x = p / s;
        y = qq / s;
        z = r / s;
        qq /= p;
        r /= p;

        for (int j = k; j < nn; ++j) {
          p = h.at(k, j) + qq * h.at(k + 1, j);
          if (notlast) {
            p += r * h.at(k + 2, j);
            h.at(k + 2, j) -= p * z;
          }
          h.at(k, j) -= p * x;
          h.at(k + 1, j) -= p * y;
        }
        for (int i = 0; i <= std::min(n, k + 3); ++i) {
          p = x * h.at(i, k) + y * h.at(i, k + 1);
          if (notlast) {
            p += z * h.at(i, k + 2);
            h.at(i, k + 2) -= p * r;
          }
          h.at(i, k) -= p;
          h.at(i, k + 1) -= p * qq;
        }
        for (int i = low; i <= high; ++i) {
          p = x * q.at(i, k) + y * q.at(i, k + 1);
          if (notlast) {
            p += z * q.at(i, k + 2);
            q.at(i, k + 2) -= p * r;
          }
          q.at(i, k) -= p;
          q.at(i, k + 1) -= p * qq;
        }
      }
    }
  }

  // Zero the strict lower triangle except converged complex 2x2 blocks.
  for (int j = 0; j < nn; ++j)
    for (int i = j + 2; i < nn; ++i) h.at(i, j) = 0.0;
  for (int i = 0; i + 1 < nn; ++i)
    if (!(wi[i] != 0.0 && wi[i + 1] == -wi[i] && wi[i] > 0.0)) {
      if (wi[i] == 0.0) h.at(i + 1, i) = 0.0;
    }

  return SchurForm{std::move(q), std::move(h)};
}

// Reads eigenvalues off the quasi-triangular factor: 1x1 blocks are real
// roots, 2x2 blocks hold conjugate pairs.
inline EigenSpectrum eigenvalues_of_schur(const SquareMatrix& t) {
  EigenSpectrum spec;
  const int n = t.n;
  int i = 0;
  while (i < n) {
    if (i + 1 < n && t.at(i + 1, i) != 0.0) {
      const double a = t.at(i, i), b = t.at(i, i + 1);
      const double c = t.at(i + 1, i), d = t.at(i + 1, i + 1);
      const double re = (a + d) / 2.0;
      const double disc = (a - d) * (a - d) / 4.0 + b * c;
      if (disc < 0.0) {
        const double im = std::sqrt(-disc);
        spec.values.emplace_back(re, im);
        spec.values.emplace_back(re, -im);
      } else {
        const double rt = std::sqrt(disc);
        spec.values.emplace_back(re + rt, 0.0);
        spec.values.emplace_back(re - rt, 0.0);
      }
      i += 2;
    } else {
      spec.values.emplace_back(t.at(i, i), 0.0);
      ++i;
    }
  }
  std::sort(spec.values.begin(), spec.values.end(), eigen_order);
  return spec;
}

inline EigenSpectrum eigenvalues(const SquareMatrix& m, int max_iters = 0, double tol = 1e-14) {
  return eigenvalues_of_schur(schur_decompose(m, max_iters, tol).t);
}

namespace detail {

using Cplx = std::complex<double>;

// Complex LU solve with partial pivoting; solves in place.
struct ComplexLu {
  int n = 0;
  std::vector<Cplx> lu;
  std::vector<int> piv;
  bool singular = false;

  explicit ComplexLu(std::vector<Cplx> a, int dim) : n(dim), lu(std::move(a)), piv(dim) {
    for (int i = 0; i < n; ++i) piv[i] = i;
    for (int col = 0; col < n; ++col) {
      int best = col;
      double best_mag = std::abs(lu[static_cast<std::size_t>(col) * n + col]);
      for (int i = col + 1; i < n; ++i) {
        const double mag = std::abs(lu[static_cast<std::size_t>(i) * n + col]);
        if (mag > best_mag) {
          best = i;
          best_mag = mag;
        }
      }
      if (best_mag < 1e-300) {
        singular = true;
        return;
      }
      if (best != col) {
        for (int j = 0; j < n; ++j)
          std::swap(lu[static_cast<std::size_t>(best) * n + j],
                    lu[static_cast<std::size_t>(col) * n + j]);
        std::swap(piv[best], piv[col]);
      }
      const Cplx pivot = lu[static_cast<std::size_t>(col) * n + col];
      for (int i = col + 1; i < n; ++i) {
        Cplx& f = lu[static_cast<std::size_t>(i) * n + col];
        f /= pivot;
        for (int j = col + 1; j < n; ++j)
          lu[static_cast<std::size_t>(i) * n + j] -= f * lu[static_cast<std::size_t>(col) * n + j];
      }
    }
  }

  std::vector<Cplx> solve(const std::vector<Cplx>& b) const {
    std::vector<Cplx> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) x[i] = b[piv[i]];
    for (int i = 1; i < n; ++i)
      for (int j = 0; j < i; ++j) x[i] -= lu[static_cast<std::size_t>(i) * n + j] * x[j];
    for (int i = n - 1; i >= 0; --i) {
      for (int j = i + 1; j < n; ++j) x[i] -= lu[static_cast<std::size_t>(i) * n + j] * x[j];
      x[i] /= lu[static_cast<std::size_t>(i) * n + i];
    }
    return x;
  }
};

inline double vec2_norm(const std::vector<Cplx>& v) {
  double s = 0.0;
  for (const Cplx& x : v) s += std::norm(x);
  return std::sqrt(s);
}

// Eigenvector for a given eigenvalue via shifted inverse iteration.
inline std::vector<Cplx> inverse_iteration_vector(const SquareMatrix& m, Cplx lambda, int col) {
  const int n = m.n;
  const double jit = 1e-10 * (1.0 + std::abs(lambda));
  std::vector<Cplx> shifted(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      shifted[static_cast<std::size_t>(i) * n + j] =
          Cplx(m.at(i, j), 0.0) - ((i == j) ? lambda + Cplx(jit, jit) : Cplx(0.0, 0.0));
  ComplexLu lu(std::move(shifted), n);

  Rng rng(mix_seed(0xe16e, static_cast<std::uint64_t>(col)));
  std::vector<Cplx> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = {rng.normal(), rng.normal()};
  double nv = vec2_norm(v);
  for (auto& x : v) x /= nv;

  for (int it = 0; it < 3 && !lu.singular; ++it) {
    std::vector<Cplx> next = lu.solve(v);
    const double nn2 = vec2_norm(next);
    if (!(nn2 > 0.0) || !std::isfinite(nn2)) break;
    for (auto& x : next) x /= nn2;
    v = std::move(next);
  }
  return v;
}

// 2-norm condition number of a complex matrix via power iteration on V^H V
// (largest singular value) and inverse power iteration (smallest).
inline double condition_2norm(const std::vector<Cplx>& v, int n) {
  std::vector<Cplx> gram(static_cast<std::size_t>(n) * n, Cplx(0.0, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Cplx acc(0.0, 0.0);
      for (int k = 0; k < n; ++k)
        acc += std::conj(v[static_cast<std::size_t>(k) * n + i]) *
               v[static_cast<std::size_t>(k) * n + j];
      gram[static_cast<std::size_t>(i) * n + j] = acc;
    }

  auto mat_apply = [&](const std::vector<Cplx>& x) {
    std::vector<Cplx> y(static_cast<std::size_t>(n), Cplx(0.0, 0.0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) y[i] += gram[static_cast<std::size_t>(i) * n + j] * x[j];
    return y;
  };

  Rng rng(mix_seed(0xc04dULL, 17));
  std::vector<Cplx> x(static_cast<std::size_t>(n));
  for (auto& e : x) e = {rng.normal(), rng.normal()};
  double nx = vec2_norm(x);
  for (auto& e : x) e /= nx;

  double lam_max = 0.0;
  for (int it = 0; it < 20000; ++it) {
    std::vector<Cplx> y = mat_apply(x);
    const double ny = vec2_norm(y);
    if (!(ny > 0.0)) break;
    for (auto& e : y) e /= ny;
    x = std::move(y);
    if (std::abs(ny - lam_max) <= 1e-13 * std::max(1.0, ny)) {
      lam_max = ny;
      break;
    }
    lam_max = ny;
  }

  ComplexLu lu(gram, n);
  if (lu.singular) return std::numeric_limits<double>::infinity();
  for (auto& e : x) e = {rng.normal(), rng.normal()};
  nx = vec2_norm(x);
  for (auto& e : x) e /= nx;
  double lam_inv = 0.0;
  for (int it = 0; it < 20000; ++it) {
    std::vector<Cplx> y = lu.solve(x);
    const double ny = vec2_norm(y);
    if (!(ny > 0.0) || !std::isfinite(ny)) return std::numeric_limits<double>::infinity();
    for (auto& e : y) e /= ny;
    x = std::move(y);
    if (std::abs(ny - lam_inv) <= 1e-13 * std::max(1.0, ny)) {
      lam_inv = ny;
      break;
    }
    lam_inv = ny;
  }
  const double sig_max = std::sqrt(lam_max);
  const double sig_min = std::sqrt(1.0 / lam_inv);
  if (!(sig_min > 0.0)) return std::numeric_limits<double>::infinity();
  return sig_max / sig_min;
}

}  // namespace detail

constexpr double kDiagonalizableCondLimit = 1e8;

// kappa(V) * ||E||_F where V is the eigenvector matrix of `a`: every
// eigenvalue of a+e lies within this distance of some eigenvalue of a.
// Requires `a` to be safely diagonalizable (eigenvector condition below
// 1e8), otherwise throws.
inline double bauer_fike_bound(const SquareMatrix& a, const SquareMatrix& e) {
  require(a.n == e.n, "bauer_fike_bound: dimension mismatch");
  const EigenSpectrum spec = eigenvalues(a);
  const int n = a.n;

  std::vector<detail::Cplx> v(static_cast<std::size_t>(n) * n);
  for (int c = 0; c < n; ++c) {
    const std::vector<detail::Cplx> col = detail::inverse_iteration_vector(a, spec.values[c], c);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + c] = col[i];
  }

  const double cond = detail::condition_2norm(v, n);
  require(std::isfinite(cond) && cond < kDiagonalizableCondLimit, "not safely diagonalizable");
  return cond * frobenius_norm(e);
}

}  // namespace rsdg
