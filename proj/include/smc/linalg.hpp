// Small dense linear algebra: just enough for low-dimensional covariance
// work (Cholesky, symmetric eigenvalues, solves). Not a general library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace smc {

using Vec = std::vector<double>;

struct Mat {
    std::size_t rows = 0, cols = 0;
    Vec a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), a(r * c, fill) {}

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

inline Vec mat_vec(const Mat& m, const Vec& x) {
    Vec y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) y[i] += m(i, j) * x[j];
    return y;
}

inline Mat mat_mul(const Mat& l, const Mat& r) {
    Mat out(l.rows, r.cols);
    for (std::size_t i = 0; i < l.rows; ++i)
        for (std::size_t k = 0; k < l.cols; ++k) {
            const double lik = l(i, k);
            if (lik == 0.0) continue;
            for (std::size_t j = 0; j < r.cols; ++j) out(i, j) += lik * r(k, j);
        }
    return out;
}

inline Mat transpose(const Mat& m) {
    Mat t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// matrix. Throws std::invalid_argument if the matrix is not PD.
inline Mat cholesky(const Mat& m) {
    if (m.rows != m.cols) throw std::invalid_argument("cholesky: matrix not square");
    const std::size_t n = m.rows;
    Mat l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0)
                    throw std::invalid_argument("cholesky: matrix not positive definite");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

/// Solve m x = b for symmetric positive definite m via Cholesky.
inline Vec solve_spd(const Mat& m, const Vec& b) {
    const Mat l = cholesky(m);
    const std::size_t n = m.rows;
    Vec y(n), x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

inline Mat inverse_spd(const Mat& m) {
    const std::size_t n = m.rows;
    Mat inv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        Vec e(n, 0.0);
        e[j] = 1.0;
        Vec col = solve_spd(m, e);
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    return inv;
}

inline double determinant_spd(const Mat& m) {
    const Mat l = cholesky(m);
    double d = 1.0;
    for (std::size_t i = 0; i < m.rows; ++i) d *= l(i, i) * l(i, i);
    return d;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// ascending order. Intended for small matrices.
inline Vec symmetric_eigenvalues(const Mat& m) {
    if (m.rows != m.cols) throw std::invalid_argument("eigenvalues: matrix not square");
    const std::size_t n = m.rows;
    Mat w = m;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += w(i, j) * w(i, j);
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(w(p, q)) < 1e-300) continue;
                const double theta = (w(q, q) - w(p, p)) / (2.0 * w(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double wkp = w(k, p), wkq = w(k, q);
                    w(k, p) = c * wkp - s * wkq;
                    w(k, q) = s * wkp + c * wkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double wpk = w(p, k), wqk = w(q, k);
                    w(p, k) = c * wpk - s * wqk;
                    w(q, k) = s * wpk + c * wqk;
                }
            }
    }
    Vec ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = w(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

/// Spectral (operator 2-) norm of a symmetric matrix.
inline double spectral_norm_symmetric(const Mat& m) {
    const Vec ev = symmetric_eigenvalues(m);
    return std::max(std::abs(ev.front()), std::abs(ev.back()));
}

/// Singular values of a general square matrix, ascending (via eigenvalues
/// of m^T m).
inline Vec singular_values(const Mat& m) {
    Vec ev = symmetric_eigenvalues(mat_mul(transpose(m), m));
    for (double& v : ev) v = std::sqrt(std::max(0.0, v));
    return ev;
}

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

} // namespace smc
