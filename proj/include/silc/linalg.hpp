#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace silc::la {

// Minimal dense double-precision linear algebra. Everything downstream
// (GAT, LSTM, contrastive loss) hand-derives its gradients, so the point
// here is transparency, not speed; matrices stay small (d <= a few hundred).

using Vec = std::vector<double>;

struct DimensionMismatch : std::runtime_error {
  explicit DimensionMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline void axpy(double alpha, const Vec& x, Vec& y) {
  if (x.size() != y.size()) throw DimensionMismatch("axpy: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(Vec& v, double s) {
  for (double& x : v) x *= s;
}

// y = M x
inline Vec matvec(const Matrix& m, const Vec& x) {
  if (m.cols != x.size()) throw DimensionMismatch("matvec: size mismatch");
  Vec y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    const double* row = &m.data[r * m.cols];
    for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

// y = M^T x
inline Vec matvec_t(const Matrix& m, const Vec& x) {
  if (m.rows != x.size()) throw DimensionMismatch("matvec_t: size mismatch");
  Vec y(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = &m.data[r * m.cols];
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * x[r];
  }
  return y;
}

// M += alpha * a b^T
inline void add_outer(Matrix& m, double alpha, const Vec& a, const Vec& b) {
  if (m.rows != a.size() || m.cols != b.size()) throw DimensionMismatch("add_outer: size mismatch");
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* row = &m.data[r * m.cols];
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += alpha * a[r] * b[c];
  }
}

// Unit-normalizes v in place; zero vectors are left untouched.
inline void normalize(Vec& v) {
  double n = norm(v);
  if (n > 0.0) scale(v, 1.0 / n);
}

// Cosine similarity; 0 when either vector is zero.
inline double cosine(const Vec& a, const Vec& b) {
  double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace silc::la
