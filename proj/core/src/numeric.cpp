#include "vtcal/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vtcal/errors.hpp"

namespace vtcal {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

void require_same_dim(const Vec& a, const Vec& b, const char* op) {
  if (a.dim() != b.dim()) {
    throw ShapeError(std::string(op) + ": dimension mismatch " + std::to_string(a.dim()) +
                     " vs " + std::to_string(b.dim()));
  }
}

}  // namespace

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(what) + ": non-finite value");
    }
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (!std::isfinite(fill)) throw NumericError("Matrix: non-finite fill value");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  require_finite(data_, "Matrix");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  require_finite(data_, "Matrix");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) {
    throw ShapeError("Matrix::append_row: row of length " + std::to_string(values.size()) +
                     " into " + shape_string());
  }
  require_finite(values, "Matrix::append_row");
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

Vec::Vec(std::size_t dim, double fill) : data_(dim, fill) {
  if (!std::isfinite(fill)) throw NumericError("Vec: non-finite fill value");
}

Vec::Vec(std::vector<double> data) : data_(std::move(data)) { require_finite(data_, "Vec"); }

Vec::Vec(std::initializer_list<double> values) : data_(values) { require_finite(data_, "Vec"); }

Vec Vec::from_span(std::span<const double> values) {
  return Vec(std::vector<double>(values.begin(), values.end()));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, a" + a.shape_string() + " b" +
                     b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  require_finite(out.values(), "matmul");
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: column counts differ, a" + a.shape_string() + " b" +
                     b.shape_string());
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
  require_finite(out.values(), "matmul_transposed");
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double peak = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double& x : row) {
    x = std::exp(x - peak);
    total += x;
  }
  for (double& x : row) x /= total;
}

Matrix softmax_rows(const Matrix& m) {
  if (m.empty()) throw ShapeError("softmax_rows: empty matrix");
  require_finite(m.values(), "softmax_rows");
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vec l2_normalize(const Vec& v) {
  const double n = l2_norm(v.values());
  if (!(n > kNormEpsilon)) {
    throw DegenerateVectorError("l2_normalize: norm " + std::to_string(n) + " below epsilon");
  }
  Vec out = v;
  for (double& x : out.values()) x /= n;
  return out;
}

Vec mean_rows(std::span<const Vec> vs) {
  if (vs.empty()) throw ShapeError("mean_rows: empty list");
  const std::size_t dim = vs.front().dim();
  Vec sum(dim);
  for (const Vec& v : vs) {
    if (v.dim() != dim) {
      throw ShapeError("mean_rows: dimension " + std::to_string(v.dim()) + " != " +
                       std::to_string(dim));
    }
    for (std::size_t i = 0; i < dim; ++i) sum[i] += v[i];
  }
  const double n = static_cast<double>(vs.size());
  for (double& x : sum.values()) x /= n;
  return sum;
}

Vec operator+(const Vec& a, const Vec& b) {
  require_same_dim(a, b, "Vec+");
  Vec out = a;
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] += b[i];
  require_finite(out.values(), "Vec+");
  return out;
}

Vec operator-(const Vec& a, const Vec& b) {
  require_same_dim(a, b, "Vec-");
  Vec out = a;
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] -= b[i];
  require_finite(out.values(), "Vec-");
  return out;
}

Vec operator*(double s, const Vec& v) {
  Vec out = v;
  for (double& x : out.values()) x *= s;
  require_finite(out.values(), "Vec*");
  return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "Matrix+");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  require_finite(o, "Matrix+");
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "Matrix-");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  require_finite(o, "Matrix-");
  return out;
}

Matrix operator*(double s, const Matrix& m) {
  Matrix out = m;
  for (double& x : out.values()) x *= s;
  require_finite(out.values(), "Matrix*");
  return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) {
    throw ShapeError("vstack: column mismatch " + top.shape_string() + " over " +
                     bottom.shape_string());
  }
  std::vector<double> data(top.values().begin(), top.values().end());
  data.insert(data.end(), bottom.values().begin(), bottom.values().end());
  return Matrix(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace vtcal
