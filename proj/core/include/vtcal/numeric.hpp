#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vtcal {

inline constexpr double kNormEpsilon = 1e-12;

/// Dense row-major matrix of doubles. Entries are kept finite: every
/// constructor and public operation rejects NaN/Inf with NumericError.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void append_row(std::span<const double> values);

  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t dim, double fill = 0.0);
  explicit Vec(std::vector<double> data);
  Vec(std::initializer_list<double> values);
  static Vec from_span(std::span<const double> values);

  std::size_t dim() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  friend bool operator==(const Vec&, const Vec&) = default;

 private:
  std::vector<double> data_;
};

// Throws NumericError naming `what` when any entry is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T, the shape used for attention scores.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// Per-row softmax with max subtraction.
Matrix softmax_rows(const Matrix& m);
void softmax_inplace(std::span<double> row);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
Vec l2_normalize(const Vec& v);
Vec mean_rows(std::span<const Vec> vs);

Vec operator+(const Vec& a, const Vec& b);
Vec operator-(const Vec& a, const Vec& b);
Vec operator*(double s, const Vec& v);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& m);

// Stacks `top` over `bottom`; column counts must agree.
Matrix vstack(const Matrix& top, const Matrix& bottom);

double max_abs_diff(std::span<const double> a, std::span<const double> b);

}  // namespace vtcal
