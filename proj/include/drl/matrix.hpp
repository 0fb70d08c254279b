#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace drl {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  // Stacks equally sized vectors as rows.
  static Matrix from_rows(std::span<const Vector> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector row_vector(std::size_t r) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  Matrix transposed() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a * b, shapes (n×k)(k×m).
Matrix matmul(const Matrix& a, const Matrix& b);
// m * v.
Vector matvec(const Matrix& m, std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
bool all_finite(std::span<const double> v);

// Maximum of |a(i,j) - a(j,i)|; 0 for an exactly symmetric matrix.
double asymmetry(const Matrix& a);

// Lower-triangular L with a = L Lᵀ. Throws NumericError when a is not
// (numerically) positive definite.
Matrix cholesky(const Matrix& a);
// Solves L Lᵀ x = b given the factor from cholesky().
Vector cholesky_solve(const Matrix& lower, std::span<const double> b);

// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> v);

}  // namespace drl
