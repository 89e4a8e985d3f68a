#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hivaug {

// Clamped B-spline basis on equally spaced knots over [first_year, last_year],
// tabulated on the integer data years.
struct SplineBasis {
  int first_year = 0;
  int last_year = 0;
  int degree = 3;
  std::vector<double> knots;    // full clamped knot vector
  Eigen::MatrixXd basis_matrix;  // (years) x D

  int n_basis() const { return static_cast<int>(basis_matrix.cols()); }
  int n_years() const { return last_year - first_year + 1; }
  Eigen::RowVectorXd row(int year) const { return basis_matrix.row(year - first_year); }
  // Basis values at an arbitrary point of the range.
  std::vector<double> evaluate(double x) const;
};

// n_knots counts distinct knots including both boundaries; D = n_knots - 1 + degree.
SplineBasis build_basis(int first_year, int last_year, int n_knots, int degree = 3);

// Number of distinct knots that yields D basis functions of the given degree.
int knots_for_basis_size(int n_basis, int degree = 3);

// lambda * sum_d (beta_{d+2} - 2 beta_{d+1} + beta_d)^2
double penalty(std::span<const double> beta, double lambda);

// (D - 2) x D second-difference operator.
Eigen::MatrixXd second_difference_matrix(int n_basis);

}  // namespace hivaug
