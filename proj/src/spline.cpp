#include "hivaug/spline.hpp"

#include <algorithm>
#include <cmath>

#include "hivaug/error.hpp"

namespace hivaug {

namespace {

// Non-zero basis functions at x for knot span `span` (Piegl & Tiller A2.2).
void basis_funs(const std::vector<double>& u, int span, double x, int p, std::vector<double>& out) {
  out.assign(p + 1, 0.0);
  std::vector<double> left(p + 1), right(p + 1);
  out[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - u[span + 1 - j];
    right[j] = u[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    out[j] = saved;
  }
}

}  // namespace

std::vector<double> SplineBasis::evaluate(double x) const {
  const int p = degree;
  const int n = n_basis();
  const double lo = knots[p];
  const double hi = knots[n];
  if (x < lo - 1e-12 || x > hi + 1e-12) throw ValidationError("spline evaluation outside basis range");
  x = std::clamp(x, lo, hi);
  int span = p;
  if (x >= hi) {
    span = n - 1;
  } else {
    span = static_cast<int>(std::upper_bound(knots.begin() + p, knots.begin() + n + 1, x) - knots.begin()) - 1;
  }
  std::vector<double> local;
  basis_funs(knots, span, x, p, local);
  std::vector<double> values(n, 0.0);
  for (int j = 0; j <= p; ++j) values[span - p + j] = local[j];
  return values;
}

SplineBasis build_basis(int first_year, int last_year, int n_knots, int degree) {
  if (last_year <= first_year) throw ValidationError("build_basis: year range needs at least two years");
  if (degree < 1) throw ValidationError("build_basis: degree must be >= 1");
  if (n_knots < degree + 2) throw ValidationError("build_basis: need n_knots >= degree + 2");

  SplineBasis b;
  b.first_year = first_year;
  b.last_year = last_year;
  b.degree = degree;
  const double lo = first_year;
  const double hi = last_year;
  for (int i = 0; i < degree; ++i) b.knots.push_back(lo);
  for (int i = 0; i < n_knots; ++i) b.knots.push_back(lo + (hi - lo) * i / (n_knots - 1));
  for (int i = 0; i < degree; ++i) b.knots.push_back(hi);

  const int n_basis = n_knots - 1 + degree;
  b.basis_matrix = Eigen::MatrixXd::Zero(b.n_years(), n_basis);
  for (int y = first_year; y <= last_year; ++y) {
    const auto v = b.evaluate(y);
    for (int d = 0; d < n_basis; ++d) b.basis_matrix(y - first_year, d) = v[d];
  }
  return b;
}

int knots_for_basis_size(int n_basis, int degree) { return n_basis - degree + 1; }

double penalty(std::span<const double> beta, double lambda) {
  if (beta.size() < 3) throw ValidationError("penalty: need at least three coefficients");
  double s = 0.0;
  for (std::size_t d = 0; d + 2 < beta.size(); ++d) {
    const double diff = beta[d + 2] - 2.0 * beta[d + 1] + beta[d];
    s += diff * diff;
  }
  return lambda * s;
}

Eigen::MatrixXd second_difference_matrix(int n_basis) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(std::max(0, n_basis - 2), n_basis);
  for (int d = 0; d + 2 < n_basis; ++d) {
    k(d, d) = 1.0;
    k(d, d + 1) = -2.0;
    k(d, d + 2) = 1.0;
  }
  return k;
}

}  // namespace hivaug
