#include "gaitforge/nlp.hpp"

#include <algorithm>

namespace gaitforge {

double bound_violation(const Eigen::VectorXd& g, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  double v = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) v = std::max({v, g[i] - upper[i], lower[i] - g[i]});
  return v;
}

SparseMatrixR sparse_from_pattern(const Eigen::MatrixXd& dense, int rows, int cols,
                                  const std::vector<std::pair<int, int>>& pattern) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(pattern.size());
  for (const auto& [r, c] : pattern) trip.emplace_back(r, c, dense(r, c));
  SparseMatrixR m(rows, cols);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

}  // namespace gaitforge
