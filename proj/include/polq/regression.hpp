#pragma once

#include <Eigen/Dense>

namespace polq {

/// Monomials of degree <= 2 in m variables: 1, s_a, s_a s_b (a <= b).
inline int quad_basis_size(int m) { return 1 + m + m * (m + 1) / 2; }
void quad_basis(const double* s, int m, double* out);

inline constexpr double kDefaultRidge = 1e-8;

/// Weighted ridge least squares on column-scaled features. The Gram matrix is
/// eigendecomposed once, so several right-hand sides share the factorization.
/// With ridge = 0 a rank-deficient design falls back to kDefaultRidge.
class LeastSquares {
 public:
  LeastSquares(const Eigen::MatrixXd& design, const Eigen::VectorXd* weights, double ridge);

  /// Coefficients (F x cols(rhs)) such that design * coef fits rhs.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

  bool rank_deficient() const { return rank_deficient_; }
  double ridge_used() const { return ridge_; }
  double min_eigenvalue() const { return min_eig_; }
  double max_eigenvalue() const { return max_eig_; }

 private:
  const Eigen::MatrixXd& design_;
  Eigen::VectorXd w_;  // normalized weights, empty when unweighted
  Eigen::VectorXd scale_;
  Eigen::MatrixXd vecs_;
  Eigen::VectorXd inv_;  // 1/(lambda + ridge) on kept eigenpairs, 0 elsewhere
  bool rank_deficient_ = false;
  double ridge_ = 0.0;
  double min_eig_ = 0.0, max_eig_ = 0.0;
};

struct RidgeFit {
  Eigen::MatrixXd coef;
  bool rank_deficient = false;
  double ridge_used = 0.0;
};

RidgeFit ridge_fit(const Eigen::MatrixXd& design, const Eigen::MatrixXd& rhs, const Eigen::VectorXd* weights,
                   double ridge);

}  // namespace polq
