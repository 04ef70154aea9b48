#include "polq/regression.hpp"

#include <cmath>

#include "polq/error.hpp"

namespace polq {

void quad_basis(const double* s, int m, double* out) {
  out[0] = 1.0;
  for (int a = 0; a < m; ++a) out[1 + a] = s[a];
  int k = 1 + m;
  for (int a = 0; a < m; ++a)
    for (int b = a; b < m; ++b) out[k++] = s[a] * s[b];
}

LeastSquares::LeastSquares(const Eigen::MatrixXd& design, const Eigen::VectorXd* weights, double ridge)
    : design_(design) {
  const auto N = design.rows(), F = design.cols();
  if (N == 0 || F == 0) throw Error(ErrorKind::RegressionFailure, "empty design matrix");
  if (ridge < 0.0) throw Error(ErrorKind::InvalidArgument, "ridge must be nonnegative");
  if (!design.allFinite()) throw Error(ErrorKind::RegressionFailure, "nonfinite design matrix");
  if (weights) {
    if (weights->size() != N) throw Error(ErrorKind::DimensionMismatch, "weight vector length");
    const double total = weights->sum();
    if (!(total > 0.0) || !weights->allFinite() || weights->minCoeff() < 0.0)
      throw Error(ErrorKind::RegressionFailure, "weights must be nonnegative with positive sum");
    w_ = *weights / total;
  }
  Eigen::MatrixXd gram(F, F);
  if (weights) gram.noalias() = design.transpose() * w_.asDiagonal() * design;
  else gram.noalias() = design.transpose() * design / static_cast<double>(N);

  scale_.resize(F);
  for (Eigen::Index c = 0; c < F; ++c) {
    const double s = std::sqrt(gram(c, c));
    scale_(c) = s > 0.0 ? s : 1.0;
  }
  const Eigen::MatrixXd scaled = scale_.cwiseInverse().asDiagonal() * gram * scale_.cwiseInverse().asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scaled);
  if (es.info() != Eigen::Success) throw Error(ErrorKind::RegressionFailure, "eigendecomposition failed");
  const auto& lam = es.eigenvalues();
  max_eig_ = lam.maxCoeff();
  min_eig_ = lam.minCoeff();
  rank_deficient_ = !(min_eig_ > 1e-12 * max_eig_);
  ridge_ = (rank_deficient_ && ridge == 0.0) ? kDefaultRidge : ridge;
  vecs_ = es.eigenvectors();
  inv_.resize(F);
  for (Eigen::Index k = 0; k < F; ++k) inv_(k) = lam(k) > 1e-14 * max_eig_ ? 1.0 / (lam(k) + ridge_) : 0.0;
}

Eigen::MatrixXd LeastSquares::solve(const Eigen::MatrixXd& rhs) const {
  const auto N = design_.rows();
  if (rhs.rows() != N) throw Error(ErrorKind::DimensionMismatch, "regression target length");
  if (!rhs.allFinite()) throw Error(ErrorKind::RegressionFailure, "nonfinite regression target");
  Eigen::MatrixXd b;
  if (w_.size() > 0) b.noalias() = design_.transpose() * (w_.asDiagonal() * rhs);
  else b.noalias() = design_.transpose() * rhs / static_cast<double>(N);
  b = scale_.cwiseInverse().asDiagonal() * b;
  Eigen::MatrixXd c = vecs_ * (inv_.asDiagonal() * (vecs_.transpose() * b));
  return scale_.cwiseInverse().asDiagonal() * c;
}

RidgeFit ridge_fit(const Eigen::MatrixXd& design, const Eigen::MatrixXd& rhs, const Eigen::VectorXd* weights,
                   double ridge) {
  LeastSquares ls(design, weights, ridge);
  return RidgeFit{ls.solve(rhs), ls.rank_deficient(), ls.ridge_used()};
}

}  // namespace polq
