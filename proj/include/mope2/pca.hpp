#pragma once

#include <array>
#include <cmath>
#include <span>

#include <Eigen/Dense>

#include "mope2/errors.hpp"
#include "mope2/gaussian.hpp"

namespace mope2 {

struct PcaResult {
  Vec component1;
  Vec component2;
  Mat projected;     // n x 2
  Vec eigenvalues;   // all covariance eigenvalues, descending
  std::array<double, 2> explained_ratio{};
  Vec center;
};

namespace detail {
// Deterministic sign: largest-magnitude entry positive.
inline void canonical_sign(Eigen::Ref<Vec> v) {
  Eigen::Index idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  if (v[idx] < 0.0) v = -v;
}
}  // namespace detail

/// Top-two principal components of a point cloud given as rows of `points`.
///
/// Uses a dense eigendecomposition of the (population) covariance matrix;
/// intended for low-dimensional data such as action vectors.
inline PcaResult pca_top2(const Mat& points) {
  const auto n = points.rows();
  const auto d = points.cols();
  if (n < 3) throw InvalidArgument("pca_top2: need at least 3 points");
  if (d < 2) throw InvalidArgument("pca_top2: need dimension >= 2");
  if (!points.allFinite()) throw NumericError("pca_top2: non-finite input");

  PcaResult r;
  r.center = points.colwise().mean().transpose();
  const Mat centered = points.rowwise() - r.center.transpose();
  const Mat cov = (centered.transpose() * centered) / static_cast<double>(n);
  const double total = cov.trace();
  if (!(total > 0.0) || centered.cwiseAbs().maxCoeff() == 0.0)
    throw DegenerateDataError("pca_top2: all points identical, covariance is zero");

  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca_top2: eigendecomposition failed");
  r.eigenvalues = eig.eigenvalues().reverse();
  r.component1 = eig.eigenvectors().col(d - 1);
  r.component2 = eig.eigenvectors().col(d - 2);
  detail::canonical_sign(r.component1);
  detail::canonical_sign(r.component2);

  r.projected.resize(n, 2);
  r.projected.col(0) = centered * r.component1;
  r.projected.col(1) = centered * r.component2;
  r.explained_ratio = {std::max(r.eigenvalues[0], 0.0) / total, std::max(r.eigenvalues[1], 0.0) / total};
  return r;
}

inline PcaResult pca_top2(std::span<const Vec> points) {
  if (points.empty()) throw InvalidArgument("pca_top2: need at least 3 points");
  Mat m(static_cast<Eigen::Index>(points.size()), points.front().size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != m.cols()) throw ShapeError("pca_top2: inconsistent point dimensions");
    m.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  }
  return pca_top2(m);
}

/// Area of the axis-aligned bounding box of 2D points (rows).
inline double bounding_box_area(const Mat& xy) {
  if (xy.rows() == 0) return 0.0;
  const auto lo = xy.colwise().minCoeff();
  const auto hi = xy.colwise().maxCoeff();
  return (hi[0] - lo[0]) * (hi[1] - lo[1]);
}

}  // namespace mope2
