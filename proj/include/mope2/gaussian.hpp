#pragma once

#include <cmath>
#include <numbers>
#include <utility>

#include <Eigen/Dense>

#include "mope2/errors.hpp"
#include "mope2/rng.hpp"

namespace mope2 {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Gaussian with diagonal covariance, stored as (mean, variance).
class DiagonalGaussian {
 public:
  DiagonalGaussian(Vec mean, Vec variance) : mean_(std::move(mean)), variance_(std::move(variance)) {
    if (mean_.size() != variance_.size())
      throw ShapeError("DiagonalGaussian: mean and variance lengths differ");
    if (mean_.size() == 0) throw InvalidArgument("DiagonalGaussian: empty dimension");
    for (Eigen::Index i = 0; i < variance_.size(); ++i) {
      if (!(variance_[i] > 0.0) || !std::isfinite(variance_[i]))
        throw InvalidArgument("DiagonalGaussian: variance must be finite and strictly positive");
    }
  }

  const Vec& mean() const noexcept { return mean_; }
  const Vec& variance() const noexcept { return variance_; }
  Eigen::Index dim() const noexcept { return mean_.size(); }

 private:
  Vec mean_;
  Vec variance_;
};

/// Differential entropy in nats given only the log-variances.
inline double diagonal_entropy_from_logvar(const Eigen::Ref<const Vec>& logvar) {
  const double d = static_cast<double>(logvar.size());
  return 0.5 * d * (std::log(2.0 * std::numbers::pi) + 1.0) + 0.5 * logvar.sum();
}

/// H = (d/2)(ln 2pi + 1) + (1/2) sum_i ln var_i
inline double gaussian_entropy(const DiagonalGaussian& dist) {
  return diagonal_entropy_from_logvar(dist.variance().array().log().matrix());
}

inline Vec gaussian_sample(const DiagonalGaussian& dist, RngStream& rng) {
  Vec out(dist.dim());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] = dist.mean()[i] + std::sqrt(dist.variance()[i]) * rng.normal();
  return out;
}

}  // namespace mope2
