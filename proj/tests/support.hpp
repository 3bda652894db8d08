#pragma once

#include <cmath>
#include <functional>

#include "mope2/dynamics.hpp"
#include "mope2/gaussian.hpp"
#include "mope2/planner.hpp"

namespace mope2::testing {

// Deterministic dynamics stub: next state = f(s, a), variance from a callback.
struct StubModel {
  int ds = 1;
  int da = 1;
  std::size_t members = 1;
  std::function<Vec(const Vec&, const Vec&)> next = [](const Vec& s, const Vec&) { return s; };
  std::function<double(const Vec&, const Vec&)> logvar = [](const Vec&, const Vec&) { return -200.0; };

  std::size_t num_members() const { return members; }
  int state_dim() const { return ds; }
  int action_dim() const { return da; }
  BatchPrediction predict_batch(std::size_t, const Mat& s, const Mat& a) const {
    BatchPrediction p{Mat(ds, s.cols()), Mat(ds, s.cols())};
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const Vec sj = s.col(j), aj = a.col(j);
      p.mean.col(j) = next(sj, aj);
      p.logvar.col(j).setConstant(logvar(sj, aj));
    }
    return p;
  }
};

struct StubReward {
  std::function<double(const Vec&, const Vec&)> fn = [](const Vec&, const Vec&) { return 0.0; };
  Vec reward_batch(const Mat& s, const Mat& a) const {
    Vec r(s.cols());
    for (Eigen::Index j = 0; j < s.cols(); ++j) r[j] = fn(s.col(j), a.col(j));
    return r;
  }
};

inline Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace mope2::testing
