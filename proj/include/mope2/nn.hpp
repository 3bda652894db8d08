#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "mope2/errors.hpp"
#include "mope2/gaussian.hpp"
#include "mope2/rng.hpp"

namespace mope2::nn {

struct Layer {
  Mat weight;  // out x in
  Vec bias;    // out
};

using Params = std::vector<Layer>;

enum class OutputInit { Zero, Random };

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }
inline double silu_grad(double z) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

/// Multi-layer perceptron with SiLU hidden activations and a linear output.
///
/// Samples are columns: forward() maps an (in x n) batch to (out x n).
class FeedforwardNet {
 public:
  FeedforwardNet() = default;

  FeedforwardNet(std::vector<int> widths, RngStream& rng, OutputInit out_init = OutputInit::Random)
      : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw InvalidArgument("FeedforwardNet: need at least input and output widths");
    for (int w : widths_)
      if (w < 1) throw InvalidArgument("FeedforwardNet: layer widths must be positive");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const int in = widths_[l];
      const int out = widths_[l + 1];
      Layer layer{Mat(out, in), Vec::Zero(out)};
      const bool last = l + 2 == widths_.size();
      if (last && out_init == OutputInit::Zero) {
        layer.weight.setZero();
      } else {
        const double scale = (last ? 0.1 : 1.0) / std::sqrt(static_cast<double>(in));
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = scale * rng.normal();
      }
      params_.push_back(std::move(layer));
    }
  }

  FeedforwardNet(std::vector<int> widths, Params params) : widths_(std::move(widths)), params_(std::move(params)) {
    if (params_.size() + 1 != widths_.size()) throw ShapeError("FeedforwardNet: layer count mismatch");
    for (std::size_t l = 0; l < params_.size(); ++l) {
      if (params_[l].weight.rows() != widths_[l + 1] || params_[l].weight.cols() != widths_[l] ||
          params_[l].bias.size() != widths_[l + 1])
        throw ShapeError("FeedforwardNet: parameter shape mismatch");
    }
  }

  const std::vector<int>& widths() const noexcept { return widths_; }
  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  const Params& params() const noexcept { return params_; }
  Params& params() noexcept { return params_; }

  Mat forward(const Mat& x) const {
    Mat a = x;
    for (std::size_t l = 0; l < params_.size(); ++l) {
      Mat z = params_[l].weight * a;
      z.colwise() += params_[l].bias;
      if (l + 1 < params_.size())
        a = z.unaryExpr([](double v) { return silu(v); });
      else
        a = std::move(z);
    }
    return a;
  }

  /// Forward pass keeping pre-activations for backprop.
  struct Tape {
    std::vector<Mat> inputs;  // input to each layer
    std::vector<Mat> pre;     // pre-activation of each layer
    Mat output;
  };

  Tape forward_tape(const Mat& x) const {
    Tape tape;
    Mat a = x;
    for (std::size_t l = 0; l < params_.size(); ++l) {
      tape.inputs.push_back(a);
      Mat z = params_[l].weight * a;
      z.colwise() += params_[l].bias;
      tape.pre.push_back(z);
      if (l + 1 < params_.size())
        a = z.unaryExpr([](double v) { return silu(v); });
      else
        a = std::move(z);
    }
    tape.output = std::move(a);
    return tape;
  }

  /// Parameter gradients given dL/d(output) for the taped batch.
  Params backward(const Tape& tape, const Mat& grad_out) const {
    Params grads(params_.size());
    Mat delta = grad_out;
    for (std::size_t li = params_.size(); li-- > 0;) {
      if (li + 1 < params_.size())
        delta = delta.cwiseProduct(tape.pre[li].unaryExpr([](double v) { return silu_grad(v); }));
      grads[li].weight = delta * tape.inputs[li].transpose();
      grads[li].bias = delta.rowwise().sum();
      if (li > 0) delta = params_[li].weight.transpose() * delta;
    }
    return grads;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : params_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

 private:
  std::vector<int> widths_;
  Params params_;
};

/// Concatenates all weights then biases layer by layer.
inline Vec flatten(const Params& p) {
  std::size_t n = 0;
  for (const auto& l : p) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  Vec out(static_cast<Eigen::Index>(n));
  Eigen::Index k = 0;
  for (const auto& l : p) {
    out.segment(k, l.weight.size()) = l.weight.reshaped();
    k += l.weight.size();
    out.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return out;
}

inline void unflatten(const Vec& flat, Params& p) {
  Eigen::Index k = 0;
  for (auto& l : p) {
    l.weight.reshaped() = flat.segment(k, l.weight.size());
    k += l.weight.size();
    l.bias = flat.segment(k, l.bias.size());
    k += l.bias.size();
  }
  if (k != flat.size()) throw ShapeError("unflatten: size mismatch");
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam() = default;
  Adam(const Params& like, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& l : like) {
      m_.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
      v_.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
    }
  }

  void step(Params& params, const Params& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double lr = cfg_.learning_rate;
    auto update = [&](auto& p, const auto& g, auto& m, auto& v, bool decay) {
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
      if (decay && cfg_.weight_decay > 0.0) p *= (1.0 - lr * cfg_.weight_decay);
    };
    for (std::size_t l = 0; l < params.size(); ++l) {
      update(params[l].weight, grads[l].weight, m_[l].weight, v_[l].weight, true);
      update(params[l].bias, grads[l].bias, m_[l].bias, v_[l].bias, false);
    }
  }

  long steps() const noexcept { return t_; }

 private:
  AdamConfig cfg_{};
  Params m_, v_;
  long t_ = 0;
};

}  // namespace mope2::nn
