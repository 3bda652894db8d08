#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mope2/errors.hpp"
#include "mope2/gaussian.hpp"
#include "mope2/nn.hpp"
#include "mope2/parallel.hpp"
#include "mope2/rng.hpp"

namespace mope2 {

struct Transition {
  Vec state;
  Vec action;
  Vec next_state;
  double reward = 0.0;
};

/// Append-only transition store. Insertion order is preserved; with a finite
/// capacity the oldest records are evicted first.
class ReplayBuffer {
 public:
  ReplayBuffer(int state_dim, int action_dim, std::size_t capacity = 0)
      : state_dim_(state_dim), action_dim_(action_dim), capacity_(capacity) {}

  void add(Transition t) {
    if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ || t.action.size() != action_dim_)
      throw ShapeError("ReplayBuffer: transition dimensions do not match buffer");
    if (capacity_ != 0 && data_.size() == capacity_) data_.erase(data_.begin());
    data_.push_back(std::move(t));
  }

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  const Transition& operator[](std::size_t i) const { return data_[i]; }
  std::span<const Transition> view() const noexcept { return data_; }
  int state_dim() const noexcept { return state_dim_; }
  int action_dim() const noexcept { return action_dim_; }
  std::size_t capacity() const noexcept { return capacity_; }

 private:
  int state_dim_;
  int action_dim_;
  std::size_t capacity_;
  std::vector<Transition> data_;
};

/// Per-feature standardization of concatenated (state, action) inputs.
struct Normalizer {
  Vec mean;
  Vec stddev;

  static Normalizer identity(int dim) { return {Vec::Zero(dim), Vec::Ones(dim)}; }

  static Normalizer fit(std::span<const Transition> data) {
    if (data.empty()) throw InvalidArgument("Normalizer::fit: no data");
    const auto ds = data.front().state.size();
    const auto da = data.front().action.size();
    Vec sum = Vec::Zero(ds + da);
    for (const auto& t : data) {
      sum.head(ds) += t.state;
      sum.tail(da) += t.action;
    }
    const double n = static_cast<double>(data.size());
    Normalizer out;
    out.mean = sum / n;
    Vec sq = Vec::Zero(ds + da);
    for (const auto& t : data) {
      sq.head(ds) += (t.state - out.mean.head(ds)).cwiseAbs2();
      sq.tail(da) += (t.action - out.mean.tail(da)).cwiseAbs2();
    }
    out.stddev = (sq / n).cwiseSqrt();
    for (Eigen::Index i = 0; i < out.stddev.size(); ++i)
      if (!(out.stddev[i] > 1e-8)) out.stddev[i] = 1.0;
    return out;
  }

  /// states (ds x n) and actions (da x n) -> normalized inputs ((ds+da) x n).
  Mat apply(const Mat& states, const Mat& actions) const {
    Mat x(states.rows() + actions.rows(), states.cols());
    x.topRows(states.rows()) = states;
    x.bottomRows(actions.rows()) = actions;
    x.colwise() -= mean;
    x.array().colwise() /= stddev.array();
    return x;
  }
};

/// Smooth, differentiable squashing of raw log-variance into (lo, hi), with
/// raw = 0 mapping to log-variance 0 whenever lo < 0 < hi.
struct LogvarBounds {
  double lo = -10.0;
  double hi = 4.0;

  double offset() const { return (lo < 0.0 && hi > 0.0) ? std::log(-lo / hi) : 0.0; }
  double squash(double raw) const { return lo + (hi - lo) / (1.0 + std::exp(-(raw + offset()))); }
  double squash_grad(double raw) const {
    const double s = 1.0 / (1.0 + std::exp(-(raw + offset())));
    return (hi - lo) * s * (1.0 - s);
  }
};

struct ModelArchitecture {
  int state_dim = 0;
  int action_dim = 0;
  std::vector<int> hidden{64, 64};
  int ensemble_size = 4;
  LogvarBounds logvar{};
  nn::OutputInit output_init = nn::OutputInit::Random;

  std::vector<int> dynamics_widths() const {
    std::vector<int> w{state_dim + action_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(2 * state_dim);
    return w;
  }
  std::vector<int> reward_widths() const {
    std::vector<int> w{state_dim + action_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(1);
    return w;
  }
};

/// Next-state distributions for a batch: columns are samples.
struct BatchPrediction {
  Mat mean;
  Mat logvar;
};

namespace detail {
inline void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + ": non-finite input");
}

inline void stack_batch(std::span<const Transition> batch, Mat& s, Mat& a, Mat& sn, Vec* r = nullptr) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto ds = batch.front().state.size();
  const auto da = batch.front().action.size();
  s.resize(ds, n);
  a.resize(da, n);
  sn.resize(ds, n);
  if (r) r->resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& t = batch[static_cast<std::size_t>(j)];
    if (t.state.size() != ds || t.action.size() != da || t.next_state.size() != ds)
      throw ShapeError("batch: inconsistent transition dimensions");
    s.col(j) = t.state;
    a.col(j) = t.action;
    sn.col(j) = t.next_state;
    if (r) (*r)[j] = t.reward;
  }
}
}  // namespace detail

/// Maps a network's raw output to (mean, logvar) with delta parameterization.
inline BatchPrediction gaussian_head(const Mat& raw, const Mat& states, const LogvarBounds& bounds) {
  const auto d = states.rows();
  BatchPrediction p;
  p.mean = states + raw.topRows(d);
  p.logvar = raw.bottomRows(d).unaryExpr([&](double v) { return bounds.squash(v); });
  return p;
}

struct LossAndGrad {
  double loss = 0.0;
  nn::Params grads;
};

/// Summed Gaussian negative log-likelihood (without the constant term):
///   sum_n (mu - s')^T Sigma^{-1} (mu - s') + log det Sigma
/// together with exact parameter gradients.
inline LossAndGrad nll_loss(const nn::FeedforwardNet& net, const Normalizer& norm, const LogvarBounds& bounds,
                            std::span<const Transition> batch) {
  if (batch.empty()) throw InvalidArgument("nll_loss: empty batch");
  Mat s, a, sn;
  detail::stack_batch(batch, s, a, sn);
  const auto d = s.rows();
  if (net.output_dim() != 2 * d || net.input_dim() != s.rows() + a.rows())
    throw ShapeError("nll_loss: network shape does not match batch");

  const auto tape = net.forward_tape(norm.apply(s, a));
  const Mat& raw = tape.output;
  const Mat resid = s + raw.topRows(d) - sn;
  Mat grad_out(2 * d, s.cols());
  double loss = 0.0;
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double r = resid(i, j);
      const double rawlv = raw(d + i, j);
      const double lv = bounds.squash(rawlv);
      const double inv_var = std::exp(-lv);
      loss += r * r * inv_var + lv;
      grad_out(i, j) = 2.0 * r * inv_var;
      grad_out(d + i, j) = (1.0 - r * r * inv_var) * bounds.squash_grad(rawlv);
    }
  }
  return {loss, net.backward(tape, grad_out)};
}

/// Summed squared error of a scalar-output reward network.
inline LossAndGrad reward_mse_loss(const nn::FeedforwardNet& net, const Normalizer& norm,
                                   std::span<const Transition> batch) {
  if (batch.empty()) throw InvalidArgument("reward_mse_loss: empty batch");
  Mat s, a, sn;
  Vec r;
  detail::stack_batch(batch, s, a, sn, &r);
  const auto tape = net.forward_tape(norm.apply(s, a));
  const Vec err = tape.output.row(0).transpose() - r;
  Mat grad_out = 2.0 * err.transpose();
  return {err.squaredNorm(), net.backward(tape, grad_out)};
}

class EnsembleModel {
 public:
  EnsembleModel() = default;

  EnsembleModel(ModelArchitecture arch, const RngStream& rng)
      : arch_(std::move(arch)), normalizer_(Normalizer::identity(arch_.state_dim + arch_.action_dim)) {
    if (arch_.ensemble_size < 1) throw InvalidArgument("EnsembleModel: ensemble size must be >= 1");
    if (arch_.state_dim < 1 || arch_.action_dim < 1) throw InvalidArgument("EnsembleModel: dimensions must be >= 1");
    for (int b = 0; b < arch_.ensemble_size; ++b) {
      auto member_rng = rng.derive({0x6d656d62ULL, static_cast<std::uint64_t>(b)});
      members_.emplace_back(arch_.dynamics_widths(), member_rng, arch_.output_init);
    }
  }

  EnsembleModel(ModelArchitecture arch, Normalizer norm, std::vector<nn::FeedforwardNet> members)
      : arch_(std::move(arch)), normalizer_(std::move(norm)), members_(std::move(members)) {}

  std::size_t num_members() const noexcept { return members_.size(); }
  int state_dim() const noexcept { return arch_.state_dim; }
  int action_dim() const noexcept { return arch_.action_dim; }
  const ModelArchitecture& architecture() const noexcept { return arch_; }
  const Normalizer& normalizer() const noexcept { return normalizer_; }
  void set_normalizer(Normalizer n) { normalizer_ = std::move(n); }
  const nn::FeedforwardNet& member(std::size_t i) const { return members_.at(i); }
  nn::FeedforwardNet& member(std::size_t i) { return members_.at(i); }

  BatchPrediction predict_batch(std::size_t member_index, const Mat& states, const Mat& actions) const {
    if (member_index >= members_.size()) throw InvalidArgument("predict: member index out of range");
    if (states.rows() != arch_.state_dim || actions.rows() != arch_.action_dim || states.cols() != actions.cols())
      throw ShapeError("predict: input dimensions do not match model");
    detail::check_finite(states, "predict");
    detail::check_finite(actions, "predict");
    const Mat raw = members_[member_index].forward(normalizer_.apply(states, actions));
    return gaussian_head(raw, states, arch_.logvar);
  }

  DiagonalGaussian predict(std::size_t member_index, const Vec& state, const Vec& action) const {
    auto p = predict_batch(member_index, state, action);
    return DiagonalGaussian(p.mean.col(0), p.logvar.col(0).array().exp().matrix());
  }

 private:
  ModelArchitecture arch_;
  Normalizer normalizer_;
  std::vector<nn::FeedforwardNet> members_;
};

class RewardNet {
 public:
  RewardNet() = default;
  RewardNet(const ModelArchitecture& arch, const RngStream& rng)
      : state_dim_(arch.state_dim),
        action_dim_(arch.action_dim),
        normalizer_(Normalizer::identity(arch.state_dim + arch.action_dim)) {
    auto r = rng.derive({0x72657764ULL});
    net_ = nn::FeedforwardNet(arch.reward_widths(), r, arch.output_init);
  }
  RewardNet(int state_dim, int action_dim, Normalizer norm, nn::FeedforwardNet net)
      : state_dim_(state_dim), action_dim_(action_dim), normalizer_(std::move(norm)), net_(std::move(net)) {}

  Vec reward_batch(const Mat& states, const Mat& actions) const {
    if (states.rows() != state_dim_ || actions.rows() != action_dim_ || states.cols() != actions.cols())
      throw ShapeError("predict_reward: input dimensions do not match model");
    return net_.forward(normalizer_.apply(states, actions)).row(0).transpose();
  }

  double predict_reward(const Vec& state, const Vec& action) const {
    detail::check_finite(state, "predict_reward");
    detail::check_finite(action, "predict_reward");
    return reward_batch(state, action)[0];
  }

  int state_dim() const noexcept { return state_dim_; }
  int action_dim() const noexcept { return action_dim_; }
  const Normalizer& normalizer() const noexcept { return normalizer_; }
  void set_normalizer(Normalizer n) { normalizer_ = std::move(n); }
  const nn::FeedforwardNet& net() const noexcept { return net_; }
  nn::FeedforwardNet& net() noexcept { return net_; }

 private:
  int state_dim_ = 0;
  int action_dim_ = 0;
  Normalizer normalizer_;
  nn::FeedforwardNet net_;
};

struct TrainConfig {
  int epochs = 20;           // passes over each member's bootstrap sample
  int batch_size = 64;
  int reward_epochs = 20;
  bool bootstrap = true;
  nn::AdamConfig adam{};
};

struct TrainingReport {
  std::vector<double> member_losses;                     // mean NLL per sample, final pass
  std::vector<std::vector<double>> member_loss_history;  // mean NLL per sample after each pass
  double reward_mse = 0.0;
  long gradient_steps = 0;
};

namespace detail {

// Mean loss over `data` evaluated in fixed-size chunks.
template <typename LossFn>
double mean_loss(std::span<const Transition> data, LossFn&& fn) {
  double total = 0.0;
  constexpr std::size_t chunk = 256;
  for (std::size_t i = 0; i < data.size(); i += chunk) total += fn(data.subspan(i, std::min(chunk, data.size() - i)));
  return total / static_cast<double>(data.size());
}

template <typename GradFn>
long fit_network(nn::FeedforwardNet& net, std::span<const Transition> data, const TrainConfig& cfg, int epochs,
                 RngStream& rng, GradFn&& grad_fn, std::vector<double>* history,
                 const std::function<double()>& eval) {
  nn::Adam opt(net.params(), cfg.adam);
  std::vector<std::size_t> order(data.size());
  std::vector<Transition> mb;
  const auto bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  for (int e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t i = 0; i < order.size(); i += bs) {
      mb.clear();
      const std::size_t hi = std::min(order.size(), i + bs);
      for (std::size_t k = i; k < hi; ++k) mb.push_back(data[order[k]]);
      auto lg = grad_fn(net, std::span<const Transition>(mb));
      const double scale = 1.0 / static_cast<double>(mb.size());
      for (auto& g : lg.grads) {
        g.weight *= scale;
        g.bias *= scale;
      }
      opt.step(net.params(), lg.grads);
    }
    if (history) history->push_back(eval());
  }
  return opt.steps();
}

}  // namespace detail

/// n indices drawn uniformly with replacement.
inline std::vector<std::size_t> bootstrap_indices(RngStream& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = rng.index(n);
  return idx;
}

/// Refits the input normalizer on the buffer, then trains every ensemble
/// member on its own bootstrap resample (NLL) and the reward net on the full
/// buffer (MSE). Members train concurrently when workers > 1; the result is
/// independent of the worker count.
inline TrainingReport train_models(EnsembleModel& model, RewardNet& reward, const ReplayBuffer& buffer,
                                   const TrainConfig& cfg, const RngStream& rng, std::size_t workers = 1) {
  if (buffer.empty()) throw InvalidArgument("train_models: replay buffer is empty");
  const auto data = buffer.view();
  const Normalizer norm = Normalizer::fit(data);
  model.set_normalizer(norm);
  reward.set_normalizer(norm);

  const std::size_t B = model.num_members();
  TrainingReport report;
  report.member_losses.assign(B, 0.0);
  report.member_loss_history.assign(B, {});
  std::vector<long> steps(B + 1, 0);
  const auto bounds = model.architecture().logvar;

  parallel_for(B + 1, workers, [&](std::size_t job) {
    if (job < B) {
      auto member_rng = rng.derive({0x626f6f74ULL, job});
      std::vector<Transition> sample;
      sample.reserve(data.size());
      if (cfg.bootstrap) {
        for (std::size_t i : bootstrap_indices(member_rng, data.size())) sample.push_back(data[i]);
      } else {
        sample.assign(data.begin(), data.end());
      }
      auto& net = model.member(job);
      auto grad = [&](const nn::FeedforwardNet& n, std::span<const Transition> mb) {
        return nll_loss(n, norm, bounds, mb);
      };
      auto eval = [&]() -> double {
        return detail::mean_loss(std::span<const Transition>(sample), [&](std::span<const Transition> c) {
          return nll_loss(net, norm, bounds, c).loss;
        });
      };
      steps[job] = detail::fit_network(net, sample, cfg, cfg.epochs, member_rng, grad,
                                       &report.member_loss_history[job], eval);
      report.member_losses[job] =
          report.member_loss_history[job].empty() ? eval() : report.member_loss_history[job].back();
    } else {
      auto reward_rng = rng.derive({0x72657764ULL});
      auto grad = [&](const nn::FeedforwardNet& n, std::span<const Transition> mb) {
        return reward_mse_loss(n, norm, mb);
      };
      steps[job] = detail::fit_network(reward.net(), data, cfg, cfg.reward_epochs, reward_rng, grad, nullptr, {});
      report.reward_mse = detail::mean_loss(data, [&](std::span<const Transition> c) {
        return reward_mse_loss(reward.net(), norm, c).loss;
      });
    }
  });
  for (auto s : steps) report.gradient_steps += s;
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

namespace detail {
inline nlohmann::json params_to_json(const nn::FeedforwardNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.params()) {
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return {{"widths", net.widths()}, {"layers", layers}};
}

inline nn::FeedforwardNet params_from_json(const nlohmann::json& j) {
  auto widths = j.at("widths").get<std::vector<int>>();
  nn::Params params;
  for (const auto& l : j.at("layers")) {
    const auto rows = l.at("rows").get<Eigen::Index>();
    const auto cols = l.at("cols").get<Eigen::Index>();
    auto w = l.at("weight").get<std::vector<double>>();
    auto b = l.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows)
      throw ShapeError("checkpoint: layer size mismatch");
    params.push_back({Eigen::Map<Mat>(w.data(), rows, cols), Eigen::Map<Vec>(b.data(), rows)});
  }
  return nn::FeedforwardNet(std::move(widths), std::move(params));
}

inline nlohmann::json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
inline Vec vec_from_json(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}
}  // namespace detail

inline nlohmann::json checkpoint_to_json(const EnsembleModel& model, const RewardNet& reward) {
  const auto& arch = model.architecture();
  nlohmann::json members = nlohmann::json::array();
  for (std::size_t i = 0; i < model.num_members(); ++i) members.push_back(detail::params_to_json(model.member(i)));
  return {{"format", "mope2-checkpoint"},
          {"version", kCheckpointVersion},
          {"architecture",
           {{"state_dim", arch.state_dim},
            {"action_dim", arch.action_dim},
            {"hidden", arch.hidden},
            {"ensemble_size", arch.ensemble_size},
            {"logvar_min", arch.logvar.lo},
            {"logvar_max", arch.logvar.hi}}},
          {"normalizer", {{"mean", detail::vec_to_json(model.normalizer().mean)},
                          {"stddev", detail::vec_to_json(model.normalizer().stddev)}}},
          {"members", members},
          {"reward", detail::params_to_json(reward.net())}};
}

struct Checkpoint {
  EnsembleModel model;
  RewardNet reward;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "mope2-checkpoint") throw InvalidArgument("checkpoint: unrecognized format");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw InvalidArgument("checkpoint: unsupported version " + j.at("version").dump());
  const auto& a = j.at("architecture");
  ModelArchitecture arch;
  arch.state_dim = a.at("state_dim").get<int>();
  arch.action_dim = a.at("action_dim").get<int>();
  arch.hidden = a.at("hidden").get<std::vector<int>>();
  arch.ensemble_size = a.at("ensemble_size").get<int>();
  arch.logvar = {a.at("logvar_min").get<double>(), a.at("logvar_max").get<double>()};
  Normalizer norm{detail::vec_from_json(j.at("normalizer").at("mean")),
                  detail::vec_from_json(j.at("normalizer").at("stddev"))};
  std::vector<nn::FeedforwardNet> members;
  for (const auto& m : j.at("members")) members.push_back(detail::params_from_json(m));
  if (static_cast<int>(members.size()) != arch.ensemble_size) throw ShapeError("checkpoint: member count mismatch");
  return {EnsembleModel(arch, norm, std::move(members)),
          RewardNet(arch.state_dim, arch.action_dim, norm, detail::params_from_json(j.at("reward")))};
}

inline void save_checkpoint(const std::string& path, const EnsembleModel& model, const RewardNet& reward) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open checkpoint for writing: " + path);
  out << checkpoint_to_json(model, reward).dump() << '\n';
  if (!out) throw Error("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint: " + path);
  return checkpoint_from_json(nlohmann::json::parse(in));
}

}  // namespace mope2
