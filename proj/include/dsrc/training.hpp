#pragma once

// Two-stage optimization: reconstruction-only pretraining of the
// encoder/decoder in minibatches, then full-batch joint training of
//
//   ||Z - Z Theta||_F^2 + lambda0 ||A||_p^p + lambda1 ||X - X_hat||_F^2
//
// over the encoder, decoder and code matrix with ADAM.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsrc/autodiff.hpp"
#include "dsrc/error.hpp"
#include "dsrc/network.hpp"
#include "dsrc/random.hpp"
#include "dsrc/sparse_coding.hpp"
#include "dsrc/tensor.hpp"

namespace dsrc {

struct TrainConfig {
  double lambda0 = 1.0;
  double lambda1 = 8.0;
  double learning_rate = 1e-3;
  int pretrain_epochs = 2000;
  std::size_t pretrain_batch = 100;
  int joint_iters = 1000;
  double p = 1.0;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lp_clamp = ad::kDefaultLpClamp;
  SparseCodingMode mode = SparseCodingMode::structured;
  /// Worker count for the conv kernels; 1 keeps runs bitwise reproducible.
  int threads = 1;

  void validate() const {
    auto bad = [](const std::string& m) { throw InvalidHyperparameter("config: " + m); };
    if (!(lambda0 >= 0.0) || !std::isfinite(lambda0)) bad("lambda0 must be finite and >= 0");
    if (!(lambda1 >= 0.0) || !std::isfinite(lambda1)) bad("lambda1 must be finite and >= 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be > 0");
    if (pretrain_epochs < 0) bad("pretrain_epochs must be >= 0");
    if (pretrain_batch < 1) bad("pretrain_batch must be >= 1");
    if (joint_iters < 0) bad("joint_iters must be >= 0");
    if (!supported_norm(p)) bad("p must be one of 0.5, 1, 1.5, 2");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) bad("adam_beta1 must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) bad("adam_beta2 must lie in [0, 1)");
    if (!(adam_eps > 0.0)) bad("adam_eps must be > 0");
    if (!(lp_clamp > 0.0)) bad("lp_clamp must be > 0");
    if (threads < 1) bad("threads must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lambda0", c.lambda0},
       {"lambda1", c.lambda1},
       {"learning_rate", c.learning_rate},
       {"pretrain_epochs", c.pretrain_epochs},
       {"pretrain_batch", c.pretrain_batch},
       {"joint_iters", c.joint_iters},
       {"p", c.p},
       {"seed", c.seed},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"lp_clamp", c.lp_clamp},
       {"mode", c.mode},
       {"threads", c.threads}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const char* known[] = {"lambda0",   "lambda1",    "learning_rate", "pretrain_epochs", "pretrain_batch",
                                "joint_iters", "p",        "seed",          "adam_beta1",      "adam_beta2",
                                "adam_eps",  "lp_clamp",   "mode",          "threads"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
        std::end(known))
      throw InvalidHyperparameter("config: unknown key '" + it.key() + "'");
  const TrainConfig d;
  c.lambda0 = j.value("lambda0", d.lambda0);
  c.lambda1 = j.value("lambda1", d.lambda1);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.pretrain_epochs = j.value("pretrain_epochs", d.pretrain_epochs);
  c.pretrain_batch = j.value("pretrain_batch", d.pretrain_batch);
  c.joint_iters = j.value("joint_iters", d.joint_iters);
  c.p = j.value("p", d.p);
  c.seed = j.value("seed", d.seed);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.lp_clamp = j.value("lp_clamp", d.lp_clamp);
  c.mode = j.value("mode", d.mode);
  c.threads = j.value("threads", d.threads);
}

/// ADAM with bias correction; moments are keyed by parameter position, so
/// the same parameter list must be passed on every step.
template <typename T = double>
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  explicit Adam(const TrainConfig& c) : Adam(c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps) {}

  std::uint64_t steps() const noexcept { return t_; }

  void step(const std::vector<Parameter<T>*>& params) {
    for (const auto* p : params)
      for (T g : p->grad.data())
        if (!std::isfinite(static_cast<double>(g)))
          throw DivergedTraining("non-finite gradient in parameter '" + p->name + "'");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    if (m_.size() != params.size()) throw InvalidShape("adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto w = params[k]->value.data();
      auto g = params[k]->grad.data();
      auto m = m_[k].data();
      auto v = v_[k].data();
      if (w.size() != m.size()) throw InvalidShape("adam: parameter '" + params[k]->name + "' changed shape");
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = b1_ * static_cast<double>(m[i]) + (1.0 - b1_) * gi;
        const double vi = b2_ * static_cast<double>(v[i]) + (1.0 - b2_) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        w[i] -= static_cast<T>(lr_ * (mi / c1) / (std::sqrt(vi / c2) + eps_));
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

/// One row per iteration (joint stage) or per epoch (pretraining). The
/// regularizer and reconstruction columns hold the weighted terms, so
/// total = selfexpr + reg + recon.
struct LossRecord {
  std::size_t iter = 0;
  double total = 0, selfexpr = 0, reg = 0, recon = 0, seconds = 0;
};

struct LossTrace {
  std::vector<LossRecord> records;

  std::size_t size() const { return records.size(); }
  bool all_finite() const {
    for (const auto& r : records)
      if (!std::isfinite(r.total) || !std::isfinite(r.selfexpr) || !std::isfinite(r.reg) || !std::isfinite(r.recon))
        return false;
    return true;
  }

  /// Trailing mean of `total` over up to `window` records ending at i.
  double windowed_mean(std::size_t i, std::size_t window) const {
    const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    double s = 0;
    for (std::size_t k = lo; k <= i; ++k) s += records[k].total;
    return s / static_cast<double>(i + 1 - lo);
  }

  std::string csv() const {
    std::ostringstream os;
    os << "iter,total,selfexpr,reg,recon,seconds\n" << std::setprecision(17);
    for (const auto& r : records)
      os << r.iter << ',' << r.total << ',' << r.selfexpr << ',' << r.reg << ',' << r.recon << ',' << r.seconds << '\n';
    return os.str();
  }

  void write_csv(const std::string& path) const { io::write_text(path, csv()); }
};

namespace detail {
inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
Tensor<T> gather_samples(const Tensor<T>& x, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  const std::size_t per = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = end - begin;
  Tensor<T> out(s);
  for (std::size_t k = begin; k < end; ++k)
    std::copy_n(x.data().data() + idx[k] * per, per, out.data().data() + (k - begin) * per);
  return out;
}
}  // namespace detail

/// Reconstruction-only minibatch training. Samples are reshuffled every
/// epoch from a seeded stream; the recorded loss of an epoch is the sum of
/// its minibatch losses, each measured before the corresponding step.
template <typename T>
LossTrace pretrain(Network<T>& net, const Tensor<T>& images, const TrainConfig& cfg) {
  cfg.validate();
  if (images.rank() != 4 || images.dim(0) == 0) throw InvalidShape("pretrain: images must be [N, C, H, W]");
  LossTrace trace;
  if (cfg.pretrain_epochs == 0) return trace;
  Adam<T> adam(cfg);
  auto params = net.parameters();
  const std::size_t n = images.dim(0);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(cfg.seed, 0x7072657472ULL));
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    for (std::size_t b = 0; b < n; b += cfg.pretrain_batch) {
      const std::size_t e = std::min(n, b + cfg.pretrain_batch);
      const Tensor<T> xb = detail::gather_samples(images, order, b, e);
      for (auto* p : params) p->zero_grad();
      Graph<T> g(cfg.threads);
      auto enc = bind(g, net.encoder);
      auto dec = bind(g, net.decoder);
      auto x = g.input(xb);
      auto loss = ad::frobenius_sq(x - decode(net.spec, dec, encode(net.spec, enc, x)));
      const double l = static_cast<double>(loss.value().item());
      if (!std::isfinite(l)) throw DivergedTraining("pretrain: non-finite loss at epoch " + std::to_string(epoch));
      g.backward(loss);
      adam.step(params);
      epoch_loss += l;
    }
    trace.records.push_back({static_cast<std::size_t>(epoch), epoch_loss, 0.0, 0.0, epoch_loss, detail::seconds_since(t0)});
  }
  for (auto* p : params) p->zero_grad();
  return trace;
}

/// Terms of the joint objective at the current parameters; values are
/// weighted as they enter the total.
struct JointTerms {
  double selfexpr = 0, reg = 0, recon = 0;
  double total() const { return selfexpr + reg + recon; }
};

namespace detail {
/// Builds the joint loss on `g` and returns (total, selfexpr, reg, recon).
template <typename T>
std::array<Var<T>, 4> joint_graph(Graph<T>& g, Network<T>& net, SparseCodingLayer<T>& layer, const Tensor<T>& x,
                                  const TrainConfig& cfg) {
  auto enc = bind(g, net.encoder);
  auto dec = bind(g, net.decoder);
  auto coeffs = g.param(layer.coeffs);
  auto xv = g.input(x);
  auto z = encode(net.spec, enc, xv);
  auto zh = layer.mode == SparseCodingMode::structured ? apply(layer, coeffs, z) : apply_full(layer, coeffs, z);
  auto selfexpr = ad::frobenius_sq(z - zh);
  auto reg = static_cast<T>(cfg.lambda0) * regularize(layer, coeffs, cfg.p, cfg.lp_clamp);
  auto recon = static_cast<T>(cfg.lambda1) * ad::frobenius_sq(xv - decode(net.spec, dec, zh));
  auto total = selfexpr + reg + recon;
  return {total, selfexpr, reg, recon};
}

template <typename T>
void check_joint_inputs(const Network<T>& net, const SparseCodingLayer<T>& layer, const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(0) != layer.n + layer.m)
    throw InvalidShape("joint training: expected " + std::to_string(layer.n + layer.m) +
                       " images (train first, then test), got " + shape_str(x.shape()));
  (void)net;
}
}  // namespace detail

/// Evaluates the joint objective without touching gradients.
template <typename T>
JointTerms joint_terms(Network<T>& net, SparseCodingLayer<T>& layer, const Tensor<T>& x, const TrainConfig& cfg) {
  detail::check_joint_inputs(net, layer, x);
  Graph<T> g(cfg.threads);
  auto v = detail::joint_graph(g, net, layer, x, cfg);
  return {static_cast<double>(v[1].value().item()), static_cast<double>(v[2].value().item()),
          static_cast<double>(v[3].value().item())};
}

/// Accumulates gradients of the joint objective into every parameter and
/// returns the loss terms (used by the finite-difference checks).
template <typename T>
JointTerms joint_backward(Network<T>& net, SparseCodingLayer<T>& layer, const Tensor<T>& x, const TrainConfig& cfg) {
  detail::check_joint_inputs(net, layer, x);
  Graph<T> g(cfg.threads);
  auto v = detail::joint_graph(g, net, layer, x, cfg);
  JointTerms t{static_cast<double>(v[1].value().item()), static_cast<double>(v[2].value().item()),
               static_cast<double>(v[3].value().item())};
  g.backward(v[0]);
  return t;
}

enum class TrainStatus { converged, not_converged };

NLOHMANN_JSON_SERIALIZE_ENUM(TrainStatus, {{TrainStatus::converged, "CONVERGED"},
                                           {TrainStatus::not_converged, "NOT_CONVERGED"}})

/// Convergence test on a joint-stage trace. A run is NOT_CONVERGED when a
/// value is non-finite, when the loss diverges (final loss not below the
/// initial one, or the trailing-window mean ending more than `rise_tol`
/// above its best value after `warmup`), or when the regularizer keeps
/// chattering at the end. Coefficients that keep crossing zero under p < 1
/// show up in the last test. Brief rises from ADAM noise are tolerated.
struct ConvergenceRule {
  std::size_t window = 20;
  std::size_t warmup = 50;
  double rise_tol = 0.1;
  // Over the last settle_window iterations, the regularizer's path length
  // minus its net change, per iteration and coefficient, may be at most
  // chatter_tol * lambda0 * learning_rate. Under p = 1 a coefficient pinned
  // at zero moves the term by O(lambda0 * lr) per step; under p = 0.5 by
  // O(lambda0 * sqrt(lr)).
  std::size_t settle_window = 100;
  double chatter_tol = 0.02;
};

struct ConvergenceReport {
  TrainStatus status = TrainStatus::converged;
  std::string reason;
};

/// `chatter_unit` is lambda0 * learning_rate * (number of coefficients);
/// zero disables the chatter test.
inline ConvergenceReport assess_convergence(const LossTrace& trace, double chatter_unit,
                                            const ConvergenceRule& rule = {}) {
  if (!trace.all_finite()) return {TrainStatus::not_converged, "non-finite loss"};
  const auto& r = trace.records;
  if (r.size() < 2) return {};
  if (!(r.back().total < r.front().total)) {
    std::ostringstream os;
    os << "loss did not decrease (" << r.front().total << " -> " << r.back().total << ")";
    return {TrainStatus::not_converged, os.str()};
  }
  if (r.size() > rule.warmup + 1) {
    double best = trace.windowed_mean(rule.warmup, rule.window);
    std::size_t best_at = rule.warmup;
    for (std::size_t i = rule.warmup + 1; i < r.size(); ++i)
      if (const double w = trace.windowed_mean(i, rule.window); w < best) best = w, best_at = i;
    const double last = trace.windowed_mean(r.size() - 1, rule.window);
    if (last > best * (1.0 + rule.rise_tol)) {
      std::ostringstream os;
      os << "windowed loss ended at " << last << ", above its minimum " << best << " at iteration " << best_at;
      return {TrainStatus::not_converged, os.str()};
    }
  }
  if (chatter_unit > 0 && r.size() > rule.settle_window && rule.settle_window > 1) {
    const std::size_t first = r.size() - rule.settle_window;
    double path = 0;
    for (std::size_t i = first + 1; i < r.size(); ++i) path += std::abs(r[i].reg - r[i - 1].reg);
    const double excess = path - std::abs(r.back().reg - r[first].reg);
    const double chatter = excess / (static_cast<double>(rule.settle_window) * chatter_unit);
    if (chatter > rule.chatter_tol) {
      std::ostringstream os;
      os << "regularizer oscillates over the last " << rule.settle_window << " iterations (chatter " << chatter
         << " per coefficient step, limit " << rule.chatter_tol << ")";
      return {TrainStatus::not_converged, os.str()};
    }
  }
  return {};
}

struct JointResult {
  LossTrace trace;
  ConvergenceReport convergence;
  std::size_t iterations = 0;
};

/// Full-batch joint training. `x` holds the n training images followed by
/// the m test images. ADAM state starts fresh. A non-finite loss or
/// gradient ends the run: for p < 1 it is reported as NOT_CONVERGED, for
/// other norms it raises DivergedTraining.
template <typename T>
JointResult train_joint(Network<T>& net, SparseCodingLayer<T>& layer, const Tensor<T>& x, const TrainConfig& cfg,
                        const ConvergenceRule& rule = {}) {
  cfg.validate();
  detail::check_joint_inputs(net, layer, x);
  if (cfg.mode != layer.mode) throw InvalidHyperparameter("train_joint: config mode does not match the layer");
  JointResult res;
  Adam<T> adam(cfg);
  auto params = net.parameters();
  params.push_back(&layer.coeffs);
  const auto t0 = std::chrono::steady_clock::now();
  for (int it = 0; it < cfg.joint_iters; ++it) {
    for (auto* p : params) p->zero_grad();
    Graph<T> g(cfg.threads);
    auto v = detail::joint_graph(g, net, layer, x, cfg);
    LossRecord r{static_cast<std::size_t>(it),
                 static_cast<double>(v[0].value().item()),
                 static_cast<double>(v[1].value().item()),
                 static_cast<double>(v[2].value().item()),
                 static_cast<double>(v[3].value().item()),
                 0.0};
    try {
      if (!std::isfinite(r.total)) throw DivergedTraining("joint: non-finite loss at iteration " + std::to_string(it));
      g.backward(v[0]);
      adam.step(params);
    } catch (const DivergedTraining& e) {
      r.seconds = detail::seconds_since(t0);
      res.trace.records.push_back(r);
      res.iterations = static_cast<std::size_t>(it) + 1;
      if (cfg.p < 1.0) {
        res.convergence = {TrainStatus::not_converged, e.what()};
        return res;
      }
      throw;
    }
    layer.project();
    r.seconds = detail::seconds_since(t0);
    res.trace.records.push_back(r);
  }
  for (auto* p : params) p->zero_grad();
  res.iterations = static_cast<std::size_t>(cfg.joint_iters);
  res.convergence = assess_convergence(
      res.trace, cfg.lambda0 * cfg.learning_rate * static_cast<double>(layer.coeffs.value.size()), rule);
  return res;
}

}  // namespace dsrc
