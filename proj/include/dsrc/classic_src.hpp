#pragma once

// Classical sparse-representation classification on raw vectors:
// a class-ordered, column-normalized dictionary of training samples, an
// accelerated proximal-gradient lasso solver, and the minimum class-residual
// decision rule.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "dsrc/error.hpp"

namespace dsrc {

struct Dictionary {
  Eigen::MatrixXd columns;                // d0 x n, unit l2 columns, grouped by class
  std::vector<int> labels;                // nondecreasing
  std::vector<double> column_norms;       // l2 norms before normalization
  std::vector<std::size_t> source_index;  // input sample index of each column
  double lipschitz = 0.0;                 // upper estimate of lambda_max(D^T D)

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(columns.rows()); }
};

/// Largest eigenvalue of D^T D by power iteration, inflated slightly so that
/// 1/L is a safe proximal step.
inline double lipschitz_constant(const Eigen::MatrixXd& d, int max_iters = 1000, double tol = 1e-12) {
  if (d.cols() == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Constant(d.cols(), 1.0 / std::sqrt(static_cast<double>(d.cols())));
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd w = d.transpose() * (d * v);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / nw;
    if (std::abs(next - lambda) <= tol * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda * 1.001;
}

/// Groups samples (columns) by class in ascending label order, keeping the
/// input order within a class, and scales every column to unit l2 norm.
inline Dictionary build_dictionary(const Eigen::MatrixXd& samples, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(samples.cols()) != labels.size())
    throw InvalidShape("build_dictionary: " + std::to_string(samples.cols()) + " samples but " +
                       std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw InvalidShape("build_dictionary: no training samples");
  if (!samples.allFinite()) throw InvalidInput("build_dictionary: non-finite training sample");
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
  Dictionary d;
  d.columns.resize(samples.rows(), samples.cols());
  for (std::size_t j = 0; j < order.size(); ++j) {
    const auto src = static_cast<Eigen::Index>(order[j]);
    const double norm = samples.col(src).norm();
    if (norm == 0.0) throw DegenerateSample(order[j]);
    d.columns.col(static_cast<Eigen::Index>(j)) = samples.col(src) / norm;
    d.labels.push_back(labels[order[j]]);
    d.column_norms.push_back(norm);
    d.source_index.push_back(order[j]);
  }
  d.lipschitz = lipschitz_constant(d.columns);
  return d;
}

struct LassoOptions {
  int max_iters = 2000;
  double tol = 1e-8;
};

struct LassoSolution {
  Eigen::VectorXd alpha;
  int iterations_used = 0;
  double final_objective = 0.0;
  std::vector<double> objective_trace;  // objective after each iteration, starting at alpha = 0
};

/// 1/2 ||x - D a||^2 + sum_i w_i |a_i|
inline double lasso_objective(const Eigen::MatrixXd& d, const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                              const Eigen::VectorXd& a) {
  return 0.5 * (x - d * a).squaredNorm() + w.cwiseProduct(a.cwiseAbs()).sum();
}

/// Weighted lasso by FISTA with function-value restart: whenever the
/// accelerated step would increase the objective, momentum is dropped and a
/// plain proximal-gradient step is taken instead, so the objective sequence
/// never increases. Stops when both the relative objective decrease and the
/// relative change of the iterate fall below tol; the objective alone is
/// quadratic in the coefficient error near the optimum and stops too early.
inline LassoSolution fista_lasso(const Eigen::MatrixXd& d, const Eigen::VectorXd& x, const Eigen::VectorXd& weights,
                                 double lipschitz, const LassoOptions& opt = {}) {
  const auto n = d.cols();
  if (x.size() != d.rows())
    throw InvalidShape("fista_lasso: sample has dimension " + std::to_string(x.size()) + ", dictionary " +
                       std::to_string(d.rows()));
  if (weights.size() != n) throw InvalidShape("fista_lasso: one weight per dictionary column required");
  if (!x.allFinite()) throw InvalidInput("fista_lasso: non-finite sample");
  if (!d.allFinite()) throw InvalidInput("fista_lasso: non-finite dictionary");
  if ((weights.array() <= 0.0).any() || !weights.allFinite())
    throw InvalidHyperparameter("fista_lasso: lambda must be positive and finite");
  if (opt.max_iters < 0 || !(opt.tol >= 0.0)) throw InvalidHyperparameter("fista_lasso: bad iteration options");

  LassoSolution sol;
  sol.alpha = Eigen::VectorXd::Zero(n);
  if (n == 0) return sol;
  const double L = lipschitz > 0.0 ? lipschitz : 1.0;
  const Eigen::VectorXd dtx = d.transpose() * x;
  const Eigen::VectorXd thresh = weights / L;

  auto prox_step = [&](const Eigen::VectorXd& y) {
    Eigen::VectorXd v = y - (d.transpose() * (d * y) - dtx) / L;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = thresh(i);
      v(i) = v(i) > t ? v(i) - t : (v(i) < -t ? v(i) + t : 0.0);
    }
    return v;
  };

  Eigen::VectorXd a = sol.alpha;
  Eigen::VectorXd y = a;
  double t = 1.0;
  double f = lasso_objective(d, x, weights, a);
  sol.objective_trace.push_back(f);
  int it = 0;
  while (it < opt.max_iters) {
    ++it;
    Eigen::VectorXd z = prox_step(y);
    double fz = lasso_objective(d, x, weights, z);
    if (fz > f) {
      t = 1.0;
      z = prox_step(a);
      fz = lasso_objective(d, x, weights, z);
      if (fz > f) {  // rounding only; stay put
        z = a;
        fz = f;
      }
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = z + ((t - 1.0) / t_next) * (z - a);
    t = t_next;
    const double decrease = f - fz;
    const double step = (z - a).norm();
    a = std::move(z);
    f = fz;
    sol.objective_trace.push_back(f);
    if (decrease <= opt.tol * std::max(std::abs(f), std::numeric_limits<double>::min()) &&
        step <= opt.tol * std::max(1.0, a.norm()))
      break;
  }
  sol.alpha = std::move(a);
  sol.iterations_used = it;
  sol.final_objective = f;
  return sol;
}

/// Lasso over a dictionary with a shared lambda0.
inline LassoSolution fista_lasso(const Dictionary& dict, const Eigen::VectorXd& x, double lambda0,
                                 const LassoOptions& opt = {}) {
  if (!(lambda0 > 0.0) || !std::isfinite(lambda0))
    throw InvalidHyperparameter("fista_lasso: lambda0 must be positive, got " + std::to_string(lambda0));
  return fista_lasso(dict.columns, x, Eigen::VectorXd::Constant(dict.columns.cols(), lambda0), dict.lipschitz, opt);
}

/// Residual ||x - D delta_k(alpha)||^2 for each class, ascending label order.
struct ClassResiduals {
  std::vector<int> classes;
  std::vector<double> residuals;

  /// Smallest residual; ties go to the smallest class id.
  int argmin() const {
    std::size_t best = 0;
    for (std::size_t k = 1; k < residuals.size(); ++k)
      if (residuals[k] < residuals[best]) best = k;
    return classes.at(best);
  }
};

/// Class-restricted residuals for a dictionary whose columns are grouped by
/// (nondecreasing) label.
inline ClassResiduals class_residuals(const Eigen::MatrixXd& d, const std::vector<int>& labels,
                                      const Eigen::VectorXd& x, const Eigen::VectorXd& alpha) {
  if (alpha.size() != d.cols() || labels.size() != static_cast<std::size_t>(d.cols()))
    throw InvalidShape("class residuals: code length must equal the number of dictionary columns");
  ClassResiduals out;
  std::size_t start = 0;
  while (start < labels.size()) {
    std::size_t end = start;
    while (end < labels.size() && labels[end] == labels[start]) ++end;
    const auto b = static_cast<Eigen::Index>(start), len = static_cast<Eigen::Index>(end - start);
    const Eigen::VectorXd recon = d.middleCols(b, len) * alpha.segment(b, len);
    out.classes.push_back(labels[start]);
    out.residuals.push_back((x - recon).squaredNorm());
    start = end;
  }
  return out;
}

/// argmin_k ||x - D delta_k(alpha)||^2.
inline int src_classify(const Dictionary& dict, const Eigen::VectorXd& x, const Eigen::VectorXd& alpha) {
  return class_residuals(dict.columns, dict.labels, x, alpha).argmin();
}

struct SrcOptions {
  LassoOptions lasso;
  /// Scale each test sample to unit l2 norm before coding.
  bool normalize_test = true;
};

/// Codes every test column against the training dictionary and classifies it.
inline std::vector<int> src_pipeline(const Eigen::MatrixXd& train, const std::vector<int>& train_labels,
                                     const Eigen::MatrixXd& test, double lambda0, const SrcOptions& opt = {}) {
  if (test.cols() == 0) return {};
  const Dictionary dict = build_dictionary(train, train_labels);
  if (test.rows() != train.rows())
    throw InvalidShape("src_pipeline: test dimension " + std::to_string(test.rows()) + " != train dimension " +
                       std::to_string(train.rows()));
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(test.cols()));
  for (Eigen::Index j = 0; j < test.cols(); ++j) {
    Eigen::VectorXd x = test.col(j);
    if (opt.normalize_test) {
      const double nx = x.norm();
      if (nx > 0.0 && std::isfinite(nx)) x /= nx;
    }
    try {
      const auto sol = fista_lasso(dict, x, lambda0, opt.lasso);
      out.push_back(src_classify(dict, x, sol.alpha));
    } catch (const InvalidInput& e) {
      throw InvalidInput("test sample " + std::to_string(j) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dsrc
