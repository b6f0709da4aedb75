#pragma once

// Minimum-residual classification in embedding space, accuracy reports,
// fold plans, and coefficient heatmaps.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dsrc/data_io.hpp"
#include "dsrc/error.hpp"
#include "dsrc/image_codec.hpp"
#include "dsrc/random.hpp"
#include "dsrc/sparse_coding.hpp"

namespace dsrc {

struct Classification {
  std::vector<int> classes;                  // sorted distinct training labels
  std::vector<int> predictions;              // one per test sample
  std::vector<std::vector<double>> residuals;  // m x classes.size()
};

/// For each test column j: argmin_k ||z_j - Z_train delta_k(a_j)||^2, where
/// delta_k keeps the code entries of training samples labelled k. Training
/// columns need not be grouped by class. Ties go to the smallest class id.
inline Classification dsrc_classify(const Eigen::MatrixXd& z_train, const std::vector<int>& train_labels,
                                    const SparseCodes& codes, const Eigen::MatrixXd& z_test) {
  const auto n = static_cast<std::size_t>(z_train.cols());
  if (codes.n != n) throw InvalidShape("dsrc_classify: codes have " + std::to_string(codes.n) + " rows, Z_train has " +
                                       std::to_string(n) + " columns");
  if (train_labels.size() != n) throw InvalidShape("dsrc_classify: train label count != Z_train columns");
  if (codes.values.size() != codes.n * codes.m) throw InvalidShape("dsrc_classify: code matrix size != n*m");
  if (static_cast<std::size_t>(z_test.cols()) != codes.m || z_test.rows() != z_train.rows())
    throw InvalidShape("dsrc_classify: Z_test must be d_z x m");
  Classification out;
  out.classes = train_labels;
  std::sort(out.classes.begin(), out.classes.end());
  out.classes.erase(std::unique(out.classes.begin(), out.classes.end()), out.classes.end());
  std::map<int, std::size_t> slot;
  for (std::size_t k = 0; k < out.classes.size(); ++k) slot[out.classes[k]] = k;
  const std::size_t nk = out.classes.size();
  for (std::size_t j = 0; j < codes.m; ++j) {
    Eigen::MatrixXd recon = Eigen::MatrixXd::Zero(z_train.rows(), static_cast<Eigen::Index>(nk));
    for (std::size_t i = 0; i < n; ++i) {
      const double a = codes.at(i, j);
      if (a != 0.0) recon.col(static_cast<Eigen::Index>(slot[train_labels[i]])) += a * z_train.col(static_cast<Eigen::Index>(i));
    }
    std::vector<double> res(nk);
    std::size_t best = 0;
    for (std::size_t k = 0; k < nk; ++k) {
      res[k] = (z_test.col(static_cast<Eigen::Index>(j)) - recon.col(static_cast<Eigen::Index>(k))).squaredNorm();
      if (res[k] < res[best]) best = k;
    }
    out.predictions.push_back(out.classes[best]);
    out.residuals.push_back(std::move(res));
  }
  return out;
}

struct ClassificationReport {
  std::vector<int> predictions;
  std::vector<int> true_labels;
  int num_classes = 0;
  double accuracy = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<int> residual_classes;
  std::vector<std::vector<double>> residuals;
};

inline ClassificationReport make_report(const std::vector<int>& predictions, const std::vector<int>& true_labels,
                                        int num_classes, const Classification* detail = nullptr) {
  if (predictions.size() != true_labels.size())
    throw InvalidShape("report: " + std::to_string(predictions.size()) + " predictions for " +
                       std::to_string(true_labels.size()) + " labels");
  ClassificationReport r;
  r.predictions = predictions;
  r.true_labels = true_labels;
  for (int v : predictions) num_classes = std::max(num_classes, v + 1);
  for (int v : true_labels) num_classes = std::max(num_classes, v + 1);
  r.num_classes = num_classes;
  const auto k = static_cast<std::size_t>(num_classes);
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] < 0 || true_labels[i] < 0) throw InvalidInput("report: negative label");
    ++r.confusion[static_cast<std::size_t>(true_labels[i])][static_cast<std::size_t>(predictions[i])];
    hits += predictions[i] == true_labels[i];
  }
  r.accuracy = predictions.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(predictions.size());
  if (detail) {
    r.residual_classes = detail->classes;
    r.residuals = detail->residuals;
  }
  return r;
}

inline void to_json(nlohmann::json& j, const ClassificationReport& r) {
  j = {{"accuracy", r.accuracy},
       {"num_classes", r.num_classes},
       {"confusion", r.confusion},
       {"predictions", r.predictions},
       {"true_labels", r.true_labels},
       {"residual_classes", r.residual_classes},
       {"residuals", r.residuals}};
}

inline void from_json(const nlohmann::json& j, ClassificationReport& r) {
  j.at("accuracy").get_to(r.accuracy);
  j.at("num_classes").get_to(r.num_classes);
  j.at("confusion").get_to(r.confusion);
  j.at("predictions").get_to(r.predictions);
  j.at("true_labels").get_to(r.true_labels);
  r.residual_classes = j.value("residual_classes", std::vector<int>{});
  r.residuals = j.value("residuals", std::vector<std::vector<double>>{});
}

// ---------------------------------------------------------------------------
// Folds

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

struct FoldPlan {
  std::vector<Fold> folds;
  double holdout = 0.2;
  std::uint64_t seed = 0;
};

struct FoldOptions {
  std::size_t num_folds = 5;
  double holdout = 0.2;
  std::uint64_t seed = 0;
  /// When set, each fold first draws this per-class subset (train/test
  /// counts) instead of splitting the whole dataset by `holdout`.
  std::optional<SubsetSpec> subset;
};

/// Throws InvalidFold if the fold overlaps, indexes out of range, or tests a
/// class that has no training sample.
inline void validate_fold(const Fold& f, const std::vector<int>& labels) {
  std::vector<char> seen(labels.size(), 0);
  std::vector<char> has_train;
  for (std::size_t i : f.train) {
    if (i >= labels.size()) throw InvalidFold("fold: train index out of range");
    if (seen[i]) throw InvalidFold("fold: sample " + std::to_string(i) + " repeated");
    seen[i] = 1;
    const auto k = static_cast<std::size_t>(labels[i]);
    if (has_train.size() <= k) has_train.resize(k + 1, 0);
    has_train[k] = 1;
  }
  for (std::size_t i : f.test) {
    if (i >= labels.size()) throw InvalidFold("fold: test index out of range");
    if (seen[i]) throw InvalidFold("fold: sample " + std::to_string(i) + " in both train and test");
    seen[i] = 1;
    const auto k = static_cast<std::size_t>(labels[i]);
    if (k >= has_train.size() || !has_train[k])
      throw InvalidFold("fold: class " + std::to_string(labels[i]) + " has test samples but no training samples");
  }
  if (f.test.empty()) throw InvalidFold("fold: empty test set");
}

/// Stratified random folds. Every fold is drawn independently from its own
/// seed derive_seed(opt.seed, fold); folds are resampled, not a partition.
inline FoldPlan make_fold_plan(const LabeledDataset& ds, const FoldOptions& opt) {
  if (opt.num_folds < 1) throw InvalidHyperparameter("folds: need at least one fold");
  if (!(opt.holdout > 0.0 && opt.holdout < 1.0)) throw InvalidHyperparameter("folds: holdout must lie in (0, 1)");
  if (ds.num_classes < 2) throw InvalidFold("folds: need at least 2 classes");
  FoldPlan plan;
  plan.holdout = opt.holdout;
  plan.seed = opt.seed;
  std::vector<std::size_t> pool = ds.train;
  pool.insert(pool.end(), ds.test.begin(), ds.test.end());
  std::sort(pool.begin(), pool.end());
  for (std::size_t f = 0; f < opt.num_folds; ++f) {
    Fold fold;
    fold.seed = derive_seed(opt.seed, f);
    if (opt.subset) {
      SubsetSpec s = *opt.subset;
      s.seed = fold.seed;
      auto sel = subsample_indices(ds, s);
      fold.train = std::move(sel.train);
      fold.test = std::move(sel.test);
    } else {
      std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
      for (std::size_t i : pool) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
      for (std::size_t k = 0; k < by_class.size(); ++k) {
        auto idx = by_class[k];
        if (idx.empty()) continue;
        Rng rng(derive_seed(fold.seed, k));
        rng.shuffle(idx);
        auto held = static_cast<std::size_t>(std::llround(opt.holdout * static_cast<double>(idx.size())));
        held = std::min(held, idx.size() - 1);
        std::vector<std::size_t> te(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(held));
        std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(held), idx.end());
        std::sort(te.begin(), te.end());
        std::sort(tr.begin(), tr.end());
        fold.train.insert(fold.train.end(), tr.begin(), tr.end());
        fold.test.insert(fold.test.end(), te.begin(), te.end());
      }
    }
    validate_fold(fold, ds.labels);
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

struct FoldSummary {
  std::vector<double> accuracies;
  std::vector<std::uint64_t> fold_seeds;
  std::uint64_t seed = 0;
  double mean = 0;
  /// Sample standard deviation (n - 1 denominator); 0 for one fold.
  double std = 0;
};

inline void to_json(nlohmann::json& j, const FoldSummary& s) {
  j = {{"accuracies", s.accuracies}, {"mean", s.mean}, {"std", s.std}, {"seed", s.seed}, {"fold_seeds", s.fold_seeds}};
}

/// Predicts labels for ds.test given ds.train (a dataset produced by select()).
using FoldRunner = std::function<std::vector<int>(const LabeledDataset&)>;

inline FoldSummary accuracy_fivefold(const LabeledDataset& ds, const FoldRunner& runner, const FoldPlan& plan) {
  if (ds.num_classes < 2) throw InvalidFold("evaluation: need at least 2 classes");
  FoldSummary s;
  s.seed = plan.seed;
  for (const auto& f : plan.folds) {
    validate_fold(f, ds.labels);
    const auto sub = select(ds, f.train, f.test);
    const auto pred = runner(sub);
    const auto truth = sub.labels_of(sub.test);
    s.accuracies.push_back(make_report(pred, truth, ds.num_classes).accuracy);
    s.fold_seeds.push_back(f.seed);
  }
  const double n = static_cast<double>(s.accuracies.size());
  if (n > 0) s.mean = std::accumulate(s.accuracies.begin(), s.accuracies.end(), 0.0) / n;
  if (n > 1) {
    double ss = 0;
    for (double a : s.accuracies) ss += (a - s.mean) * (a - s.mean);
    s.std = std::sqrt(ss / (n - 1));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Coefficient maps

/// Mean over test samples of the share of |code| mass on training samples of
/// the true class; an all-zero code column contributes 0.
inline double class_mass_concentration(const SparseCodes& codes, const std::vector<int>& true_labels) {
  if (true_labels.size() != codes.m) throw InvalidShape("mass concentration: one true label per test sample");
  if (codes.m == 0) return 0.0;
  double sum = 0;
  for (std::size_t j = 0; j < codes.m; ++j) {
    double total = 0, own = 0;
    for (std::size_t i = 0; i < codes.n; ++i) {
      const double a = std::abs(codes.at(i, j));
      total += a;
      if (codes.train_labels[i] == true_labels[j]) own += a;
    }
    if (total > 0) sum += own / total;
  }
  return sum / static_cast<double>(codes.m);
}

/// |A^T| as an m x n image (row = test sample, column = training sample),
/// scaled so the largest magnitude is white. Rows and columns are stably
/// ordered by label when labels are known.
inline GrayImage code_heatmap(const SparseCodes& codes) {
  if (codes.n == 0 || codes.m == 0) throw InvalidShape("heatmap: empty code matrix");
  auto order = [](std::size_t count, const std::vector<int>& labels) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (labels.size() == count)
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
    return idx;
  };
  const auto cols = order(codes.n, codes.train_labels);
  const auto rows = order(codes.m, codes.test_labels);
  double mx = 0;
  for (double v : codes.values) mx = std::max(mx, std::abs(v));
  GrayImage img{codes.n, codes.m, std::vector<double>(codes.n * codes.m, 0.0)};
  if (mx > 0)
    for (std::size_t r = 0; r < codes.m; ++r)
      for (std::size_t c = 0; c < codes.n; ++c) img.pixels[r * codes.n + c] = std::abs(codes.at(cols[c], rows[r])) / mx;
  return img;
}

/// Writes the heatmap as binary PGM, plus a PNG copy if `png_path` is given.
inline void export_code_heatmap(const SparseCodes& codes, const std::string& pgm_path,
                                const std::string& png_path = {}) {
  const auto img = code_heatmap(codes);
  write_pgm(img, pgm_path);
  if (!png_path.empty()) write_png(img, png_path);
}

}  // namespace dsrc
