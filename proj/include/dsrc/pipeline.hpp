#pragma once

// End-to-end runs on a LabeledDataset split: classical SRC on raw pixels and
// the deep pipeline (pretrain, joint training, code extraction, residual
// classification).

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <vector>

#include "dsrc/checkpoint.hpp"
#include "dsrc/classic_src.hpp"
#include "dsrc/data_io.hpp"
#include "dsrc/evaluation.hpp"
#include "dsrc/network.hpp"
#include "dsrc/sparse_coding.hpp"
#include "dsrc/training.hpp"

namespace dsrc {

/// Classical SRC on flattened pixels of ds.train / ds.test.
inline std::vector<int> run_src(const LabeledDataset& ds, double lambda0, const SrcOptions& opt = {}) {
  return src_pipeline(ds.columns(ds.train), ds.labels_of(ds.train), ds.columns(ds.test), lambda0, opt);
}

/// Training indices stably sorted by label, so rows of A form class blocks.
inline std::vector<std::size_t> class_ordered(const LabeledDataset& ds, std::vector<std::size_t> idx) {
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return ds.labels[a] < ds.labels[b]; });
  return idx;
}

/// Embeddings as an Eigen matrix (d_z x N).
inline Eigen::MatrixXd to_eigen(const Tensor<double>& z) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(z.dim(0)), static_cast<Eigen::Index>(z.dim(1)));
  for (std::size_t r = 0; r < z.dim(0); ++r)
    for (std::size_t c = 0; c < z.dim(1); ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = z.at(r, c);
  return out;
}

struct DsrcRun {
  Checkpoint pretrained;
  Checkpoint joint;
  LossTrace pretrain_trace;
  JointResult result;
  SparseCodes codes;
  Classification classification;
  std::vector<std::size_t> train_order;  // dataset indices, rows of A
  std::vector<std::size_t> test_order;   // dataset indices, columns of A
};

/// Joint stage plus classification from an existing network. Images enter
/// as the class-ordered training samples followed by the test samples.
inline DsrcRun run_dsrc_joint(const LabeledDataset& ds, Network<double> net, const TrainConfig& cfg,
                              const ConvergenceRule& rule = {}) {
  cfg.validate();
  if (ds.train.empty() || ds.test.empty()) throw InvalidInput("dsrc: need non-empty train and test partitions");
  DsrcRun run;
  run.train_order = class_ordered(ds, ds.train);
  run.test_order = ds.test;
  std::vector<std::size_t> all = run.train_order;
  all.insert(all.end(), run.test_order.begin(), run.test_order.end());
  const Tensor<double> x = ds.gather(all);
  const std::size_t n = run.train_order.size(), m = run.test_order.size();
  auto layer = cfg.mode == SparseCodingMode::structured ? SparseCodingLayer<double>::structured(n, m)
                                                         : SparseCodingLayer<double>::full(n, m);
  run.result = train_joint(net, layer, x, cfg, rule);
  const Tensor<double> z = encode(net, x, cfg.threads);
  const auto train_labels = ds.labels_of(run.train_order);
  const auto test_labels = ds.labels_of(run.test_order);
  run.codes = extract_codes(layer, train_labels, test_labels);
  const Eigen::MatrixXd ze = to_eigen(z);
  run.classification = dsrc_classify(ze.leftCols(static_cast<Eigen::Index>(n)), train_labels, run.codes,
                                     ze.rightCols(static_cast<Eigen::Index>(m)));
  run.joint = Checkpoint{std::move(net), cfg, Stage::joint, run.result.iterations, std::move(layer), z};
  return run;
}

/// Full pipeline: fresh initialization from cfg.seed, reconstruction-only
/// pretraining on all images of the split, then the joint stage.
inline DsrcRun run_dsrc(const LabeledDataset& ds, const NetworkSpec& spec, const TrainConfig& cfg,
                        const ConvergenceRule& rule = {}) {
  cfg.validate();
  if (ds.height() != spec.input_h || ds.width() != spec.input_w)
    throw InvalidShape("dsrc: dataset images are " + std::to_string(ds.height()) + "x" + std::to_string(ds.width()) +
                       ", network expects " + std::to_string(spec.input_h) + "x" + std::to_string(spec.input_w));
  auto net = init_params<double>(spec, cfg.seed);
  std::vector<std::size_t> all = class_ordered(ds, ds.train);
  all.insert(all.end(), ds.test.begin(), ds.test.end());
  const auto trace = pretrain(net, ds.gather(all), cfg);
  auto run = run_dsrc_joint(ds, net, cfg, rule);
  run.pretrain_trace = trace;
  run.pretrained = Checkpoint{std::move(net), cfg, Stage::pretrained, static_cast<std::size_t>(cfg.pretrain_epochs),
                              std::nullopt, std::nullopt};
  return run;
}

}  // namespace dsrc
