// dsrc: command-line driver.
//
//   dsrc prepare-data --data SRC --out DIR
//   dsrc pretrain     --data SRC [--spec S] [--epochs N] ... --out DIR
//   dsrc train        --data SRC (--from-checkpoint F | --no-pretrain) ... --out DIR
//   dsrc classify     --codes codes.bin --checkpoint F --report report.json
//   dsrc src-baseline --data SRC [--lambda0 L] --out DIR
//   dsrc eval         --protocol fivefold --pipeline src|dsrc --data SRC ... --out DIR
//
// Exit codes: 0 success, 2 usage/config/data errors, 3 numerical failure.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dsrc/checkpoint.hpp"
#include "dsrc/data_io.hpp"
#include "dsrc/evaluation.hpp"
#include "dsrc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dsrc;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

class UsageError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Hashing

/// Git blob id: SHA-1 of "blob <size>\0" followed by the content.
std::string git_blob_sha1(const std::string& bytes) {
  const std::string head = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || !EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) || !EVP_DigestUpdate(ctx, head.data(), head.size()) ||
      !EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) || !EVP_DigestFinal_ex(ctx, md, &len)) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-1 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string file_sha1(const std::string& path) { return git_blob_sha1(io::read_text(path)); }

std::string dataset_sha1(const LabeledDataset& ds) {
  std::ostringstream os;
  os << json{{"labels", ds.labels}, {"train", ds.train}, {"test", ds.test}, {"shape", ds.images.shape()}}.dump();
  io::put_f64(os, ds.images.data());
  return git_blob_sha1(os.str());
}

// ---------------------------------------------------------------------------
// Inputs

std::map<std::string, std::string> parse_kv(const std::string& s, const std::string& what) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError(what + ": expected key=value, got '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return kv;
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  T out{};
  std::istringstream is(v);
  if (!(is >> out) || !is.eof()) throw UsageError("bad value '" + v + "' for " + key);
  return out;
}

SyntheticSpec parse_synthetic(const std::string& args) {
  SyntheticSpec s;
  for (const auto& [k, v] : parse_kv(args, "synthetic")) {
    if (k == "K" || k == "classes") s.classes = parse_number<int>(v, k);
    else if (k == "ambient") s.ambient_dim = parse_number<std::size_t>(v, k);
    else if (k == "dim") s.subspace_dim = parse_number<std::size_t>(v, k);
    else if (k == "train") s.train_per_class = parse_number<std::size_t>(v, k);
    else if (k == "test") s.test_per_class = parse_number<std::size_t>(v, k);
    else if (k == "noise" || k == "sigma") s.noise_sigma = parse_number<double>(v, k);
    else if (k == "seed") s.seed = parse_number<std::uint64_t>(v, k);
    else throw UsageError("synthetic: unknown key '" + k + "'");
  }
  return s;
}

struct DataSource {
  std::string source;
  std::vector<std::size_t> per_class;  // {train, test} when subsetting
  std::uint64_t subset_seed = 0;
};

/// SRC is a dataset cache file, an image directory (one subdirectory per
/// class), "idx:IMAGES,LABELS[,TEST_IMAGES,TEST_LABELS]",
/// "synthetic[:K=5,ambient=64,dim=4,train=40,test=10,noise=0.01,seed=0]" or
/// "micro[:seed=1]".
LabeledDataset load_data(const DataSource& src, json& inputs) {
  const std::string& s = src.source;
  LabeledDataset ds;
  if (s == "synthetic" || s.rfind("synthetic:", 0) == 0) {
    ds = synthetic_subspaces(parse_synthetic(s.size() > 10 ? s.substr(10) : "")).dataset;
  } else if (s == "micro" || s.rfind("micro:", 0) == 0) {
    std::uint64_t seed = 1;
    for (const auto& [k, v] : parse_kv(s.size() > 6 ? s.substr(6) : "", "micro")) {
      if (k != "seed") throw UsageError("micro: unknown key '" + k + "'");
      seed = parse_number<std::uint64_t>(v, k);
    }
    ds = micro_dataset(seed);
  } else if (s.rfind("idx:", 0) == 0) {
    std::vector<std::string> parts;
    std::stringstream ss(s.substr(4));
    for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
    for (const auto& p : parts) {
      if (!fs::is_regular_file(p)) throw UsageError("data file not found: " + p);
      inputs.push_back({{"path", p}, {"sha1", file_sha1(p)}});
    }
    if (parts.size() == 2) ds = load_idx(parts[0], parts[1]);
    else if (parts.size() == 4) ds = load_idx(parts[0], parts[1], parts[2], parts[3]);
    else throw UsageError("idx: expected 2 or 4 comma-separated paths");
  } else if (fs::is_directory(s)) {
    std::vector<std::string> skipped;
    ds = load_image_dir(s, &skipped);
    for (const auto& f : skipped) std::cerr << "warning: skipped " << f << "\n";
  } else if (fs::is_regular_file(s)) {
    inputs.push_back({{"path", s}, {"sha1", file_sha1(s)}});
    ds = load_dataset(s);
  } else {
    throw UsageError("data path not found: " + s);
  }
  if (!src.per_class.empty()) ds = subsample(ds, SubsetSpec{src.per_class[0], src.per_class[1], src.subset_seed});
  return ds;
}

json data_record(const DataSource& src, const LabeledDataset& ds) {
  json j{{"source", src.source},
         {"provenance", ds.provenance},
         {"sha1", dataset_sha1(ds)},
         {"count", ds.size()},
         {"train", ds.train.size()},
         {"test", ds.test.size()},
         {"num_classes", ds.num_classes}};
  if (!src.per_class.empty())
    j["subset"] = {{"per_class_train", src.per_class[0]}, {"per_class_test", src.per_class[1]}, {"seed", src.subset_seed}};
  return j;
}

/// "default", "micro", "micro:HW,C" or a JSON file.
NetworkSpec load_spec(const std::string& s, json& inputs) {
  NetworkSpec spec;
  if (s == "default") {
    spec = default_spec();
  } else if (s == "micro" || s.rfind("micro:", 0) == 0) {
    std::size_t hw = 6, ch = 3;
    if (s.size() > 6) {
      const auto comma = s.find(',', 6);
      if (comma == std::string::npos) throw UsageError("spec: expected micro:HW,C");
      hw = parse_number<std::size_t>(s.substr(6, comma - 6), "spec HW");
      ch = parse_number<std::size_t>(s.substr(comma + 1), "spec C");
    }
    spec = micro_spec(hw, ch);
  } else {
    if (!fs::is_regular_file(s)) throw UsageError("network spec not found: " + s);
    inputs.push_back({{"path", s}, {"sha1", file_sha1(s)}});
    try {
      spec = json::parse(io::read_text(s)).get<NetworkSpec>();
    } catch (const json::exception& e) {
      throw UsageError("bad network spec " + s + ": " + e.what());
    }
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Options shared by commands

struct Options {
  DataSource data;
  std::string config_path;
  std::string spec = "default";
  std::string out;
  std::string from_checkpoint;
  bool no_pretrain = false;
  std::string codes;
  std::string checkpoint;
  std::string report;
  std::string protocol = "fivefold";
  std::string pipeline = "dsrc";
  std::size_t folds = 5;
  double holdout = 0.2;
  double src_lambda0 = 0.1;
  int src_max_iters = 2000;
  double src_tol = 1e-8;
  bool png = false;
  TrainConfig flags;  // values of training flags; applied only if given
};

/// Training flags, so config-file values can be overridden selectively.
struct TrainFlags {
  std::vector<std::pair<CLI::Option*, std::function<void(TrainConfig&, const TrainConfig&)>>> opts;

  template <typename F>
  void add(CLI::Option* o, F&& f) {
    opts.emplace_back(o, std::forward<F>(f));
  }

  void apply(TrainConfig& cfg, const TrainConfig& given) const {
    for (const auto& [o, f] : opts)
      if (o->count() > 0) f(cfg, given);
  }
};

void add_data_flags(CLI::App* cmd, Options& o, bool required = true) {
  auto* d = cmd->add_option("--data", o.data.source, "dataset: cache file, image dir, idx:..., synthetic[:...], micro");
  if (required) d->required();
  cmd->add_option("--subset", o.data.per_class, "per-class train and test counts to sample")->expected(2);
  cmd->add_option("--subset-seed", o.data.subset_seed, "seed for --subset");
}

TrainFlags add_train_flags(CLI::App* cmd, Options& o, bool joint) {
  TrainFlags tf;
  auto& g = o.flags;
  cmd->add_option("--config", o.config_path, "JSON config; command-line flags take precedence");
  cmd->add_option("--spec", o.spec, "network: default, micro[:HW,C] or a JSON file");
  tf.add(cmd->add_option("--lr", g.learning_rate, "learning rate"),
         [](TrainConfig& c, const TrainConfig& v) { c.learning_rate = v.learning_rate; });
  tf.add(cmd->add_option("--seed", g.seed, "seed"), [](TrainConfig& c, const TrainConfig& v) { c.seed = v.seed; });
  tf.add(cmd->add_option("--epochs", g.pretrain_epochs, "pretraining epochs"),
         [](TrainConfig& c, const TrainConfig& v) { c.pretrain_epochs = v.pretrain_epochs; });
  tf.add(cmd->add_option("--batch", g.pretrain_batch, "pretraining batch size"),
         [](TrainConfig& c, const TrainConfig& v) { c.pretrain_batch = v.pretrain_batch; });
  if (!joint) return tf;
  tf.add(cmd->add_option("--lambda0", g.lambda0, "sparsity weight"),
         [](TrainConfig& c, const TrainConfig& v) { c.lambda0 = v.lambda0; });
  tf.add(cmd->add_option("--lambda1", g.lambda1, "reconstruction weight"),
         [](TrainConfig& c, const TrainConfig& v) { c.lambda1 = v.lambda1; });
  tf.add(cmd->add_option("--p", g.p, "code norm: 0.5, 1, 1.5 or 2"), [](TrainConfig& c, const TrainConfig& v) { c.p = v.p; });
  tf.add(cmd->add_option("--iters", g.joint_iters, "joint iterations"),
         [](TrainConfig& c, const TrainConfig& v) { c.joint_iters = v.joint_iters; });
  tf.add(cmd->add_option("--lp-clamp", g.lp_clamp, "gradient clamp of the p < 1 penalty"),
         [](TrainConfig& c, const TrainConfig& v) { c.lp_clamp = v.lp_clamp; });
  tf.add(cmd->add_option("--mode", g.mode, "structured or full_self_expressive")
             ->transform(CLI::CheckedTransformer(std::map<std::string, SparseCodingMode>{
                 {"structured", SparseCodingMode::structured},
                 {"full_self_expressive", SparseCodingMode::full_self_expressive}})),
         [](TrainConfig& c, const TrainConfig& v) { c.mode = v.mode; });
  return tf;
}

/// Defaults, then the config file, then flags, then DSRC_THREADS.
TrainConfig resolve_config(const Options& o, const TrainFlags& tf, json& inputs, json* extra = nullptr) {
  TrainConfig cfg;
  if (!o.config_path.empty()) {
    if (!fs::is_regular_file(o.config_path)) throw UsageError("config file not found: " + o.config_path);
    inputs.push_back({{"path", o.config_path}, {"sha1", file_sha1(o.config_path)}});
    json j;
    try {
      j = json::parse(io::read_text(o.config_path));
    } catch (const json::exception& e) {
      throw UsageError("bad config " + o.config_path + ": " + e.what());
    }
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    for (const char* key : {"src_lambda0", "network"})
      if (j.contains(key)) {
        if (extra) (*extra)[key] = j[key];
        j.erase(key);
      }
    try {
      cfg = j.get<TrainConfig>();
    } catch (const json::exception& e) {
      throw UsageError("bad config " + o.config_path + ": " + e.what());
    }
  }
  tf.apply(cfg, o.flags);
  if (const char* t = std::getenv("DSRC_THREADS"); t && *t) {
    cfg.threads = parse_number<int>(t, "DSRC_THREADS");
    if (cfg.threads < 1) throw UsageError("DSRC_THREADS must be >= 1");
  }
  cfg.validate();
  return cfg;
}

json pretrain_view(const TrainConfig& c) {
  json j = c;
  for (const char* k : {"lambda0", "lambda1", "p", "joint_iters", "lp_clamp", "mode"}) j.erase(k);
  return j;
}

// ---------------------------------------------------------------------------
// Outputs

struct Outputs {
  fs::path dir;
  json files = json::array();

  explicit Outputs(const std::string& d) : dir(d) {
    if (d.empty()) throw UsageError("--out is required");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory " + d + ": " + ec.message());
  }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  /// Records a written file; `hash` is false for files with wall-clock content.
  void add(const std::string& name, bool hash = true) {
    json f{{"path", name}};
    if (hash) f["sha1"] = file_sha1(path(name));
    files.push_back(f);
  }
};

void write_manifest(const Outputs& out, json manifest) {
  manifest["outputs"] = out.files;
  io::write_text(out.path("manifest.json"), manifest.dump(2) + "\n");
}

void write_report(const std::string& path, const ClassificationReport& r, const json& extra = json::object()) {
  json j = r;
  j.update(extra);
  io::write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands

int cmd_prepare(const Options& o) {
  json inputs = json::array();
  const auto ds = load_data(o.data, inputs);
  Outputs out(o.out);
  save_dataset(ds, out.path("dataset.bin"));
  out.add("dataset.bin");
  write_manifest(out, {{"command", "prepare-data"}, {"data", data_record(o.data, ds)}, {"inputs", inputs}});
  std::cout << "wrote " << ds.size() << " samples (" << ds.train.size() << " train, " << ds.test.size()
            << " test) to " << out.path("dataset.bin") << "\n";
  return 0;
}

int cmd_pretrain(const Options& o, const TrainFlags& tf) {
  json inputs = json::array(), extra = json::object();
  const auto cfg = resolve_config(o, tf, inputs, &extra);
  const auto spec = load_spec(extra.contains("network") && o.spec == "default" ? extra["network"].get<std::string>()
                                                                                : o.spec,
                              inputs);
  const auto ds = load_data(o.data, inputs);
  std::cout << pretrain_view(cfg).dump(2) << "\n";
  if (ds.height() != spec.input_h || ds.width() != spec.input_w)
    throw UsageError("dataset images are " + std::to_string(ds.height()) + "x" + std::to_string(ds.width()) +
                     ", network expects " + std::to_string(spec.input_h) + "x" + std::to_string(spec.input_w));
  Outputs out(o.out);
  auto net = init_params<double>(spec, cfg.seed);
  std::vector<std::size_t> all = class_ordered(ds, ds.train);
  all.insert(all.end(), ds.test.begin(), ds.test.end());
  json manifest{{"command", "pretrain"},
                {"config", cfg},
                {"network", spec},
                {"data", data_record(o.data, ds)},
                {"inputs", inputs},
                {"seeds", {{"seed", cfg.seed}}}};
  LossTrace trace;
  try {
    trace = pretrain(net, ds.gather(all), cfg);
  } catch (const DivergedTraining& e) {
    manifest["status"] = "DIVERGED";
    manifest["reason"] = e.what();
    write_manifest(out, manifest);
    throw;
  }
  save_checkpoint(Checkpoint{net, cfg, Stage::pretrained, static_cast<std::size_t>(cfg.pretrain_epochs), std::nullopt,
                             std::nullopt},
                  out.path("checkpoint.bin"));
  out.add("checkpoint.bin");
  trace.write_csv(out.path("trace.csv"));
  out.add("trace.csv", false);
  manifest["status"] = "OK";
  write_manifest(out, manifest);
  return 0;
}

int cmd_train(const Options& o, const TrainFlags& tf) {
  json inputs = json::array(), extra = json::object();
  const auto cfg = resolve_config(o, tf, inputs, &extra);
  const auto ds = load_data(o.data, inputs);
  Network<double> net;
  if (!o.from_checkpoint.empty()) {
    if (!fs::is_regular_file(o.from_checkpoint)) throw UsageError("checkpoint not found: " + o.from_checkpoint);
    inputs.push_back({{"path", o.from_checkpoint}, {"sha1", file_sha1(o.from_checkpoint)}});
    auto ck = load_checkpoint(o.from_checkpoint);
    if (ck.stage != Stage::pretrained && !o.no_pretrain)
      throw UsageError("checkpoint stage is '" + json(ck.stage).get<std::string>() +
                       "'; expected 'pretrained' (pass --no-pretrain to continue from it)");
    net = std::move(ck.net);
  } else {
    if (!o.no_pretrain) throw UsageError("train needs --from-checkpoint (a pretrained checkpoint) or --no-pretrain");
    net = init_params<double>(load_spec(extra.contains("network") && o.spec == "default"
                                            ? extra["network"].get<std::string>()
                                            : o.spec,
                                        inputs),
                              cfg.seed);
  }
  if (ds.height() != net.spec.input_h || ds.width() != net.spec.input_w)
    throw UsageError("dataset images do not match the network input size");
  if (ds.test.empty()) throw UsageError("dataset has no test partition (use --subset to split it)");
  Outputs out(o.out);
  json manifest{{"command", "train"},
                {"config", cfg},
                {"network", net.spec},
                {"data", data_record(o.data, ds)},
                {"inputs", inputs},
                {"seeds", {{"seed", cfg.seed}}}};
  DsrcRun run;
  try {
    run = run_dsrc_joint(ds, net, cfg);
  } catch (const DivergedTraining& e) {
    manifest["status"] = "DIVERGED";
    manifest["reason"] = e.what();
    write_manifest(out, manifest);
    throw;
  }
  save_checkpoint(run.joint, out.path("checkpoint.bin"));
  out.add("checkpoint.bin");
  save_codes(run.codes, out.path("codes.bin"), out.path("codes.json"));
  out.add("codes.bin");
  out.add("codes.json");
  run.result.trace.write_csv(out.path("trace.csv"));
  out.add("trace.csv", false);
  export_code_heatmap(run.codes, out.path("heatmap.pgm"), o.png ? out.path("heatmap.png") : std::string{});
  out.add("heatmap.pgm");
  if (o.png) out.add("heatmap.png");
  const auto report = make_report(run.classification.predictions, run.codes.test_labels, ds.num_classes,
                                  &run.classification);
  write_report(out.path("report.json"), report,
               {{"class_mass_concentration", class_mass_concentration(run.codes, run.codes.test_labels)}});
  out.add("report.json");
  const bool ok = run.result.convergence.status == TrainStatus::converged;
  manifest["status"] = run.result.convergence.status;
  if (!ok) manifest["reason"] = run.result.convergence.reason;
  write_manifest(out, manifest);
  std::cout << "accuracy " << report.accuracy << ", status " << json(run.result.convergence.status).get<std::string>()
            << "\n";
  if (!ok) {
    std::cerr << "not converged: " << run.result.convergence.reason << "\n";
    return kExitNumeric;
  }
  return 0;
}

int cmd_classify(const Options& o) {
  for (const auto* p : {&o.codes, &o.checkpoint})
    if (!fs::is_regular_file(*p)) throw UsageError("file not found: " + *p);
  const std::string sidecar = fs::path(o.codes).replace_extension(".json").string();
  if (!fs::is_regular_file(sidecar)) throw UsageError("codes sidecar not found: " + sidecar);
  const auto codes = load_codes(o.codes, sidecar);
  const auto ck = load_checkpoint(o.checkpoint);
  if (!ck.embeddings) throw UsageError("checkpoint has no embeddings (classify needs a joint checkpoint)");
  const auto& z = *ck.embeddings;
  if (z.dim(1) != codes.n + codes.m)
    throw UsageError("codes are " + std::to_string(codes.n) + "x" + std::to_string(codes.m) + " but the checkpoint holds " +
                     std::to_string(z.dim(1)) + " embeddings");
  if (z.dim(0) != ck.net.spec.embedding_dim()) throw UsageError("embedding dimension does not match the network");
  if (ck.layer && (ck.layer->n != codes.n || ck.layer->m != codes.m))
    throw UsageError("codes shape does not match the checkpoint's sparse coding layer");
  const Eigen::MatrixXd ze = to_eigen(z);
  const auto cls = dsrc_classify(ze.leftCols(static_cast<Eigen::Index>(codes.n)), codes.train_labels, codes,
                                 ze.rightCols(static_cast<Eigen::Index>(codes.m)));
  if (o.report.empty()) throw UsageError("--report is required");
  if (codes.test_labels.empty()) {
    json j{{"predictions", cls.predictions}, {"residual_classes", cls.classes}, {"residuals", cls.residuals},
           {"accuracy", nullptr}};
    io::write_text(o.report, j.dump(2) + "\n");
    return 0;
  }
  int k = 0;
  for (int l : codes.train_labels) k = std::max(k, l + 1);
  const auto report = make_report(cls.predictions, codes.test_labels, k, &cls);
  write_report(o.report, report);
  std::cout << "accuracy " << report.accuracy << "\n";
  return 0;
}

std::vector<int> src_predict(const LabeledDataset& ds, const Options& o, double lambda0) {
  SrcOptions so;
  so.lasso.max_iters = o.src_max_iters;
  so.lasso.tol = o.src_tol;
  return run_src(ds, lambda0, so);
}

int cmd_src_baseline(const Options& o) {
  json inputs = json::array();
  const auto ds = load_data(o.data, inputs);
  if (ds.test.empty()) throw UsageError("dataset has no test partition (use --subset to split it)");
  if (!(o.src_lambda0 > 0)) throw UsageError("--lambda0 must be > 0");
  const auto pred = src_predict(ds, o, o.src_lambda0);
  const auto report = make_report(pred, ds.labels_of(ds.test), ds.num_classes);
  const json extra{{"pipeline", "src"}, {"lambda0", o.src_lambda0}};
  if (!o.out.empty()) {
    Outputs out(o.out);
    write_report(out.path("report.json"), report, extra);
    out.add("report.json");
    write_manifest(out, {{"command", "src-baseline"},
                         {"config", {{"lambda0", o.src_lambda0}, {"max_iters", o.src_max_iters}, {"tol", o.src_tol}}},
                         {"data", data_record(o.data, ds)},
                         {"inputs", inputs},
                         {"status", "OK"}});
  }
  if (!o.report.empty()) write_report(o.report, report, extra);
  std::cout << "accuracy " << report.accuracy << "\n";
  return 0;
}

int cmd_eval(const Options& o, const TrainFlags& tf) {
  if (o.protocol != "fivefold") throw UsageError("unknown protocol '" + o.protocol + "'");
  json inputs = json::array(), extra = json::object();
  const auto cfg = resolve_config(o, tf, inputs, &extra);
  double src_lambda0 = o.src_lambda0;
  if (extra.contains("src_lambda0")) src_lambda0 = extra["src_lambda0"].get<double>();
  const auto ds = load_data(DataSource{o.data.source, {}, 0}, inputs);
  FoldOptions fo;
  fo.num_folds = o.folds;
  fo.holdout = o.holdout;
  fo.seed = cfg.seed;
  if (!o.data.per_class.empty()) fo.subset = SubsetSpec{o.data.per_class[0], o.data.per_class[1], 0};
  const auto plan = make_fold_plan(ds, fo);
  std::vector<std::string> statuses;
  FoldRunner runner;
  if (o.pipeline == "src") {
    runner = [&](const LabeledDataset& f) { return src_predict(f, o, src_lambda0); };
  } else if (o.pipeline == "dsrc") {
    const auto spec = load_spec(extra.contains("network") && o.spec == "default" ? extra["network"].get<std::string>()
                                                                                 : o.spec,
                                inputs);
    runner = [&, spec](const LabeledDataset& f) {
      const auto run = run_dsrc(f, spec, cfg);
      statuses.push_back(json(run.result.convergence.status).get<std::string>());
      return run.classification.predictions;
    };
  } else {
    throw UsageError("unknown pipeline '" + o.pipeline + "'");
  }
  const auto summary = accuracy_fivefold(ds, runner, plan);
  json report = summary;
  report["protocol"] = o.protocol;
  report["pipeline"] = o.pipeline;
  report["holdout"] = o.holdout;
  if (o.pipeline == "src") report["lambda0"] = src_lambda0;
  if (!statuses.empty()) report["fold_status"] = statuses;
  const bool ok = std::all_of(statuses.begin(), statuses.end(), [](const std::string& s) { return s == "CONVERGED"; });
  Outputs out(o.out);
  io::write_text(out.path("report.json"), report.dump(2) + "\n");
  out.add("report.json");
  write_manifest(out, {{"command", "eval"},
                       {"config", cfg},
                       {"data", data_record(DataSource{o.data.source, {}, 0}, ds)},
                       {"inputs", inputs},
                       {"seeds", {{"seed", cfg.seed}, {"fold_seeds", summary.fold_seeds}}},
                       {"status", ok ? "OK" : "NOT_CONVERGED"}});
  std::cout << "mean accuracy " << summary.mean << " (std " << summary.std << ")\n";
  return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep sparse representation classification"};
  app.require_subcommand(1);
  Options o;

  auto* prep = app.add_subcommand("prepare-data", "load, subset and cache a dataset");
  add_data_flags(prep, o);
  prep->add_option("--out", o.out, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "reconstruction-only pretraining");
  add_data_flags(pre, o);
  const auto pre_flags = add_train_flags(pre, o, false);
  pre->add_option("--out", o.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "joint training of encoder, decoder and sparse codes");
  add_data_flags(train, o);
  const auto train_flags = add_train_flags(train, o, true);
  train->add_option("--from-checkpoint", o.from_checkpoint, "pretrained checkpoint");
  train->add_flag("--no-pretrain", o.no_pretrain, "start from a fresh initialization or a non-pretrained checkpoint");
  train->add_flag("--png", o.png, "also write heatmap.png");
  train->add_option("--out", o.out, "output directory")->required();

  auto* cls = app.add_subcommand("classify", "classify test samples from codes and a joint checkpoint");
  cls->add_option("--codes", o.codes, "codes.bin (sidecar codes.json alongside)")->required();
  cls->add_option("--checkpoint", o.checkpoint, "joint checkpoint")->required();
  cls->add_option("--report", o.report, "report JSON path")->required();

  auto* src = app.add_subcommand("src-baseline", "classical sparse representation classification on pixels");
  add_data_flags(src, o);
  src->add_option("--lambda0", o.src_lambda0, "lasso weight")->capture_default_str();
  src->add_option("--max-iters", o.src_max_iters, "lasso iteration cap")->capture_default_str();
  src->add_option("--tol", o.src_tol, "lasso tolerance")->capture_default_str();
  src->add_option("--report", o.report, "report JSON path");
  src->add_option("--out", o.out, "output directory");

  auto* ev = app.add_subcommand("eval", "repeated random-split evaluation");
  add_data_flags(ev, o);
  const auto eval_flags = add_train_flags(ev, o, true);
  ev->add_option("--protocol", o.protocol, "fivefold")->capture_default_str();
  ev->add_option("--pipeline", o.pipeline, "src or dsrc")->capture_default_str();
  ev->add_option("--folds", o.folds, "number of folds")->capture_default_str();
  ev->add_option("--holdout", o.holdout, "test fraction per fold")->capture_default_str();
  ev->add_option("--src-lambda0", o.src_lambda0, "lasso weight for --pipeline src")->capture_default_str();
  ev->add_option("--out", o.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*prep) return cmd_prepare(o);
    if (*pre) return cmd_pretrain(o, pre_flags);
    if (*train) return cmd_train(o, train_flags);
    if (*cls) return cmd_classify(o);
    if (*src) return cmd_src_baseline(o);
    if (*ev) return cmd_eval(o, eval_flags);
  } catch (const DivergedTraining& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
