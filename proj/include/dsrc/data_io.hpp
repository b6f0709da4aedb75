#pragma once

// Dataset ingestion and preprocessing: IDX archives, class-per-directory
// image trees, corner-aligned bilinear resizing, seeded class-balanced
// subsetting, a synthetic union-of-subspaces generator and a binary cache.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsrc/binary_io.hpp"
#include "dsrc/error.hpp"
#include "dsrc/image_codec.hpp"
#include "dsrc/random.hpp"
#include "dsrc/tensor.hpp"

namespace dsrc {

inline constexpr std::size_t kImageSide = 32;

/// N x 1 x H x W images in [0, 1] with labels in [0, K) and a train/test
/// partition given as sample indices.
struct LabeledDataset {
  Tensor<double> images;
  std::vector<int> labels;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::string provenance;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  /// Throws InvalidInput if any invariant is broken.
  void validate() const {
    if (images.rank() != 4 || images.dim(1) != 1)
      throw InvalidInput("dataset: images must be N x 1 x H x W, got " + shape_str(images.shape()));
    if (images.dim(0) != labels.size()) throw InvalidInput("dataset: image count != label count");
    if (num_classes < 1) throw InvalidInput("dataset: no classes");
    for (int l : labels)
      if (l < 0 || l >= num_classes)
        throw InvalidInput("dataset: label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    for (double v : images.data())
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw InvalidInput("dataset: pixel outside [0, 1]");
    std::vector<char> seen(labels.size(), 0);
    for (const auto* part : {&train, &test})
      for (std::size_t i : *part) {
        if (i >= labels.size()) throw InvalidInput("dataset: partition index out of range");
        if (seen[i]) throw InvalidInput("dataset: sample " + std::to_string(i) + " listed twice in the partition");
        seen[i] = 1;
      }
  }

  Tensor<double> gather(const std::vector<std::size_t>& idx) const {
    if (idx.empty()) throw InvalidShape("dataset: cannot gather an empty index list");
    const std::size_t per = images.size() / images.dim(0);
    Tensor<double> out(Shape{idx.size(), 1, images.dim(2), images.dim(3)});
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy_n(images.data().data() + idx[k] * per, per, out.data().data() + k * per);
    return out;
  }

  std::vector<int> labels_of(const std::vector<std::size_t>& idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(labels.at(i));
    return out;
  }

  /// Flattened pixels of the given samples as columns (H*W x |idx|).
  Eigen::MatrixXd columns(const std::vector<std::size_t>& idx) const {
    const std::size_t per = images.size() / images.dim(0);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(per), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t p = 0; p < per; ++p)
        m(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)) = images[idx[k] * per + p];
    return m;
  }
};

/// Corner-aligned bilinear resize: output pixel i samples the input at
/// i * (in - 1) / (out - 1) (the centre when out == 1). Same-size resizing is
/// the identity.
inline std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t in_h, std::size_t in_w,
                                           std::size_t out_h, std::size_t out_w) {
  if (in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) throw InvalidShape("resize: empty extent");
  if (src.size() != in_h * in_w) throw InvalidShape("resize: pixel count does not match extents");
  if (in_h == out_h && in_w == out_w) return src;
  auto coord = [](std::size_t i, std::size_t in, std::size_t out) {
    if (out == 1) return 0.5 * static_cast<double>(in - 1);
    return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
  };
  std::vector<double> dst(out_h * out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const double y = coord(r, in_h, out_h);
    const auto y0 = std::min(static_cast<std::size_t>(y), in_h - 1);
    const auto y1 = std::min(y0 + 1, in_h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double x = coord(c, in_w, out_w);
      const auto x0 = std::min(static_cast<std::size_t>(x), in_w - 1);
      const auto x1 = std::min(x0 + 1, in_w - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = src[y0 * in_w + x0] * (1.0 - fx) + src[y0 * in_w + x1] * fx;
      const double bot = src[y1 * in_w + x0] * (1.0 - fx) + src[y1 * in_w + x1] * fx;
      dst[r * out_w + c] = top * (1.0 - fy) + bot * fy;
    }
  }
  return dst;
}

namespace detail {

inline std::uint32_t get_be32(std::istream& is, const char* what) {
  unsigned char b[4];
  io::read_exact(is, reinterpret_cast<char*>(b), 4, what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

inline std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

struct IdxImages {
  std::size_t count, rows, cols;
  std::vector<unsigned char> data;
};

inline IdxImages read_idx_images(const std::string& path) {
  auto is = io::open_in(path);
  const auto magic = get_be32(is, "IDX magic");
  if (magic != 0x00000803) throw FormatError(path + ": bad IDX image magic " + hex32(magic) + " (expected 0x00000803)");
  IdxImages out;
  out.count = get_be32(is, "IDX image count");
  out.rows = get_be32(is, "IDX rows");
  out.cols = get_be32(is, "IDX cols");
  if (out.rows == 0 || out.cols == 0) throw FormatError(path + ": zero image extent");
  if (out.count * out.rows * out.cols > std::filesystem::file_size(path))
    throw FormatError("truncated file while reading IDX image payload (" + path + ")");
  out.data.resize(out.count * out.rows * out.cols);
  io::read_exact(is, reinterpret_cast<char*>(out.data.data()), out.data.size(), "IDX image payload");
  return out;
}

inline std::vector<int> read_idx_labels(const std::string& path) {
  auto is = io::open_in(path);
  const auto magic = get_be32(is, "IDX magic");
  if (magic != 0x00000801) throw FormatError(path + ": bad IDX label magic " + hex32(magic) + " (expected 0x00000801)");
  const std::size_t count = get_be32(is, "IDX label count");
  if (count > std::filesystem::file_size(path))
    throw FormatError("truncated file while reading IDX label payload (" + path + ")");
  std::vector<unsigned char> raw(count);
  io::read_exact(is, reinterpret_cast<char*>(raw.data()), count, "IDX label payload");
  return {raw.begin(), raw.end()};
}

inline int class_count(const std::vector<int>& labels) {
  int k = 0;
  for (int l : labels) k = std::max(k, l + 1);
  return k;
}

}  // namespace detail

/// Builds an N x 1 x 32 x 32 tensor from grayscale images of any size.
inline Tensor<double> to_image_tensor(const std::vector<GrayImage>& imgs, std::size_t side = kImageSide) {
  if (imgs.empty()) throw InvalidShape("no images");
  Tensor<double> out(Shape{imgs.size(), 1, side, side});
  for (std::size_t k = 0; k < imgs.size(); ++k) {
    auto px = resize_bilinear(imgs[k].pixels, imgs[k].height, imgs[k].width, side, side);
    for (auto& v : px) v = std::clamp(v, 0.0, 1.0);
    std::copy(px.begin(), px.end(), out.data().data() + k * side * side);
  }
  return out;
}

/// One IDX image/label file pair; every sample goes to the train partition.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto raw = detail::read_idx_images(images_path);
  const auto labels = detail::read_idx_labels(labels_path);
  if (labels.size() != raw.count)
    throw FormatError("IDX count mismatch: " + std::to_string(raw.count) + " images, " +
                      std::to_string(labels.size()) + " labels");
  if (raw.count == 0) throw FormatError(images_path + ": no images");
  std::vector<GrayImage> imgs(raw.count);
  const std::size_t per = raw.rows * raw.cols;
  for (std::size_t k = 0; k < raw.count; ++k) {
    imgs[k].height = raw.rows;
    imgs[k].width = raw.cols;
    imgs[k].pixels.resize(per);
    for (std::size_t p = 0; p < per; ++p) imgs[k].pixels[p] = raw.data[k * per + p] / 255.0;
  }
  LabeledDataset ds;
  ds.images = to_image_tensor(imgs);
  ds.labels = labels;
  ds.num_classes = detail::class_count(labels);
  ds.train.resize(raw.count);
  for (std::size_t i = 0; i < raw.count; ++i) ds.train[i] = i;
  ds.provenance = "idx:" + images_path;
  ds.validate();
  return ds;
}

/// Train and test IDX pairs merged into one dataset (train samples first).
inline LabeledDataset load_idx(const std::string& train_images, const std::string& train_labels,
                               const std::string& test_images, const std::string& test_labels) {
  auto a = load_idx(train_images, train_labels);
  auto b = load_idx(test_images, test_labels);
  LabeledDataset ds;
  const std::size_t na = a.size(), nb = b.size();
  std::vector<double> px(a.images.data().begin(), a.images.data().end());
  px.insert(px.end(), b.images.data().begin(), b.images.data().end());
  ds.images = Tensor<double>(Shape{na + nb, 1, kImageSide, kImageSide}, std::move(px));
  ds.labels = a.labels;
  ds.labels.insert(ds.labels.end(), b.labels.begin(), b.labels.end());
  ds.num_classes = std::max(a.num_classes, b.num_classes);
  ds.train = a.train;
  for (std::size_t i = 0; i < nb; ++i) ds.test.push_back(na + i);
  ds.provenance = "idx:" + train_images + "+" + test_images;
  ds.validate();
  return ds;
}

/// One subdirectory per class (class id = lexicographic rank of its name).
/// Files with an image extension are decoded in lexicographic path order;
/// files that fail to decode are skipped and reported in `skipped`.
inline LabeledDataset load_image_dir(const std::string& root, std::vector<std::string>* skipped = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw InvalidInput("image directory not found: " + root);
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.size() < 2) throw InvalidInput(root + ": need at least 2 class subdirectories");
  std::vector<GrayImage> imgs;
  std::vector<int> labels;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(classes[k]))
      if (e.is_regular_file() && is_image_path(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::size_t decoded = 0;
    for (const auto& f : files) {
      try {
        imgs.push_back(decode_image(f.string()));
        labels.push_back(static_cast<int>(k));
        ++decoded;
      } catch (const Error&) {
        if (skipped) skipped->push_back(f.string());
      }
    }
    if (decoded == 0) throw InvalidInput("class directory " + classes[k].string() + " has no decodable images");
  }
  LabeledDataset ds;
  ds.images = to_image_tensor(imgs);
  ds.labels = std::move(labels);
  ds.num_classes = static_cast<int>(classes.size());
  ds.train.resize(ds.labels.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) ds.train[i] = i;
  ds.provenance = "imagedir:" + root;
  ds.validate();
  return ds;
}

struct SubsetSpec {
  std::size_t per_class_train = 1;
  std::size_t per_class_test = 0;
  std::uint64_t seed = 0;
};

struct SubsetIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded per-class sampling without replacement. Train samples come from
/// the train partition and test samples from the test partition; a dataset
/// with an empty test partition is treated as a single pool split disjointly.
/// Each returned list is in class order, ascending within a class.
inline SubsetIndices subsample_indices(const LabeledDataset& ds, const SubsetSpec& spec) {
  if (spec.per_class_train < 1) throw InvalidHyperparameter("subsample: per_class_train must be >= 1");
  const bool pooled = ds.test.empty();
  std::vector<std::vector<std::size_t>> tr(static_cast<std::size_t>(ds.num_classes)), te(tr.size());
  for (std::size_t i : ds.train) tr[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  for (std::size_t i : ds.test) te[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  SubsetIndices sel;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    Rng rng(derive_seed(spec.seed, k));
    auto pick = [&](std::vector<std::size_t> pool, std::size_t count, const char* part) {
      if (pool.size() < count)
        throw InsufficientSamples("class " + std::to_string(k) + " has " + std::to_string(pool.size()) + " " + part +
                                  " samples, " + std::to_string(count) + " requested");
      rng.shuffle(pool);
      pool.resize(count);
      return pool;
    };
    std::vector<std::size_t> a, b;
    if (pooled) {
      auto both = pick(tr[k], spec.per_class_train + spec.per_class_test, "available");
      a.assign(both.begin(), both.begin() + static_cast<std::ptrdiff_t>(spec.per_class_train));
      b.assign(both.begin() + static_cast<std::ptrdiff_t>(spec.per_class_train), both.end());
    } else {
      a = pick(tr[k], spec.per_class_train, "train");
      b = pick(te[k], spec.per_class_test, "test");
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    sel.train.insert(sel.train.end(), a.begin(), a.end());
    sel.test.insert(sel.test.end(), b.begin(), b.end());
  }
  return sel;
}

/// subsample_indices materialized: only the selected samples, train first.
inline LabeledDataset subsample(const LabeledDataset& ds, const SubsetSpec& spec) {
  const auto sel = subsample_indices(ds, spec);
  std::vector<std::size_t> order = sel.train;
  order.insert(order.end(), sel.test.begin(), sel.test.end());
  LabeledDataset out;
  out.images = ds.gather(order);
  out.labels = ds.labels_of(order);
  out.num_classes = ds.num_classes;
  for (std::size_t i = 0; i < sel.train.size(); ++i) out.train.push_back(i);
  for (std::size_t i = 0; i < sel.test.size(); ++i) out.test.push_back(sel.train.size() + i);
  out.provenance = ds.provenance + "|subset(" + std::to_string(spec.per_class_train) + "," +
                   std::to_string(spec.per_class_test) + ",seed=" + std::to_string(spec.seed) + ")";
  return out;
}

/// Dataset restricted to a train/test index pair (used by fold plans).
inline LabeledDataset select(const LabeledDataset& ds, const std::vector<std::size_t>& train,
                             const std::vector<std::size_t>& test) {
  std::vector<std::size_t> order = train;
  order.insert(order.end(), test.begin(), test.end());
  LabeledDataset out;
  out.images = ds.gather(order);
  out.labels = ds.labels_of(order);
  out.num_classes = ds.num_classes;
  for (std::size_t i = 0; i < train.size(); ++i) out.train.push_back(i);
  for (std::size_t i = 0; i < test.size(); ++i) out.test.push_back(train.size() + i);
  out.provenance = ds.provenance;
  return out;
}

struct SyntheticSpec {
  int classes = 5;
  std::size_t ambient_dim = 64;
  std::size_t subspace_dim = 4;
  std::size_t train_per_class = 40;
  std::size_t test_per_class = 10;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = {{"classes", s.classes},         {"ambient_dim", s.ambient_dim},
       {"subspace_dim", s.subspace_dim}, {"train_per_class", s.train_per_class},
       {"test_per_class", s.test_per_class}, {"noise_sigma", s.noise_sigma},
       {"seed", s.seed}};
}

struct SyntheticData {
  LabeledDataset dataset;
  std::vector<Eigen::MatrixXd> bases;  // ambient x subspace_dim, orthonormal columns
  Eigen::MatrixXd vectors;             // ambient x N, sample order of `dataset`
  double scale = 1.0;                  // R in pixel = 0.5 + x / (2R)
};

/// Pixel layout of an ambient vector: the vector is zero-padded to s*s
/// (s = ceil(sqrt(ambient))), each entry is replicated into an f x f block
/// (f = 32 / s) and the s*f square is centred. Returns, per pixel, the vector
/// index it shows or -1 for background.
inline std::vector<std::ptrdiff_t> synthetic_layout(std::size_t ambient, std::size_t side = kImageSide) {
  std::size_t s = 1;
  while (s * s < ambient) ++s;
  if (s > side) throw InvalidShape("synthetic: ambient dimension " + std::to_string(ambient) + " exceeds " +
                                   std::to_string(side * side) + " pixels");
  const std::size_t f = side / s, off = (side - s * f) / 2;
  std::vector<std::ptrdiff_t> map(side * side, -1);
  for (std::size_t r = 0; r < s * f; ++r)
    for (std::size_t c = 0; c < s * f; ++c) {
      const std::size_t idx = (r / f) * s + c / f;
      if (idx < ambient) map[(r + off) * side + c + off] = static_cast<std::ptrdiff_t>(idx);
    }
  return map;
}

/// K random subspaces; per class, coefficients U[-1, 1] on an orthonormal
/// basis plus N(0, sigma^2) noise. Vectors become images through
/// synthetic_layout with pixel = 0.5 + x / (2R), R = max |x| over the set.
/// Train samples come first (class by class), then test samples.
inline SyntheticData synthetic_subspaces(const SyntheticSpec& spec) {
  if (spec.classes < 1) throw InvalidShape("synthetic: need at least one class");
  if (spec.subspace_dim < 1 || spec.subspace_dim >= spec.ambient_dim)
    throw InvalidShape("synthetic: need 1 <= subspace_dim < ambient_dim");
  if (spec.train_per_class < 1) throw InvalidShape("synthetic: need at least one training sample per class");
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma))
    throw InvalidHyperparameter("synthetic: noise_sigma must be finite and >= 0");
  const auto layout = synthetic_layout(spec.ambient_dim);
  const auto d = static_cast<Eigen::Index>(spec.ambient_dim), q = static_cast<Eigen::Index>(spec.subspace_dim);
  const auto K = static_cast<std::size_t>(spec.classes);

  SyntheticData out;
  Rng basis_rng(derive_seed(spec.seed, 0));
  for (std::size_t k = 0; k < K; ++k) {
    Eigen::MatrixXd g(d, q);
    for (Eigen::Index c = 0; c < q; ++c)
      for (Eigen::Index r = 0; r < d; ++r) g(r, c) = basis_rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    out.bases.push_back(qr.householderQ() * Eigen::MatrixXd::Identity(d, q));
  }

  const std::size_t per = spec.train_per_class + spec.test_per_class, n = K * per;
  out.vectors.resize(d, static_cast<Eigen::Index>(n));
  std::vector<int> labels(n);
  Rng sample_rng(derive_seed(spec.seed, 1));
  std::size_t col = 0;
  for (int part = 0; part < 2; ++part) {
    const std::size_t count = part == 0 ? spec.train_per_class : spec.test_per_class;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < count; ++i, ++col) {
        Eigen::VectorXd c(q);
        for (Eigen::Index j = 0; j < q; ++j) c(j) = sample_rng.uniform(-1.0, 1.0);
        Eigen::VectorXd x = out.bases[k] * c;
        if (spec.noise_sigma > 0.0)
          for (Eigen::Index r = 0; r < d; ++r) x(r) += spec.noise_sigma * sample_rng.normal();
        out.vectors.col(static_cast<Eigen::Index>(col)) = x;
        labels[col] = static_cast<int>(k);
      }
  }
  const double R = out.vectors.cwiseAbs().maxCoeff();
  out.scale = R > 0.0 ? R : 1.0;

  const std::size_t pix = kImageSide * kImageSide;
  Tensor<double> images(Shape{n, 1, kImageSide, kImageSide}, 0.5);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t p = 0; p < pix; ++p)
      if (layout[p] >= 0)
        images[s * pix + p] = 0.5 + out.vectors(layout[p], static_cast<Eigen::Index>(s)) / (2.0 * out.scale);

  auto& ds = out.dataset;
  ds.images = std::move(images);
  ds.labels = std::move(labels);
  ds.num_classes = spec.classes;
  for (std::size_t i = 0; i < n; ++i) (i < K * spec.train_per_class ? ds.train : ds.test).push_back(i);
  ds.provenance = "synthetic:" + nlohmann::json(spec).dump();
  ds.validate();
  return out;
}

/// Nine 6x6 images with U[0, 1] pixels in three classes: samples 0-5 train
/// (two per class, class ordered), 6-8 test (one per class).
inline LabeledDataset micro_dataset(std::uint64_t seed = 1) {
  LabeledDataset ds;
  ds.images = Tensor<double>(Shape{9, 1, 6, 6});
  Rng rng(derive_seed(seed, 0x6d6963726fULL));
  for (auto& v : ds.images.data()) v = rng.uniform();
  ds.labels = {0, 0, 1, 1, 2, 2, 0, 1, 2};
  ds.train = {0, 1, 2, 3, 4, 5};
  ds.test = {6, 7, 8};
  ds.num_classes = 3;
  ds.provenance = "micro:seed=" + std::to_string(seed);
  return ds;
}

/// Dataset cache: "DSRCDATA" container, JSON header with labels, partition,
/// class count, provenance and image extents, then the pixels as float64.
inline constexpr std::string_view kDatasetMagic = "DSRCDATA";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const LabeledDataset& ds, const std::string& path) {
  ds.validate();
  nlohmann::json h{{"count", ds.size()},       {"height", ds.height()}, {"width", ds.width()},
                   {"labels", ds.labels},      {"train", ds.train},     {"test", ds.test},
                   {"num_classes", ds.num_classes}, {"provenance", ds.provenance}};
  auto os = io::open_out(path);
  io::write_container_header(os, kDatasetMagic, kDatasetVersion, h);
  io::put_f64(os, ds.images.data());
  if (!os) throw Error("failed writing " + path);
}

inline LabeledDataset load_dataset(const std::string& path) {
  auto is = io::open_in(path);
  const auto h = io::read_container_header(is, kDatasetMagic, kDatasetVersion);
  LabeledDataset ds;
  std::size_t count = 0, height = 0, width = 0;
  try {
    count = h.at("count").get<std::size_t>();
    height = h.at("height").get<std::size_t>();
    width = h.at("width").get<std::size_t>();
    ds.labels = h.at("labels").get<std::vector<int>>();
    ds.train = h.at("train").get<std::vector<std::size_t>>();
    ds.test = h.at("test").get<std::vector<std::size_t>>();
    ds.num_classes = h.at("num_classes").get<int>();
    ds.provenance = h.at("provenance").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad dataset header: " + e.what());
  }
  if (count == 0 || height == 0 || width == 0) throw FormatError(path + ": empty dataset");
  auto px = io::get_f64(is, count * height * width, "dataset pixels");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes after pixel data");
  ds.images = Tensor<double>(Shape{count, 1, height, width}, std::move(px));
  try {
    ds.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(path + ": " + e.what());
  }
  return ds;
}

}  // namespace dsrc
