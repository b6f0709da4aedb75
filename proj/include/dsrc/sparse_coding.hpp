#pragma once

// Structured self-expressive layer. Given Z = [Z_train, Z_test] it outputs
// [Z_train, Z_train * A], i.e. Z * Theta with Theta = [[I_n, A], [0, 0]].
// Only A (n x m) is stored and trained; the identity and zero blocks are
// implicit. A full (n+m) x (n+m) self-expressive variant with a zero
// diagonal is provided for the ablation that drops this structure.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsrc/autodiff.hpp"
#include "dsrc/binary_io.hpp"
#include "dsrc/error.hpp"
#include "dsrc/tensor.hpp"

namespace dsrc {

enum class SparseCodingMode { structured, full_self_expressive };

NLOHMANN_JSON_SERIALIZE_ENUM(SparseCodingMode, {{SparseCodingMode::structured, "structured"},
                                                {SparseCodingMode::full_self_expressive, "full_self_expressive"}})

template <typename T = double>
struct SparseCodingLayer {
  std::size_t n = 0;  // training samples
  std::size_t m = 0;  // test samples
  SparseCodingMode mode = SparseCodingMode::structured;
  /// A (n x m) in structured mode, C ((n+m) x (n+m)) in full mode.
  Parameter<T> coeffs;

  /// Zero-initialized structured layer.
  static SparseCodingLayer structured(std::size_t n, std::size_t m) {
    if (n == 0 || m == 0) throw InvalidShape("sparse coding layer needs n >= 1 and m >= 1");
    return SparseCodingLayer{n, m, SparseCodingMode::structured, Parameter<T>("A", Tensor<T>(Shape{n, m}))};
  }

  /// Zero-initialized full self-expressive layer.
  static SparseCodingLayer full(std::size_t n, std::size_t m) {
    if (n == 0 || m == 0) throw InvalidShape("sparse coding layer needs n >= 1 and m >= 1");
    return SparseCodingLayer{n, m, SparseCodingMode::full_self_expressive,
                             Parameter<T>("C", Tensor<T>(Shape{n + m, n + m}))};
  }

  /// Restores the zero-diagonal constraint of the full mode (no-op otherwise).
  void project() {
    if (mode != SparseCodingMode::full_self_expressive) return;
    for (std::size_t i = 0; i < n + m; ++i) coeffs.value.at(i, i) = T(0);
  }
};

namespace detail {
template <typename T>
void check_columns(const SparseCodingLayer<T>& layer, const Var<T>& z) {
  const auto& zv = z.value();
  if (zv.rank() != 2 || zv.dim(1) != layer.n + layer.m)
    throw InvalidShape("sparse coding layer expects " + std::to_string(layer.n + layer.m) + " columns (n=" +
                       std::to_string(layer.n) + ", m=" + std::to_string(layer.m) + "), got " +
                       shape_str(zv.shape()));
}
}  // namespace detail

/// Z-hat = [Z_train, Z_train A]. Training columns are copied, not computed,
/// so they pass through bit for bit.
template <typename T>
Var<T> apply(const SparseCodingLayer<T>& layer, Var<T> a, Var<T> z) {
  if (layer.mode != SparseCodingMode::structured) throw InvalidShape("apply() requires a structured layer");
  detail::check_columns(layer, z);
  if (a.shape() != Shape{layer.n, layer.m}) throw InvalidShape("apply(): coefficient shape mismatch");
  auto z_train = ad::slice_cols(z, 0, layer.n);
  return ad::concat_cols(z_train, ad::matmul(z_train, a));
}

/// Z-hat = Z C for the full self-expressive variant.
template <typename T>
Var<T> apply_full(const SparseCodingLayer<T>& layer, Var<T> c, Var<T> z) {
  if (layer.mode != SparseCodingMode::full_self_expressive)
    throw InvalidShape("apply_full() requires a full_self_expressive layer");
  detail::check_columns(layer, z);
  return ad::matmul(z, c);
}

inline bool supported_norm(double p) { return p == 0.5 || p == 1.0 || p == 1.5 || p == 2.0; }

/// sum |A_ij|^p. The identity block of Theta only adds a constant and is
/// left out; the zero blocks contribute nothing.
template <typename T>
Var<T> regularize(const SparseCodingLayer<T>& layer, Var<T> coeffs, double p,
                  double clamp = ad::kDefaultLpClamp) {
  if (!supported_norm(p))
    throw InvalidHyperparameter("regularizer norm p must be one of 0.5, 1, 1.5, 2; got " + std::to_string(p));
  (void)layer;
  return ad::lp_penalty(coeffs, p, clamp);
}

/// Snapshot of the code matrix: column j is the code of test sample j over
/// the n training samples.
struct SparseCodes {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<double> values;  // n x m, row-major
  std::vector<int> train_labels;
  std::vector<int> test_labels;  // optional ground truth, empty if unknown

  double at(std::size_t train, std::size_t test) const { return values[train * m + test]; }

  friend bool operator==(const SparseCodes&, const SparseCodes&) = default;
};

template <typename T>
SparseCodes extract_codes(const SparseCodingLayer<T>& layer, const std::vector<int>& train_labels,
                          const std::vector<int>& test_labels = {}) {
  if (train_labels.size() != layer.n)
    throw InvalidShape("extract_codes: " + std::to_string(train_labels.size()) + " train labels for n=" +
                       std::to_string(layer.n));
  if (!test_labels.empty() && test_labels.size() != layer.m)
    throw InvalidShape("extract_codes: test label count does not match m");
  SparseCodes c{layer.n, layer.m, std::vector<double>(layer.n * layer.m), train_labels, test_labels};
  for (std::size_t i = 0; i < layer.n; ++i)
    for (std::size_t j = 0; j < layer.m; ++j)
      c.values[i * layer.m + j] = static_cast<double>(layer.mode == SparseCodingMode::structured
                                                          ? layer.coeffs.value.at(i, j)
                                                          : layer.coeffs.value.at(i, layer.n + j));
  return c;
}

/// codes.bin: raw little-endian float64, row-major n x m.
/// codes.json: {"n", "m", "train_labels", "test_labels", "dtype", "layout"}.
inline void save_codes(const SparseCodes& c, const std::string& bin_path, const std::string& json_path) {
  {
    auto os = io::open_out(bin_path);
    io::put_f64(os, c.values);
    if (!os) throw Error("failed writing " + bin_path);
  }
  nlohmann::json j{{"n", c.n},
                   {"m", c.m},
                   {"train_labels", c.train_labels},
                   {"test_labels", c.test_labels},
                   {"dtype", "float64-le"},
                   {"layout", "row-major n x m"}};
  io::write_text(json_path, j.dump(2) + "\n");
}

inline SparseCodes load_codes(const std::string& bin_path, const std::string& json_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(json_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad codes sidecar " + json_path + ": " + e.what());
  }
  SparseCodes c;
  try {
    c.n = j.at("n").get<std::size_t>();
    c.m = j.at("m").get<std::size_t>();
    c.train_labels = j.at("train_labels").get<std::vector<int>>();
    c.test_labels = j.value("test_labels", std::vector<int>{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad codes sidecar " + json_path + ": " + e.what());
  }
  if (c.train_labels.size() != c.n) throw FormatError("codes sidecar: train_labels length != n");
  auto is = io::open_in(bin_path);
  c.values = io::get_f64(is, c.n * c.m, "code matrix");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("codes file longer than n*m doubles");
  return c;
}

}  // namespace dsrc
