#pragma once

// Model state container: "DSRCCKPT", version, JSON header, then raw
// little-endian f64 blocks in the order listed by header["blocks"].

#include <optional>
#include <string>
#include <vector>

#include "dsrc/binary_io.hpp"
#include "dsrc/network.hpp"
#include "dsrc/sparse_coding.hpp"
#include "dsrc/training.hpp"

namespace dsrc {

inline constexpr std::string_view kCheckpointMagic = "DSRCCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Stage { pretrained, joint };

NLOHMANN_JSON_SERIALIZE_ENUM(Stage, {{Stage::pretrained, "pretrained"}, {Stage::joint, "joint"}})

struct Checkpoint {
  Network<double> net;
  TrainConfig config;
  Stage stage = Stage::pretrained;
  std::size_t iteration = 0;
  /// Present for joint checkpoints.
  std::optional<SparseCodingLayer<double>> layer;
  /// Embeddings Z (d_z x (n+m)) from the final joint iterate, if stored.
  std::optional<Tensor<double>> embeddings;
};

namespace detail {

inline nlohmann::json block_entry(const std::string& name, const Shape& s) { return {{"name", name}, {"shape", s}}; }

inline Shape read_shape(const nlohmann::json& b) {
  Shape s;
  for (const auto& d : b.at("shape")) s.push_back(d.get<std::size_t>());
  return s;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  nlohmann::json blocks = nlohmann::json::array();
  std::vector<const Tensor<double>*> payload;
  for (const auto& p : ck.net.encoder) {
    blocks.push_back(detail::block_entry(p.name, p.value.shape()));
    payload.push_back(&p.value);
  }
  for (const auto& p : ck.net.decoder) {
    blocks.push_back(detail::block_entry(p.name, p.value.shape()));
    payload.push_back(&p.value);
  }
  nlohmann::json header{{"spec", ck.net.spec},
                        {"config", ck.config},
                        {"stage", ck.stage},
                        {"iteration", ck.iteration}};
  if (ck.layer) {
    header["layer"] = {{"n", ck.layer->n}, {"m", ck.layer->m}, {"mode", ck.layer->mode}};
    blocks.push_back(detail::block_entry(ck.layer->coeffs.name, ck.layer->coeffs.value.shape()));
    payload.push_back(&ck.layer->coeffs.value);
  }
  if (ck.embeddings) {
    blocks.push_back(detail::block_entry("embeddings", ck.embeddings->shape()));
    payload.push_back(&*ck.embeddings);
  }
  header["blocks"] = blocks;
  auto os = io::open_out(path);
  io::write_container_header(os, kCheckpointMagic, kCheckpointVersion, header);
  for (const auto* t : payload) io::put_f64(os, t->data());
  if (!os) throw Error("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto is = io::open_in(path);
  const auto header = io::read_container_header(is, kCheckpointMagic, kCheckpointVersion);
  Checkpoint ck;
  try {
    ck.net.spec = header.at("spec").get<NetworkSpec>();
    ck.config = header.at("config").get<TrainConfig>();
    ck.stage = header.at("stage").get<Stage>();
    ck.iteration = header.at("iteration").get<std::size_t>();
    ck.net.spec.validate();
    const auto& blocks = header.at("blocks");
    const std::size_t ne = ck.net.spec.encoder.size(), nd = ck.net.spec.decoder.size();
    const bool has_layer = header.contains("layer");
    if (blocks.size() < ne + nd + (has_layer ? 1 : 0)) throw FormatError("checkpoint: too few parameter blocks");
    std::size_t b = 0;
    auto read_block = [&](const std::string& what) {
      const auto& e = blocks.at(b++);
      const Shape s = detail::read_shape(e);
      Tensor<double> t(s);
      const auto v = io::get_f64(is, t.size(), what);
      std::copy(v.begin(), v.end(), t.data().begin());
      return Parameter<double>(e.at("name").get<std::string>(), std::move(t));
    };
    for (std::size_t i = 0; i < ne; ++i) {
      auto p = read_block("encoder block");
      if (p.value.shape() != ck.net.spec.encoder[i].kernel_shape())
        throw FormatError("checkpoint: encoder block " + std::to_string(i) + " shape does not match spec");
      ck.net.encoder.push_back(std::move(p));
    }
    for (std::size_t i = 0; i < nd; ++i) {
      auto p = read_block("decoder block");
      if (p.value.shape() != ck.net.spec.decoder[i].kernel_shape())
        throw FormatError("checkpoint: decoder block " + std::to_string(i) + " shape does not match spec");
      ck.net.decoder.push_back(std::move(p));
    }
    if (has_layer) {
      const auto& l = header.at("layer");
      const auto n = l.at("n").get<std::size_t>(), m = l.at("m").get<std::size_t>();
      auto layer = l.at("mode").get<SparseCodingMode>() == SparseCodingMode::structured
                       ? SparseCodingLayer<double>::structured(n, m)
                       : SparseCodingLayer<double>::full(n, m);
      auto p = read_block("coefficient block");
      if (p.value.shape() != layer.coeffs.value.shape()) throw FormatError("checkpoint: coefficient block shape");
      layer.coeffs = std::move(p);
      ck.layer = std::move(layer);
    }
    if (b < blocks.size()) {
      auto p = read_block("embeddings block");
      if (p.name != "embeddings" || p.value.shape().size() != 2) throw FormatError("checkpoint: unexpected block " + p.name);
      ck.embeddings = std::move(p.value);
    }
    if (b != blocks.size()) throw FormatError("checkpoint: unexpected trailing blocks");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const InvalidShape& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const InvalidHyperparameter& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes after last block");
  return ck;
}

}  // namespace dsrc
