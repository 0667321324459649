// Copyright 2026 The lpkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// The "AOTN" tensor container.
//
//   offset 0   magic "AOTN"
//   offset 4   version, u32 little-endian
//   offset 8   header length H, u64 little-endian
//   offset 16  header: H bytes of UTF-8 JSON
//   then       zero padding to an 8-byte boundary (start of the payload area)
//   payload    raw little-endian segments, each starting 8-byte aligned
//
// Header JSON:
//   {"tensors": {name: entry, ...}, "graph": [layer, ...]}   ("graph" optional)
// Every entry has "kind", "shape", and "segments" {segment: {"offset", "length"}}
// with offsets relative to the payload area. Scales and zero points are their
// own dense entries, referenced from the owner's "qparams" and marked with
// "aux_of". See docs/format.md for the per-kind fields.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lpkit/errors.hpp"
#include "lpkit/float8_train.hpp"
#include "lpkit/mx_quant.hpp"
#include "lpkit/qat.hpp"
#include "lpkit/quantized_tensor.hpp"
#include "lpkit/sparsity.hpp"
#include "lpkit/tensor.hpp"

namespace lpkit {

static_assert(std::endian::native == std::endian::little, "the container codec assumes a little-endian host");

inline constexpr char kContainerMagic[4] = {'A', 'O', 'T', 'N'};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerPrefixBytes = 16;

using Artifact = std::variant<DenseTensor, QuantizedTensor, Sparse24Tensor, MxBlockTensor, BlockSparseTensor>;
using ArtifactMap = std::map<std::string, Artifact>;

inline std::string artifact_kind(const Artifact& a) {
  switch (a.index()) {
    case 0: return "dense";
    case 1: return "quantized";
    case 2: return "sparse24";
    case 3: return "mx";
    case 4: return "blocksparse";
    default: return "unknown";
  }
}

/// Logical dense value of any artifact.
inline DenseTensor materialize(const Artifact& a) {
  return std::visit(
      [](const auto& t) -> DenseTensor {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, DenseTensor>) return t;
        else if constexpr (std::is_same_v<T, QuantizedTensor>) return dequantize_tensor(t);
        else if constexpr (std::is_same_v<T, Sparse24Tensor>) return decompress_2of4(t);
        else if constexpr (std::is_same_v<T, MxBlockTensor>) return mx_dequantize(t);
        else return block_densify(t);
      },
      a);
}

inline Shape artifact_shape(const Artifact& a) {
  return std::visit(
      [](const auto& t) -> Shape {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, DenseTensor>) return t.shape();
        else return t.logical_shape;
      },
      a);
}

/// Tensors plus an optional layer graph, as stored in one container file.
struct ModelFile {
  ArtifactMap tensors;
  std::optional<ModuleGraph> graph;
};

namespace detail {

using nlohmann::json;

inline std::size_t align8(std::size_t n) { return (n + 7) & ~std::size_t{7}; }

class PayloadWriter {
 public:
  json add(const void* data, std::size_t length) {
    bytes_.resize(align8(bytes_.size()), 0);
    const std::size_t offset = bytes_.size();
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + length);
    return json{{"offset", offset}, {"length", length}};
  }
  template <typename T>
  json add_vec(const std::vector<T>& v) {
    return add(v.data(), v.size() * sizeof(T));
  }
  [[nodiscard]] const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class PayloadReader {
 public:
  PayloadReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  std::vector<T> read(const json& seg, const std::string& owner, std::size_t expected_count) const {
    const auto offset = seg.at("offset").get<std::size_t>();
    const auto length = seg.at("length").get<std::size_t>();
    if (offset % 8 != 0) throw IoError("segment of '" + owner + "' is not 8-byte aligned");
    if (offset > bytes_.size() || length > bytes_.size() - offset) {
      throw IoError("truncated payload: segment of '" + owner + "' runs past the end of the file");
    }
    if (length != expected_count * sizeof(T)) {
      throw IoError("segment of '" + owner + "' holds " + std::to_string(length) + " bytes, expected " +
                    std::to_string(expected_count * sizeof(T)));
    }
    std::vector<T> out(expected_count);
    if (length > 0) std::memcpy(out.data(), bytes_.data() + offset, length);
    return out;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
};

inline json cfg_to_json(const FakeQuantizeConfig& c) {
  json j{{"bits", c.target_bits}, {"granularity", c.granularity.to_string()}, {"symmetric", c.symmetric}};
  if (c.group_size) j["group_size"] = *c.group_size;
  return j;
}

inline FakeQuantizeConfig cfg_from_json(const json& j) {
  FakeQuantizeConfig c;
  c.target_bits = j.at("bits").get<int>();
  c.granularity = Granularity::parse(j.at("granularity").get<std::string>());
  c.symmetric = j.at("symmetric").get<bool>();
  if (j.contains("group_size")) c.group_size = j.at("group_size").get<std::size_t>();
  c.validate();
  return c;
}

inline void add_scales(json& entry, json& tensors, PayloadWriter& pw, const std::string& name,
                       const std::vector<float>& scales, const std::vector<std::int32_t>* zero_points) {
  const std::string sname = name + ".scales";
  tensors[sname] = json{{"kind", "dense"}, {"dtype", "f32"}, {"shape", {scales.size()}}, {"aux_of", name},
                        {"segments", {{"data", pw.add_vec(scales)}}}};
  entry["qparams"]["scales"] = sname;
  if (zero_points != nullptr) {
    const std::string zname = name + ".zero_points";
    tensors[zname] = json{{"kind", "dense"}, {"dtype", "i32"}, {"shape", {zero_points->size()}},
                          {"aux_of", name}, {"segments", {{"data", pw.add_vec(*zero_points)}}}};
    entry["qparams"]["zero_points"] = zname;
  }
}

inline std::string quantized_dtype(const QuantScheme& s) {
  using Kind = QuantScheme::Kind;
  switch (s.kind) {
    case Kind::kInt4WeightOnly:
    case Kind::kInt8DynamicActivationInt4Weight: return "i4";
    case Kind::kInt8WeightOnly: return "i8";
    case Kind::kNf4WeightOnly: return "nf4";
    default: return "e4m3";
  }
}

inline void write_entry(json& tensors, PayloadWriter& pw, const std::string& name, const Artifact& a) {
  json e{{"kind", artifact_kind(a)}, {"shape", artifact_shape(a)}};
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, DenseTensor>) {
          e["dtype"] = "f32";
          e["segments"]["data"] = pw.add_vec(t.values());
        } else if constexpr (std::is_same_v<T, QuantizedTensor>) {
          e["dtype"] = quantized_dtype(t.scheme);
          e["scheme"] = t.scheme.to_string();
          e["granularity"] = t.qparams.granularity.to_string();
          e["symmetric"] = t.qparams.symmetric;
          e["qmin"] = t.qparams.qmin;
          e["qmax"] = t.qparams.qmax;
          e["bits"] = t.qparams.target_bits;
          if (t.scheme.uses_groups()) e["group_size"] = t.scheme.group_size;
          e["segments"]["codes"] = pw.add_vec(t.codes);
          const bool has_zp = !t.qparams.symmetric;
          add_scales(e, tensors, pw, name, t.qparams.scales, has_zp ? &t.qparams.zero_points : nullptr);
        } else if constexpr (std::is_same_v<T, Sparse24Tensor>) {
          e["dtype"] = "f32";
          e["segments"]["values"] = pw.add_vec(t.values);
          e["segments"]["meta"] = pw.add_vec(t.meta);
        } else if constexpr (std::is_same_v<T, MxBlockTensor>) {
          e["dtype"] = mx_element_name(t.elem);
          e["elem_format"] = mx_element_name(t.elem);
          e["block_size"] = t.block_size;
          e["segments"]["scale_codes"] = pw.add_vec(t.scale_codes);
          e["segments"]["elem_codes"] = pw.add_vec(t.elem_codes);
        } else {
          e["dtype"] = "f32";
          e["block_size"] = t.block_size;
          e["segments"]["mask"] = pw.add_vec(t.mask);
          e["segments"]["payload"] = pw.add_vec(t.payload);
        }
      },
      a);
  tensors[name] = std::move(e);
}

inline json graph_to_json(const ModuleGraph& g) {
  json layers = json::array();
  for (const Layer& l : g.layers()) {
    json j{{"name", l.name}};
    j["type"] = l.type == LayerType::kLinear ? "linear" : l.type == LayerType::kEmbedding ? "embedding" : "relu";
    j["kind"] = l.kind == LayerKind::kStandard        ? "standard"
                : l.kind == LayerKind::kFakeQuantized ? "fake_quantized"
                                                      : "quantized";
    if (l.has_weight()) j["weight"] = l.weight_name();
    if (l.bias) j["bias"] = l.bias_name();
    if (l.activation_cfg) j["activation_cfg"] = cfg_to_json(*l.activation_cfg);
    if (l.weight_cfg) j["weight_cfg"] = cfg_to_json(*l.weight_cfg);
    if (l.qweight) j["scheme"] = l.qweight->scheme.to_string();
    layers.push_back(std::move(j));
  }
  return layers;
}

inline Shape shape_from_json(const json& j) { return j.get<Shape>(); }

inline Artifact read_entry(const std::string& name, const json& e, const json& tensors,
                           const PayloadReader& pr) {
  const std::string kind = e.at("kind").get<std::string>();
  const Shape shape = shape_from_json(e.at("shape"));
  const std::size_t n = shape_numel(shape);
  const json& seg = e.at("segments");
  auto resolve = [&](const std::string& key) -> const json& {
    const std::string ref = e.at("qparams").at(key).get<std::string>();
    if (!tensors.contains(ref)) throw IoError("dangling qparam reference '" + ref + "' in '" + name + "'");
    return tensors.at(ref);
  };
  if (kind == "dense") {
    return DenseTensor(shape, pr.read<float>(seg.at("data"), name, n));
  }
  if (kind == "quantized") {
    QuantizedTensor q;
    q.logical_shape = shape;
    if (shape.size() != 2) throw IoError("quantized tensor '" + name + "' must be 2-D");
    q.scheme = QuantScheme::parse(e.at("scheme").get<std::string>());
    q.codes = pr.read<std::uint8_t>(seg.at("codes"), name, scheme_code_bytes(q.scheme, shape[0], shape[1]));
    q.qparams.granularity = Granularity::parse(e.at("granularity").get<std::string>());
    q.qparams.symmetric = e.at("symmetric").get<bool>();
    q.qparams.qmin = e.at("qmin").get<std::int32_t>();
    q.qparams.qmax = e.at("qmax").get<std::int32_t>();
    q.qparams.target_bits = e.at("bits").get<int>();
    const json& se = resolve("scales");
    const std::size_t units = shape_numel(shape_from_json(se.at("shape")));
    q.qparams.scales = pr.read<float>(se.at("segments").at("data"), name + ".scales", units);
    if (e.at("qparams").contains("zero_points")) {
      const json& ze = resolve("zero_points");
      q.qparams.zero_points = pr.read<std::int32_t>(ze.at("segments").at("data"), name + ".zero_points", units);
    } else {
      q.qparams.zero_points.assign(units, 0);
    }
    return q;
  }
  if (kind == "sparse24") {
    Sparse24Tensor s;
    s.logical_shape = shape;
    if (shape.size() != 2 || shape[1] % 4 != 0) throw IoError("sparse24 tensor '" + name + "' has a bad shape");
    s.values = pr.read<float>(seg.at("values"), name, n / 2);
    s.meta = pr.read<std::uint8_t>(seg.at("meta"), name, (n / 4 + 1) / 2);
    return s;
  }
  if (kind == "mx") {
    MxBlockTensor t;
    t.logical_shape = shape;
    t.elem = parse_mx_element(e.at("elem_format").get<std::string>());
    t.block_size = e.at("block_size").get<std::size_t>();
    if (t.block_size == 0 || n % t.block_size != 0) throw IoError("mx tensor '" + name + "' has a bad block size");
    t.scale_codes = pr.read<std::uint8_t>(seg.at("scale_codes"), name, n / t.block_size);
    t.elem_codes = pr.read<std::uint8_t>(seg.at("elem_codes"), name, t.packed() ? (n + 1) / 2 : n);
    return t;
  }
  if (kind == "blocksparse") {
    BlockSparseTensor b;
    b.logical_shape = shape;
    b.block_size = e.at("block_size").get<std::size_t>();
    if (shape.size() != 2 || b.block_size == 0 || shape[0] % b.block_size || shape[1] % b.block_size) {
      throw IoError("blocksparse tensor '" + name + "' has a bad block size");
    }
    b.mask = pr.read<std::uint8_t>(seg.at("mask"), name, b.block_rows() * b.block_cols());
    b.payload = pr.read<float>(seg.at("payload"), name, b.kept_blocks() * b.block_size * b.block_size);
    return b;
  }
  throw IoError("unknown tensor kind '" + kind + "' for tensor '" + name + "'");
}

inline ModuleGraph graph_from_json(const json& layers, ArtifactMap& tensors) {
  ModuleGraph g;
  auto take_dense = [&](const std::string& n) {
    auto it = tensors.find(n);
    if (it == tensors.end() || !std::holds_alternative<DenseTensor>(it->second)) {
      throw IoError("graph references missing dense tensor '" + n + "'");
    }
    return std::get<DenseTensor>(it->second);
  };
  for (const json& j : layers) {
    const std::string type = j.at("type").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    const std::string name = j.at("name").get<std::string>();
    if (type == "relu") {
      g.add_relu(name);
      continue;
    }
    const std::string wname = j.at("weight").get<std::string>();
    std::optional<DenseTensor> bias;
    if (j.contains("bias")) bias = take_dense(j.at("bias").get<std::string>());
    if (kind == "quantized") {
      auto it = tensors.find(wname);
      if (it == tensors.end() || !std::holds_alternative<QuantizedTensor>(it->second)) {
        throw IoError("graph references missing quantized tensor '" + wname + "'");
      }
      const QuantizedTensor& qw = std::get<QuantizedTensor>(it->second);
      // Build with a placeholder to pass the width checks, then swap in the codes.
      if (type == "linear") {
        g.add_linear(name, DenseTensor(qw.logical_shape), bias);
      } else {
        g.add_embedding(name, DenseTensor(qw.logical_shape));
      }
      Layer& l = g.layers().back();
      l.kind = LayerKind::kQuantized;
      l.qweight = qw;
      l.weight = DenseTensor();
      continue;
    }
    if (type == "linear") {
      g.add_linear(name, take_dense(wname), bias);
    } else if (type == "embedding") {
      g.add_embedding(name, take_dense(wname));
    } else {
      throw IoError("unknown layer type '" + type + "'");
    }
    Layer& l = g.layers().back();
    if (kind == "fake_quantized") {
      l.kind = LayerKind::kFakeQuantized;
      l.weight_cfg = cfg_from_json(j.at("weight_cfg"));
      if (j.contains("activation_cfg")) l.activation_cfg = cfg_from_json(j.at("activation_cfg"));
    } else if (kind != "standard") {
      throw IoError("unknown layer kind '" + kind + "'");
    }
  }
  return g;
}

}  // namespace detail

/// Loose tensors plus every graph weight and bias under its parameter name.
inline ArtifactMap flatten_model(const ModelFile& model) {
  ArtifactMap all = model.tensors;
  if (!model.graph) return all;
  for (const Layer& l : model.graph->layers()) {
    if (!l.has_weight()) continue;
    if (l.qweight) {
      all.insert_or_assign(l.weight_name(), *l.qweight);
    } else {
      all.insert_or_assign(l.weight_name(), l.weight);
    }
    if (l.bias) all.insert_or_assign(l.bias_name(), *l.bias);
  }
  return all;
}

/// Serializes to the container byte image. Names come out sorted, so equal
/// inputs give equal bytes.
inline std::vector<std::uint8_t> encode_container(const ModelFile& model) {
  using detail::json;
  json header;
  header["tensors"] = json::object();
  detail::PayloadWriter pw;
  const ArtifactMap all = flatten_model(model);
  if (model.graph) header["graph"] = detail::graph_to_json(*model.graph);
  for (const auto& [name, a] : all) {
    if (name.ends_with(".scales") || name.ends_with(".zero_points")) {
      if (all.contains(name.substr(0, name.rfind('.')))) {
        throw ConfigError("tensor name '" + name + "' collides with a generated qparam name");
      }
    }
    detail::write_entry(header["tensors"], pw, name, a);
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kContainerPrefixBytes);
  std::memcpy(out.data(), kContainerMagic, 4);
  std::memcpy(out.data() + 4, &kContainerVersion, 4);
  const std::uint64_t hlen = text.size();
  std::memcpy(out.data() + 8, &hlen, 8);
  out.insert(out.end(), text.begin(), text.end());
  out.resize(detail::align8(out.size()), 0);
  out.insert(out.end(), pw.bytes().begin(), pw.bytes().end());
  return out;
}

inline ModelFile decode_container(const std::vector<std::uint8_t>& bytes) {
  using detail::json;
  if (bytes.size() < kContainerPrefixBytes || std::memcmp(bytes.data(), kContainerMagic, 4) != 0) {
    throw IoError("not an AOTN container (bad magic)");
  }
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kContainerVersion) {
    throw IoError("unsupported container version " + std::to_string(version));
  }
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + 8, 8);
  if (hlen > bytes.size() - kContainerPrefixBytes) throw IoError("truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + kContainerPrefixBytes,
                         bytes.begin() + static_cast<std::ptrdiff_t>(kContainerPrefixBytes + hlen));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed header JSON: ") + e.what());
  }
  const std::size_t payload_start = detail::align8(kContainerPrefixBytes + hlen);
  const std::vector<std::uint8_t> payload(
      bytes.begin() + static_cast<std::ptrdiff_t>(std::min(payload_start, bytes.size())), bytes.end());
  const detail::PayloadReader pr(payload);
  ModelFile out;
  try {
    const json& tensors = header.at("tensors");
    for (const auto& [name, e] : tensors.items()) {
      if (e.contains("aux_of")) {
        if (!tensors.contains(e.at("aux_of").get<std::string>())) {
          throw IoError("qparam tensor '" + name + "' has no owner");
        }
        continue;
      }
      out.tensors.emplace(name, detail::read_entry(name, e, tensors, pr));
    }
    if (header.contains("graph")) {
      out.graph = detail::graph_from_json(header.at("graph"), out.tensors);
      for (const Layer& l : out.graph->layers()) {
        if (!l.has_weight()) continue;
        out.tensors.erase(l.weight_name());
        if (l.bias) out.tensors.erase(l.bias_name());
      }
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed header: ") + e.what());
  }
  return out;
}

/// Writes atomically: a sibling temp file is renamed over `path`.
inline void save_model(const ModelFile& model, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_container(model);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + tmp.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline void save_model(const ArtifactMap& tensors, const std::filesystem::path& path) {
  save_model(ModelFile{tensors, std::nullopt}, path);
}

inline ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

/// Segment lengths in payload order.
inline std::vector<std::size_t> segment_lengths(const std::vector<std::uint8_t>& container) {
  decode_container(container);  // validates
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, container.data() + 8, 8);
  const auto header = nlohmann::json::parse(container.begin() + kContainerPrefixBytes,
                                            container.begin() + static_cast<std::ptrdiff_t>(kContainerPrefixBytes + hlen));
  std::vector<std::pair<std::size_t, std::size_t>> segs;
  for (const auto& [name, e] : header.at("tensors").items()) {
    for (const auto& [seg, s] : e.at("segments").items()) {
      segs.emplace_back(s.at("offset").get<std::size_t>(), s.at("length").get<std::size_t>());
    }
  }
  std::sort(segs.begin(), segs.end());
  std::vector<std::size_t> out;
  for (const auto& [offset, length] : segs) out.push_back(length);
  return out;
}

inline std::uint64_t header_bytes(const std::vector<std::uint8_t>& container) {
  if (container.size() < kContainerPrefixBytes) throw IoError("truncated header");
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, container.data() + 8, 8);
  return hlen;
}

/// Sum of segment lengths (no alignment padding).
inline std::size_t payload_bytes(const std::vector<std::uint8_t>& container) {
  std::size_t total = 0;
  for (std::size_t n : segment_lengths(container)) total += n;
  return total;
}

/// File size implied by the layout: prefix + header padded to 8, then every
/// segment but the last padded to 8.
inline std::size_t container_size(std::size_t header_len, const std::vector<std::size_t>& segments) {
  std::size_t total = detail::align8(kContainerPrefixBytes + header_len);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    total += i + 1 == segments.size() ? segments[i] : detail::align8(segments[i]);
  }
  return total;
}

}  // namespace lpkit
