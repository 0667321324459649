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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "lpkit/experiments.hpp"
#include "lpkit/model_io.hpp"

namespace lpkit {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("lpkit_io_" + std::to_string(::getpid()) + "_" + name);
}

ArtifactMap sample_artifacts() {
  SplitMix64 rng(61);
  const DenseTensor w = random_normal({8, 64}, rng);
  ArtifactMap m;
  m.emplace("dense", w);
  m.emplace("int4", quantize_weight(w, QuantScheme::int4_weight_only(32)));
  m.emplace("int8", quantize_weight(w, QuantScheme::int8_weight_only()));
  m.emplace("fp8", quantize_weight(w, QuantScheme::float8_dynamic(Fp8Granularity::kPerTensor)));
  m.emplace("nf4", quantize_weight(w, QuantScheme::nf4_weight_only(64)));
  m.emplace("s24", compress_2of4(prune_2of4(w)));
  m.emplace("mx4", mx_quantize(w, MxElement::kFp4E2M1));
  m.emplace("mx6", mx_quantize(w, MxElement::kFp6E2M3, 16));
  m.emplace("blocks", block_sparsify(w, 4, 0.5));
  return m;
}

TEST(ModelIo, RoundTripEveryKind) {
  const ArtifactMap m = sample_artifacts();
  const ModelFile back = decode_container(encode_container(ModelFile{m, std::nullopt}));
  ASSERT_EQ(back.tensors.size(), m.size());
  for (const auto& [name, a] : m) {
    const Artifact& b = back.tensors.at(name);
    EXPECT_EQ(a.index(), b.index()) << name;
    EXPECT_TRUE(materialize(a).bit_equal(materialize(b))) << name;
  }
  EXPECT_EQ(std::get<QuantizedTensor>(back.tensors.at("int4")).codes,
            std::get<QuantizedTensor>(m.at("int4")).codes);
}

TEST(ModelIo, DeterministicBytesAndAlignment) {
  const ArtifactMap m = sample_artifacts();
  const auto a = encode_container(ModelFile{m, std::nullopt});
  const auto b = encode_container(ModelFile{m, std::nullopt});
  EXPECT_EQ(a, b);
  EXPECT_EQ(std::string(a.begin(), a.begin() + 4), "AOTN");
  EXPECT_EQ(a.size(), container_size(header_bytes(a), segment_lengths(a)));
}

TEST(ModelIo, GraphRoundTrip) {
  const ModuleGraph fp = make_fixture(16, 64, 2, 3);
  const QuantScheme s = QuantScheme::int8_dynamic_int4_weight(16);
  SplitMix64 rng(62);
  const DenseTensor x = random_normal({4, 64}, rng);
  for (const ModuleGraph& g : {fp, prepare_qat(fp, s), quantize_graph(fp, s)}) {
    const ModelFile back = decode_container(encode_container(ModelFile{{}, g}));
    ASSERT_TRUE(back.graph.has_value());
    EXPECT_TRUE(back.tensors.empty());
    EXPECT_TRUE(back.graph->forward(x).bit_equal(g.forward(x)));
    for (std::size_t i = 0; i < g.layers().size(); ++i) {
      EXPECT_EQ(back.graph->layers()[i].kind, g.layers()[i].kind);
    }
  }
}

TEST(ModelIo, FileSaveLoadAndPayloadFormula) {
  const std::size_t n = 32;
  const std::size_t k = 128;
  const ModuleGraph g = quantize_graph(make_fixture(n, k, 1, 4), QuantScheme::int4_weight_only(64));
  const fs::path p = temp_path("int4.aotn");
  save_model(ModelFile{{}, g}, p);
  std::ifstream f(p, std::ios::binary);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  EXPECT_EQ(payload_bytes(bytes), n * k / 2 + 4 * n * k / 64);
  EXPECT_EQ(fs::file_size(p), container_size(header_bytes(bytes), segment_lengths(bytes)));
  EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
  EXPECT_TRUE(load_model(p).graph->forward(DenseTensor::filled({1, k}, 0.5F))
                  .bit_equal(g.forward(DenseTensor::filled({1, k}, 0.5F))));
  fs::remove(p);
}

std::vector<std::uint8_t> with_header(const std::vector<std::uint8_t>& original, const std::string& from,
                                      const std::string& to) {
  const std::uint64_t h = header_bytes(original);
  std::string header(original.begin() + 16, original.begin() + 16 + static_cast<std::ptrdiff_t>(h));
  const auto at = header.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  header.replace(at, from.size(), to);
  ArtifactMap unused;
  std::vector<std::uint8_t> out(original.begin(), original.begin() + 8);
  const std::uint64_t nh = header.size();
  out.resize(16);
  std::memcpy(out.data() + 8, &nh, 8);
  out.insert(out.end(), header.begin(), header.end());
  out.resize((out.size() + 7) & ~std::size_t{7}, 0);
  const std::size_t payload_at = (16 + h + 7) & ~std::uint64_t{7};
  out.insert(out.end(), original.begin() + static_cast<std::ptrdiff_t>(payload_at), original.end());
  return out;
}

TEST(ModelIo, RejectsCorruptFiles) {
  ArtifactMap m;
  m.emplace("w", quantize_weight(DenseTensor::filled({4, 32}, 1.0F), QuantScheme::int4_weight_only(32)));
  const auto good = encode_container(ModelFile{m, std::nullopt});
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_container(bad_magic), IoError);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(decode_container(bad_version), IoError);
  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_container(truncated), IoError);
  EXPECT_THROW(decode_container(std::vector<std::uint8_t>(good.begin(), good.begin() + 20)), IoError);
  EXPECT_THROW(decode_container(with_header(good, "\"w.scales\"}", "\"w.nowhere\"}")), IoError);
  EXPECT_THROW(decode_container(with_header(good, "\"kind\":\"quantized\"", "\"kind\":\"sparse99\"")), IoError);
  EXPECT_THROW(load_model(temp_path("missing.aotn")), IoError);
}

}  // namespace
}  // namespace lpkit
